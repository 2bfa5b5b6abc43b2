//! Human–model consistency statistics: trial ingestion, per-image logits,
//! split-half reliability ceiling, explained variance, partial correlation
//! and bootstrap comparison of models.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plot;
use crate::rng::stream;

/// Trials answered faster than this are treated as unreliable.
pub const RT_FLOOR_MS: f64 = 450.0;
pub const MIN_BOOTSTRAP_ITERS: usize = 1000;
/// Cap on consecutive degenerate resamples before giving up.
const DEGENERATE_LIMIT: usize = 1000;

pub const TRIAL_COLUMNS: [&str; 7] =
    ["participant_id", "image_id", "difficulty", "response", "correct", "rt_ms", "rt_window_ms"];
pub const SCORE_COLUMNS: [&str; 3] = ["image_id", "logit", "correct"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Same,
    Different,
}

impl std::str::FromStr for Response {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "same" => Ok(Response::Same),
            "different" => Ok(Response::Different),
            other => Err(Error::Invalid(format!("response must be same|different, got `{other}`"))),
        }
    }
}

impl Response {
    pub fn name(self) -> &'static str {
        match self {
            Response::Same => "same",
            Response::Different => "different",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Response::Same => Response::Different,
            Response::Different => Response::Same,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant_id: String,
    pub image_id: String,
    pub difficulty: String,
    pub response: Response,
    pub correct: bool,
    pub rt_ms: f64,
    pub rt_window_ms: f64,
}

/// Per-image model output, as written by evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub image_id: String,
    pub logit: f64,
    pub correct: bool,
}

/// Human accuracy on one image over its retained raters.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HumanImage {
    pub image_id: String,
    pub raters: usize,
    pub accuracy: f64,
    pub logit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageScore {
    pub image_id: String,
    pub human_accuracy: f64,
    pub human_logit: f64,
    pub model_logit: f64,
    pub model_correct: bool,
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads a headed CSV, mapping required columns by name. Each row is handed
/// to `row` together with the column positions; errors carry line numbers.
fn read_table<T>(
    reader: impl Read,
    origin: &str,
    columns: &[&str],
    mut row: impl FnMut(&csv::StringRecord, &[usize]) -> std::result::Result<T, String>,
) -> Result<Vec<T>> {
    let parse_err = |line: usize, msg: String| Error::Parse { path: origin.to_string(), line, msg };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let mut pos = Vec::with_capacity(columns.len());
    for col in columns {
        match headers.iter().position(|h| h == *col) {
            Some(i) => pos.push(i),
            None => return Err(parse_err(1, format!("missing column `{col}`"))),
        }
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if let Some(&missing) = pos.iter().find(|&&i| i >= rec.len()) {
            return Err(parse_err(line, format!("row has no value for `{}`", headers.get(missing).unwrap_or("?"))));
        }
        out.push(row(&rec, &pos).map_err(|m| parse_err(line, m))?);
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> std::result::Result<T, String> {
    let raw = &rec[i];
    raw.parse().map_err(|_| format!("bad value `{raw}` for `{name}`"))
}

pub fn parse_trials(reader: impl Read, origin: &str) -> Result<Vec<TrialRecord>> {
    read_table(reader, origin, &TRIAL_COLUMNS, |rec, p| {
        let rt_ms: f64 = field(rec, p[5], "rt_ms")?;
        if !(rt_ms >= 0.0) {
            return Err(format!("rt_ms must be non-negative, got {rt_ms}"));
        }
        Ok(TrialRecord {
            participant_id: rec[p[0]].to_string(),
            image_id: rec[p[1]].to_string(),
            difficulty: rec[p[2]].to_string(),
            response: rec[p[3]].parse().map_err(|e: Error| e.to_string())?,
            correct: parse_bool(&rec[p[4]]).ok_or_else(|| format!("bad value `{}` for `correct`", &rec[p[4]]))?,
            rt_ms,
            rt_window_ms: field(rec, p[6], "rt_window_ms")?,
        })
    })
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trials(f, &path.display().to_string())
}

pub fn write_trials(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    w.write_record(TRIAL_COLUMNS).map_err(csv_err)?;
    for t in trials {
        w.write_record([
            t.participant_id.clone(),
            t.image_id.clone(),
            t.difficulty.clone(),
            t.response.name().to_string(),
            (t.correct as u8).to_string(),
            t.rt_ms.to_string(),
            t.rt_window_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_model_scores(reader: impl Read, origin: &str) -> Result<Vec<ModelScore>> {
    read_table(reader, origin, &SCORE_COLUMNS, |rec, p| {
        let logit: f64 = field(rec, p[1], "logit")?;
        if !logit.is_finite() {
            return Err(format!("logit must be finite, got {logit}"));
        }
        Ok(ModelScore {
            image_id: rec[p[0]].to_string(),
            logit,
            correct: parse_bool(&rec[p[2]]).ok_or_else(|| format!("bad value `{}` for `correct`", &rec[p[2]]))?,
        })
    })
}

pub fn read_model_scores(path: &Path) -> Result<Vec<ModelScore>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_model_scores(f, &path.display().to_string())
}

pub fn write_model_scores(path: &Path, scores: &[ModelScore]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Invalid(format!("{}: {e}", path.display()));
    w.write_record(SCORE_COLUMNS).map_err(csv_err)?;
    for s in scores {
        w.write_record([s.image_id.clone(), format!("{:?}", s.logit), (s.correct as u8).to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Drops trials answered in under [`RT_FLOOR_MS`].
pub fn filter_trials(trials: &[TrialRecord]) -> Vec<TrialRecord> {
    trials.iter().filter(|t| t.rt_ms >= RT_FLOOR_MS).cloned().collect()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logit of an accuracy over `n` raters, clamped half a count away from 0
/// and 1. `None` when there are no raters.
pub fn human_logit(accuracy: f64, n: usize) -> Option<f64> {
    if n == 0 {
        return None;
    }
    let eps = 1.0 / (2.0 * n as f64);
    Some(logit(accuracy.clamp(eps, 1.0 - eps)))
}

/// Correctness of every retained rater, grouped by image.
pub fn ratings_by_image(trials: &[TrialRecord]) -> BTreeMap<String, Vec<bool>> {
    let mut map: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for t in trials {
        map.entry(t.image_id.clone()).or_default().push(t.correct);
    }
    map
}

/// Per-image human accuracy and logit; images with fewer than two raters
/// are left out.
pub fn human_scores(trials: &[TrialRecord]) -> Vec<HumanImage> {
    ratings_by_image(trials)
        .into_iter()
        .filter(|(_, r)| r.len() >= 2)
        .map(|(image_id, r)| {
            let accuracy = r.iter().filter(|&&c| c).count() as f64 / r.len() as f64;
            HumanImage { logit: human_logit(accuracy, r.len()).unwrap_or(0.0), raters: r.len(), accuracy, image_id }
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_brown(r: f64) -> f64 {
    2.0 * r / (1.0 + r)
}

/// Linear-interpolated percentile (0–100) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct Ceiling {
    pub value: f64,
    pub repeats: usize,
    pub percentile: f64,
    /// Repeats redrawn because one half had constant accuracy.
    pub discarded: usize,
    pub mean: f64,
}

/// Split-half reliability: per repeat, raters of every image are shuffled
/// into halves of ⌈n/2⌉ and ⌊n/2⌋, half accuracies are correlated across
/// images and stepped up with Spearman–Brown. Returns the requested
/// percentile of the corrected values.
pub fn splithalf_ceiling(trials: &[TrialRecord], repeats: usize, pct: f64, seed: u64) -> Result<Ceiling> {
    if repeats == 0 {
        return Err(Error::Invalid("ceiling needs at least one repeat".into()));
    }
    let images: Vec<Vec<bool>> = ratings_by_image(trials).into_values().collect();
    if images.len() < 3 {
        return Err(Error::Invalid(format!("ceiling needs at least 3 images, got {}", images.len())));
    }
    if let Some(r) = images.iter().find(|r| r.len() < 2) {
        return Err(Error::Invalid(format!("every image needs at least 2 raters, found one with {}", r.len())));
    }
    let mut corrected = Vec::with_capacity(repeats);
    let mut discarded = 0;
    for rep in 0..repeats {
        let mut attempt = 0u64;
        loop {
            let mut rng = stream(seed, &[rep as u64, attempt]);
            let (mut a, mut b) = (Vec::with_capacity(images.len()), Vec::with_capacity(images.len()));
            for raters in &images {
                let mut r = raters.clone();
                r.shuffle(&mut rng);
                let half = r.len().div_ceil(2);
                let acc = |s: &[bool]| s.iter().filter(|&&c| c).count() as f64 / s.len() as f64;
                a.push(acc(&r[..half]));
                b.push(acc(&r[half..]));
            }
            if let Some(r) = pearson(&a, &b) {
                corrected.push(spearman_brown(r));
                break;
            }
            discarded += 1;
            attempt += 1;
            if attempt as usize >= DEGENERATE_LIMIT {
                return Err(Error::Invalid("split halves are constant across images".into()));
            }
        }
    }
    let mean = corrected.iter().sum::<f64>() / corrected.len() as f64;
    Ok(Ceiling { value: percentile(&corrected, pct), repeats, percentile: pct, discarded, mean })
}

/// Full-panel reliability expected for raters who answer image `i`
/// correctly with probability `p[i]`: between-image variance over total
/// variance of an `n`-rater mean.
pub fn analytic_reliability(p: &[f64], n: usize) -> f64 {
    let m = p.len() as f64;
    let mean = p.iter().sum::<f64>() / m;
    let between = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    let noise = p.iter().map(|v| v * (1.0 - v)).sum::<f64>() / m;
    between / (between + noise / n as f64)
}

fn check_pairs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!("unpaired inputs: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::Invalid(format!("need at least 3 paired images, got {}", a.len())));
    }
    Ok(())
}

/// Model–human logit correlation as a fraction of the human ceiling.
pub fn explained_variance(model: &[f64], human: &[f64], ceiling: f64) -> Result<f64> {
    check_pairs(model, human)?;
    if !(ceiling > 0.0) {
        return Err(Error::Invalid(format!("ceiling must be positive, got {ceiling}")));
    }
    let r = pearson(model, human).ok_or_else(|| Error::Invalid("constant logits".into()))?;
    Ok(r / ceiling)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PartialCorrelation {
    pub r: f64,
    /// The control was constant, so `r` is the plain correlation.
    pub fallback: bool,
}

fn residuals(y: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    x.iter().zip(y).map(|(a, b)| (b - my) - slope * (a - mx)).collect()
}

/// Correlation of model and human logits after regressing `control` out of
/// both.
pub fn partial_correlation(model: &[f64], human: &[f64], control: &[f64]) -> Result<PartialCorrelation> {
    check_pairs(model, human)?;
    check_pairs(model, control)?;
    let c0 = control[0];
    if control.iter().all(|&c| c == c0) {
        let r = pearson(model, human).ok_or_else(|| Error::Invalid("constant logits".into()))?;
        return Ok(PartialCorrelation { r, fallback: true });
    }
    let (rm, rh) = (residuals(model, control), residuals(human, control));
    // A variable fully explained by the control leaves nothing to correlate.
    let tiny = |res: &[f64], orig: &[f64]| {
        let scale = orig.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        res.iter().all(|v| v.abs() <= 1e-12 * scale)
    };
    if tiny(&rm, model) || tiny(&rh, human) {
        return Ok(PartialCorrelation { r: 0.0, fallback: false });
    }
    let r = pearson(&rm, &rh).unwrap_or(0.0);
    Ok(PartialCorrelation { r, fallback: false })
}

/// Two-sided bootstrap p-value for "models A and B correlate equally with
/// humans". Images are resampled with replacement; the statistic is
/// r(A, human) − r(B, human).
pub fn bootstrap_compare(human: &[f64], a: &[f64], b: &[f64], iters: usize, seed: u64) -> Result<f64> {
    if iters < MIN_BOOTSTRAP_ITERS {
        return Err(Error::Invalid(format!("bootstrap needs at least {MIN_BOOTSTRAP_ITERS} iterations, got {iters}")));
    }
    check_pairs(human, a)?;
    check_pairs(human, b)?;
    let n = human.len();
    let (mut below, mut above) = (0usize, 0usize);
    let (mut h, mut xa, mut xb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for it in 0..iters {
        let mut attempt = 0u64;
        let d = loop {
            let mut rng = stream(seed, &[it as u64, attempt]);
            for k in 0..n {
                let j = rng.random_range(0..n);
                h[k] = human[j];
                xa[k] = a[j];
                xb[k] = b[j];
            }
            if let (Some(ra), Some(rb)) = (pearson(&xa, &h), pearson(&xb, &h)) {
                break ra - rb;
            }
            attempt += 1;
            if attempt as usize >= DEGENERATE_LIMIT {
                return Err(Error::Invalid("bootstrap resamples are constant".into()));
            }
        };
        if d <= 0.0 {
            below += 1;
        }
        if d >= 0.0 {
            above += 1;
        }
    }
    let tail = below.min(above) as f64 / iters as f64;
    Ok((2.0 * tail).min(1.0))
}

/// One Bernoulli trial per rater per image; image `i` is `img{i:05}` and
/// rater `j` is `r{j:03}`. Response times are drawn above the RT floor.
pub fn simulate_raters(p: &[f64], raters: usize, seed: u64) -> Vec<TrialRecord> {
    let mut out = Vec::with_capacity(p.len() * raters);
    for (i, &pi) in p.iter().enumerate() {
        let mut rng = stream(seed, &[i as u64]);
        let truth = if i % 2 == 0 { Response::Same } else { Response::Different };
        for j in 0..raters {
            let correct = rng.random::<f64>() < pi;
            out.push(TrialRecord {
                participant_id: format!("r{j:03}"),
                image_id: format!("img{i:05}"),
                difficulty: "simulated".into(),
                response: if correct { truth } else { truth.flipped() },
                correct,
                rt_ms: rng.random_range(RT_FLOOR_MS..2000.0).round(),
                rt_window_ms: 2000.0,
            });
        }
    }
    out
}

/// Joins human and model scores on image id; unmatched images are dropped.
pub fn pair_scores(human: &[HumanImage], model: &[ModelScore]) -> Vec<ImageScore> {
    let by_id: BTreeMap<&str, &ModelScore> = model.iter().map(|m| (m.image_id.as_str(), m)).collect();
    human
        .iter()
        .filter_map(|h| {
            by_id.get(h.image_id.as_str()).map(|m| ImageScore {
                image_id: h.image_id.clone(),
                human_accuracy: h.accuracy,
                human_logit: h.logit,
                model_logit: m.logit,
                model_correct: m.correct,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    pub repeats: usize,
    pub percentile: f64,
    pub bootstrap_iters: usize,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { repeats: 1000, percentile: 95.0, bootstrap_iters: 10_000, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelConsistency {
    pub name: String,
    pub images: usize,
    pub accuracy: f64,
    pub correlation: f64,
    pub partial_correlation: f64,
    pub partial_fallback: bool,
    pub explained_variance: Option<f64>,
    pub partial_explained_variance: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub images: usize,
    pub p_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyReport {
    pub trials: usize,
    pub dropped_fast: usize,
    pub images: usize,
    pub ceiling: Ceiling,
    pub models: Vec<ModelConsistency>,
    pub comparisons: Vec<Comparison>,
}

/// Runs the whole pipeline on raw trials and any number of named models.
pub fn analyze(trials: &[TrialRecord], models: &[(String, Vec<ModelScore>)], opts: &AnalysisOptions) -> Result<ConsistencyReport> {
    let kept = filter_trials(trials);
    let humans = human_scores(&kept);
    let rated: std::collections::BTreeSet<&str> = humans.iter().map(|h| h.image_id.as_str()).collect();
    let usable: Vec<TrialRecord> = kept.iter().filter(|t| rated.contains(t.image_id.as_str())).cloned().collect();
    let ceiling = splithalf_ceiling(&usable, opts.repeats, opts.percentile, opts.seed)?;
    let ok_ceiling = ceiling.value > 0.0;

    let mut paired = Vec::new();
    let mut out = Vec::new();
    for (name, scores) in models {
        let p = pair_scores(&humans, scores);
        let m: Vec<f64> = p.iter().map(|s| s.model_logit).collect();
        let h: Vec<f64> = p.iter().map(|s| s.human_logit).collect();
        let c: Vec<f64> = p.iter().map(|s| s.model_correct as u8 as f64).collect();
        check_pairs(&m, &h).map_err(|e| Error::Invalid(format!("model {name}: {e}")))?;
        let r = pearson(&m, &h).ok_or_else(|| Error::Invalid(format!("model {name}: constant logits")))?;
        let pc = partial_correlation(&m, &h, &c)?;
        out.push(ModelConsistency {
            name: name.clone(),
            images: p.len(),
            accuracy: c.iter().sum::<f64>() / c.len() as f64,
            correlation: r,
            partial_correlation: pc.r,
            partial_fallback: pc.fallback,
            explained_variance: ok_ceiling.then(|| r / ceiling.value),
            partial_explained_variance: ok_ceiling.then(|| pc.r / ceiling.value),
        });
        paired.push(p);
    }

    let mut comparisons = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            let bj: BTreeMap<&str, f64> = paired[j].iter().map(|s| (s.image_id.as_str(), s.model_logit)).collect();
            let (mut h, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
            for s in &paired[i] {
                if let Some(&v) = bj.get(s.image_id.as_str()) {
                    h.push(s.human_logit);
                    a.push(s.model_logit);
                    b.push(v);
                }
            }
            let seed = crate::rng::derive_seed(opts.seed, &[1, i as u64, j as u64]);
            let p_value = bootstrap_compare(&h, &a, &b, opts.bootstrap_iters, seed)?;
            comparisons.push(Comparison { a: models[i].0.clone(), b: models[j].0.clone(), images: h.len(), p_value });
        }
    }

    Ok(ConsistencyReport {
        trials: trials.len(),
        dropped_fast: trials.len() - kept.len(),
        images: humans.len(),
        ceiling,
        models: out,
        comparisons,
    })
}

impl ConsistencyReport {
    /// Human-readable summary; each model line reads
    /// `name: explained/partial` as fractions of the ceiling.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "trials: {} ({} dropped under {} ms)\nimages: {}\nceiling: {:.3} ({}th percentile of {} split-half repeats, mean {:.3})\n",
            self.trials, self.dropped_fast, RT_FLOOR_MS, self.images, self.ceiling.value, self.ceiling.percentile,
            self.ceiling.repeats, self.ceiling.mean
        );
        for m in &self.models {
            match (m.explained_variance, m.partial_explained_variance) {
                (Some(ev), Some(pev)) => s += &format!("{}: {ev:.3}/{pev:.3}", m.name),
                _ => s += &format!("{}: n/a (ceiling not positive)", m.name),
            }
            s += &format!(
                "  (r = {:.3}, partial r = {:.3}{}, accuracy = {:.3}, images = {})\n",
                m.correlation,
                m.partial_correlation,
                if m.partial_fallback { " [constant control]" } else { "" },
                m.accuracy,
                m.images
            );
        }
        for c in &self.comparisons {
            s += &format!("{} vs {}: p = {:.4} over {} images\n", c.a, c.b, c.p_value, c.images);
        }
        s
    }

    pub fn plot(&self) -> plot::Canvas {
        let groups: Vec<String> = self.models.iter().map(|m| m.name.clone()).collect();
        let series = vec!["explained".to_string(), "partial".to_string()];
        let values = vec![
            self.models.iter().map(|m| m.explained_variance.unwrap_or(f64::NAN)).collect(),
            self.models.iter().map(|m| m.partial_explained_variance.unwrap_or(f64::NAN)).collect(),
        ];
        plot::grouped_bars("CONSISTENCY / CEILING", &groups, &series, &values, 1.0, Some((1.0, "CEILING")))
    }

    /// Writes `report.json`, `report.txt` and `consistency.png` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("report.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        let txt = dir.join("report.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        self.plot().save(&dir.join("consistency.png"))
    }
}
