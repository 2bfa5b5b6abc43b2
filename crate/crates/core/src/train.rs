//! Training loop with early stopping, the learning-rate × seed sweep,
//! evaluation and the straining table.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::analysis::ModelScore;
use crate::arch::{ArchitectureConfig, Model, Task};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::plot;
use crate::rng::{derive_seed, stream};
use crate::tensor::{AdamConfig, AdamState, BnMode, Real, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rates: Vec<f64>,
    pub seeds: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Master seed; run `k` of a sweep uses the stream derived from it.
    pub seed: u64,
    pub eval_batch: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rates: vec![1e-3, 1e-4, 1e-5, 1e-6],
            seeds: 5,
            patience: 10,
            max_epochs: 48,
            seed: 0,
            eval_batch: 64,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience >= self.max_epochs {
            return Err(Error::Invalid(format!("patience {} must be below max epochs {}", self.patience, self.max_epochs)));
        }
        if self.batch_size == 0 || self.eval_batch == 0 {
            return Err(Error::Invalid("batch sizes must be positive".into()));
        }
        if self.learning_rates.is_empty() || self.learning_rates.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::Invalid("learning rates must be positive and non-empty".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Invalid("need at least one seed".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Patience,
    Max,
}

/// Stops after `patience` consecutive epochs without a strict improvement
/// of the best validation loss, or at `max_epochs`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    max_epochs: usize,
    epoch: usize,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, max_epochs: usize) -> Self {
        EarlyStopping { patience, max_epochs, epoch: 0, best: f64::INFINITY, stale: 0 }
    }

    /// Records one epoch's validation loss; returns whether it improved and
    /// the reason to stop, if any.
    pub fn observe(&mut self, val_loss: f64) -> (bool, Option<StopReason>) {
        self.epoch += 1;
        let improved = val_loss < self.best;
        if improved {
            self.best = val_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        let stop = if self.stale >= self.patience {
            Some(StopReason::Patience)
        } else if self.epoch >= self.max_epochs {
            Some(StopReason::Max)
        } else {
            None
        };
        (improved, stop)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy or pixel f1 on the training batches, in train mode.
    pub train_metric: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub val_loss_improved: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunResult {
    pub lr: f64,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    /// Every minibatch loss in order, for bit-exact reproducibility checks.
    pub batch_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub stop: StopReason,
    pub checkpoint: Option<PathBuf>,
    pub wall_seconds: f64,
}

fn metric_counts(task: Task, logits: &[f64], targets: &[f64]) -> [usize; 3] {
    // classification: [correct, total, _]; segmentation: [tp, fp, fn]
    let mut c = [0usize; 3];
    for (&z, &t) in logits.iter().zip(targets) {
        let pred = z > 0.0;
        let truth = t > 0.5;
        match task {
            Task::Classification => {
                c[0] += (pred == truth) as usize;
                c[1] += 1;
            }
            Task::Segmentation => match (pred, truth) {
                (true, true) => c[0] += 1,
                (true, false) => c[1] += 1,
                (false, true) => c[2] += 1,
                _ => {}
            },
        }
    }
    c
}

fn metric_value(task: Task, c: [usize; 3]) -> f64 {
    match task {
        Task::Classification => c[0] as f64 / c[1].max(1) as f64,
        Task::Segmentation => f1_from_counts(c[0], c[1], c[2]),
    }
}

/// `2tp / (2tp + fp + fn)`; 1 when there is nothing to find and nothing
/// was predicted.
pub fn f1_from_counts(tp: usize, fp: usize, fneg: usize) -> f64 {
    let d = 2 * tp + fp + fneg;
    if d == 0 {
        1.0
    } else {
        2.0 * tp as f64 / d as f64
    }
}

/// Pixel f1 of thresholded logits against a binary mask.
pub fn pixel_f1(logits: &[f64], mask: &[u8]) -> f64 {
    let t: Vec<f64> = mask.iter().map(|&m| m as f64).collect();
    let c = metric_counts(Task::Segmentation, logits, &t);
    f1_from_counts(c[0], c[1], c[2])
}

fn check_task<R>(model: &Model<R>, data: &Dataset) -> Result<()> {
    let seg = model.cfg.task == Task::Segmentation;
    if seg != data.segmentation {
        return Err(Error::Invalid(format!(
            "model task is {:?} but dataset is {}",
            model.cfg.task,
            if data.segmentation { "segmentation" } else { "classification" }
        )));
    }
    if data.size != model.cfg.image_size {
        return Err(Error::Invalid(format!("model expects {} px images, dataset has {}", model.cfg.image_size, data.size)));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct Evaluation {
    pub task: Task,
    pub images: usize,
    pub loss: f64,
    /// Accuracy at logit 0 (classification) or pixel f1 at probability 0.5
    /// (segmentation), pooled over the split.
    pub metric: f64,
    /// Per image: the logit and whether it was right. For segmentation the
    /// logit is the mean over target pixels and "right" means f1 > 0.6.
    pub scores: Vec<ModelScore>,
    /// Per-image f1 (segmentation only).
    pub image_f1: Vec<f64>,
}

/// Pixel f1 above which a segmentation counts as a success.
pub const SEGMENTATION_SUCCESS_F1: f64 = 0.6;

/// Eval-mode pass over a whole split.
pub fn evaluate<R: Real>(model: &mut Model<R>, data: &Dataset, batch: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty split".into()));
    }
    check_task(model, data)?;
    let task = model.cfg.task;
    let per = if task == Task::Segmentation { data.size * data.size } else { 1 };
    let positions: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut counts) = (0.0, [0usize; 3]);
    let (mut scores, mut image_f1) = (Vec::with_capacity(data.len()), Vec::new());
    for chunk in positions.chunks(batch.max(1)) {
        let (x, y) = data.batch::<R>(chunk);
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, false);
        let xv = tape.constant(x);
        let (logits, _) = model.forward(&mut tape, &bound, xv, BnMode::Eval, false)?;
        let loss = model.loss(&mut tape, logits, &y)?;
        loss_sum += tape.value(loss).item().as_f64() * chunk.len() as f64;
        let z: Vec<f64> = tape.value(logits).data().iter().map(|v| v.as_f64()).collect();
        let t: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
        let c = metric_counts(task, &z, &t);
        for k in 0..3 {
            counts[k] += c[k];
        }
        for (j, &p) in chunk.iter().enumerate() {
            let (zi, ti) = (&z[j * per..(j + 1) * per], &t[j * per..(j + 1) * per]);
            let image_id = format!("{:06}", data.indices[p]);
            match task {
                Task::Classification => {
                    scores.push(ModelScore { image_id, logit: zi[0], correct: (zi[0] > 0.0) == (ti[0] > 0.5) })
                }
                Task::Segmentation => {
                    let c = metric_counts(task, zi, ti);
                    let f1 = f1_from_counts(c[0], c[1], c[2]);
                    let on: Vec<f64> = zi.iter().zip(ti).filter(|(_, &t)| t > 0.5).map(|(&z, _)| z).collect();
                    let logit = if on.is_empty() { 0.0 } else { on.iter().sum::<f64>() / on.len() as f64 };
                    scores.push(ModelScore { image_id, logit, correct: f1 > SEGMENTATION_SUCCESS_F1 });
                    image_f1.push(f1);
                }
            }
        }
    }
    Ok(Evaluation { task, images: data.len(), loss: loss_sum / data.len() as f64, metric: metric_value(task, counts), scores, image_f1 })
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged { epoch, batch, msg: format!("non-finite value in {op}") },
        other => other,
    }
}

fn write_json_line(path: &Path, value: &impl Serialize) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", serde_json::to_string(value)?).map_err(|e| Error::io(path, e))
}

/// Trains `model` in place with one learning rate. Batch order comes from
/// `seed`. On return the model holds the weights of the epoch with the best
/// validation metric. With a run directory, `metrics.jsonl`, the `best/`
/// checkpoint and `report.json` are written there.
pub fn train<R: Real>(
    model: &mut Model<R>,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    lr: f64,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<RunResult> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Invalid("empty training split".into()));
    }
    check_task(model, train_set)?;
    check_task(model, val_set)?;
    let started = Instant::now();
    let task = model.cfg.task;
    let metrics_path = run_dir.map(|d| d.join("metrics.jsonl"));
    if let Some(d) = run_dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let snapshot = serde_json::json!({ "architecture": model.cfg, "train": cfg, "lr": lr, "seed": seed });
        let p = d.join("config.json");
        std::fs::write(&p, serde_json::to_string_pretty(&snapshot)?).map_err(|e| Error::io(&p, e))?;
        if let Some(m) = &metrics_path {
            let _ = std::fs::remove_file(m);
        }
    }

    let mut adam = AdamState::new(AdamConfig { lr, ..cfg.adam });
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.max_epochs);
    let mut epochs = Vec::new();
    let mut batch_losses = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<R>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let stop = loop {
        let epoch = epochs.len() + 1;
        order.sort_unstable();
        order.shuffle(&mut stream(seed, &[epoch as u64]));
        let (mut loss_sum, mut counts) = (0.0, [0usize; 3]);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train_set.batch::<R>(chunk);
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, true);
            let xv = tape.constant(x);
            let (logits, _) = model.forward(&mut tape, &bound, xv, BnMode::Train, false).map_err(|e| diverged(epoch, b, e))?;
            let loss = model.loss(&mut tape, logits, &y).map_err(|e| diverged(epoch, b, e))?;
            let lv = tape.value(loss).item().as_f64();
            if !lv.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, msg: format!("loss is {lv}") });
            }
            let z: Vec<f64> = tape.value(logits).data().iter().map(|v| v.as_f64()).collect();
            let t: Vec<f64> = y.data().iter().map(|v| v.as_f64()).collect();
            let c = metric_counts(task, &z, &t);
            for k in 0..3 {
                counts[k] += c[k];
            }
            let grads = tape.backward(loss).map_err(|e| diverged(epoch, b, e))?;
            model.store.adam_step(&mut adam, &bound, &grads)?;
            loss_sum += lv * chunk.len() as f64;
            batch_losses.push(lv);
        }
        let val = evaluate(model, val_set, cfg.eval_batch).map_err(|e| diverged(epoch, 0, e))?;
        let (improved, stop) = stopper.observe(val.loss);
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_metric: metric_value(task, counts),
            val_loss: val.loss,
            val_metric: val.metric,
            val_loss_improved: improved,
        };
        if best.as_ref().is_none_or(|(_, v, _)| m.val_metric > *v) {
            best = Some((epoch, m.val_metric, model.store.clone()));
        }
        if let Some(p) = &metrics_path {
            write_json_line(p, &m)?;
        }
        epochs.push(m);
        if let Some(s) = stop {
            break s;
        }
    };

    let (best_epoch, best_val_metric, store) = best.expect("at least one epoch ran");
    model.store = store;
    let checkpoint = match run_dir {
        Some(d) => {
            let p = d.join("best");
            model.save(&p)?;
            Some(p)
        }
        None => None,
    };
    let result = RunResult {
        lr,
        seed,
        epochs,
        batch_losses,
        best_epoch,
        best_val_metric,
        stop,
        checkpoint,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    if let Some(d) = run_dir {
        let p = d.join("report.json");
        std::fs::write(&p, serde_json::to_string_pretty(&result)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(result)
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepCell {
    pub lr: f64,
    pub seed: u64,
    pub dir: Option<PathBuf>,
    pub result: Option<RunResult>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Cell with the highest best-epoch validation metric (earliest on ties).
    pub best: Option<usize>,
}

impl SweepResult {
    pub fn best_cell(&self) -> Option<&SweepCell> {
        self.best.map(|i| &self.cells[i])
    }

    pub fn best_metric(&self) -> Option<f64> {
        self.best_cell().and_then(|c| c.result.as_ref()).map(|r| r.best_val_metric)
    }
}

pub fn run_dir_name(lr: f64, seed: u64) -> String {
    format!("lr{lr:e}_seed{seed}")
}

/// Weight-initialization seed of sweep run `run` under master seed `seed`.
pub fn init_seed(master: u64, run: u64) -> u64 {
    derive_seed(master, &[0xA5, run])
}

/// Batch-order seed of sweep run `run` under master seed `seed`.
pub fn train_seed(master: u64, run: u64) -> u64 {
    derive_seed(master, &[0x5E, run])
}

/// Trains every learning rate × seed cell. Failed runs are recorded and do
/// not stop the grid. Cells are distributed over `workers` threads; results
/// do not depend on the worker count.
pub fn sweep<R: Real>(
    arch: &ArchitectureConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    root: Option<&Path>,
    workers: usize,
) -> Result<SweepResult> {
    cfg.validate()?;
    arch.validate()?;
    let grid: Vec<(f64, u64)> =
        cfg.learning_rates.iter().flat_map(|&lr| (0..cfg.seeds as u64).map(move |s| (lr, s))).collect();
    let workers = workers.clamp(1, grid.len());
    let run_cell = |&(lr, s): &(f64, u64)| -> SweepCell {
        let dir = root.map(|r| r.join(run_dir_name(lr, s)));
        let outcome = Model::<R>::new(arch.clone(), init_seed(cfg.seed, s)).and_then(|mut m| {
            train(&mut m, train_set, val_set, cfg, lr, train_seed(cfg.seed, s), dir.as_deref())
        });
        match outcome {
            Ok(r) => SweepCell { lr, seed: s, dir, result: Some(r), error: None },
            Err(e) => SweepCell { lr, seed: s, dir, result: None, error: Some(e.to_string()) },
        }
    };
    let mut cells: Vec<Option<SweepCell>> = vec![None; grid.len()];
    if workers == 1 {
        for (i, g) in grid.iter().enumerate() {
            cells[i] = Some(run_cell(g));
        }
    } else {
        let done: Vec<Vec<(usize, SweepCell)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let grid = &grid;
                    let run_cell = &run_cell;
                    scope.spawn(move || grid.iter().enumerate().skip(w).step_by(workers).map(|(i, g)| (i, run_cell(g))).collect())
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        });
        for (i, c) in done.into_iter().flatten() {
            cells[i] = Some(c);
        }
    }
    let cells: Vec<SweepCell> = cells.into_iter().map(|c| c.expect("every cell ran")).collect();
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate() {
        if let Some(r) = &c.result {
            if best.is_none_or(|b| r.best_val_metric > cells[b].result.as_ref().unwrap().best_val_metric) {
                best = Some(i);
            }
        }
    }
    let out = SweepResult { cells, best };
    if let Some(r) = root {
        std::fs::create_dir_all(r).map_err(|e| Error::io(r, e))?;
        let p = r.join("sweep.json");
        std::fs::write(&p, serde_json::to_string_pretty(&out)?).map_err(|e| Error::io(&p, e))?;
    }
    Ok(out)
}

/// One dataset (train and validation split) at a named difficulty.
pub struct DifficultyData<'a> {
    pub name: String,
    pub train: &'a Dataset,
    pub val: &'a Dataset,
}

#[derive(Clone, Debug, Serialize)]
pub struct StrainingCell {
    pub variant: String,
    pub difficulty: String,
    /// Best validation metric of the sweep; `None` when every run failed.
    pub metric: Option<f64>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StrainingTable {
    pub variants: Vec<String>,
    pub difficulties: Vec<String>,
    /// Row-major: `cells[v * difficulties.len() + d]`.
    pub cells: Vec<StrainingCell>,
}

impl StrainingTable {
    pub fn get(&self, variant: usize, difficulty: usize) -> &StrainingCell {
        &self.cells[variant * self.difficulties.len() + difficulty]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,difficulty,metric,lr,seed,run_dir\n");
        for c in &self.cells {
            let opt = |v: Option<String>| v.unwrap_or_default();
            s += &format!(
                "{},{},{},{},{},{}\n",
                c.variant,
                c.difficulty,
                opt(c.metric.map(|m| format!("{m:.4}"))),
                opt(c.lr.map(|l| format!("{l:e}"))),
                opt(c.seed.map(|v| v.to_string())),
                opt(c.run_dir.as_ref().map(|p| p.display().to_string()))
            );
        }
        s
    }

    pub fn plot(&self, y_label: &str) -> plot::Canvas {
        let values: Vec<Vec<f64>> = (0..self.variants.len())
            .map(|v| (0..self.difficulties.len()).map(|d| self.get(v, d).metric.unwrap_or(f64::NAN)).collect())
            .collect();
        plot::grouped_bars(y_label, &self.difficulties, &self.variants, &values, 1.0, None)
    }

    /// Writes `straining.csv`, `straining.json` and `straining.png`.
    pub fn write(&self, dir: &Path, y_label: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("straining.csv");
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("straining.json");
        std::fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;
        self.plot(y_label).save(&dir.join("straining.png"))
    }
}

/// Sweeps every variant on every difficulty's own dataset and tabulates the
/// best validation metric of each.
pub fn straining_sweep<R: Real>(
    base: &ArchitectureConfig,
    variants: &[crate::arch::Variant],
    data: &[DifficultyData<'_>],
    cfg: &TrainConfig,
    root: Option<&Path>,
    workers: usize,
) -> Result<StrainingTable> {
    let mut cells = Vec::new();
    for &v in variants {
        for d in data {
            let arch = ArchitectureConfig { variant: v, ..base.clone() };
            let dir = root.map(|r| r.join(format!("{}_{}", v.name(), d.name)));
            let sw = sweep::<R>(&arch, d.train, d.val, cfg, dir.as_deref(), workers)?;
            let best = sw.best_cell();
            cells.push(StrainingCell {
                variant: v.label().to_string(),
                difficulty: d.name.clone(),
                metric: sw.best_metric(),
                lr: best.map(|c| c.lr),
                seed: best.map(|c| c.seed),
                run_dir: best.and_then(|c| c.dir.clone()),
            });
        }
    }
    let table = StrainingTable {
        variants: variants.iter().map(|v| v.label().to_string()).collect(),
        difficulties: data.iter().map(|d| d.name.clone()).collect(),
        cells,
    };
    if let Some(r) = root {
        table.write(r, "BEST VAL ACCURACY")?;
    }
    Ok(table)
}
