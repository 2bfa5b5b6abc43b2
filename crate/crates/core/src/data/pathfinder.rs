//! Pathfinder-style stimuli: two dashed target curves plus short distractor
//! chains on a black field, with markers on the endpoints of one curve
//! (same) or of both curves (different).

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::raster::{dist_to_segment, draw_segments, Bitmap};
use super::{default_split, label_for, Generator, Marker, Sample, BACKGROUND, MARKER};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

pub const LENGTHS: [usize; 3] = [6, 9, 14];
const DISTRACTOR_CHAIN: usize = 3;
const PATH_RETRIES: usize = 200;
const IMAGE_RETRIES: usize = 100;

type Pt = (f64, f64);

/// Dash geometry in pixels of the configured canvas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathGeometry {
    pub size: usize,
    pub dash_length: f64,
    pub dash_width: f64,
    pub gap: f64,
    /// Largest heading change between consecutive dashes, degrees.
    pub curvature_cap: f64,
    pub distractor_dashes: usize,
    pub marker_radius: f64,
}

impl PathGeometry {
    pub fn for_size(size: usize) -> Self {
        let s = size as f64 / 128.0;
        PathGeometry {
            size,
            dash_length: 9.0 * s,
            dash_width: (2.0 * s).max(1.0),
            gap: 4.0 * s,
            curvature_cap: 30.0,
            distractor_dashes: 12,
            marker_radius: (3.0 * s).round().max(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dash_length > 0.0
            && self.dash_width > 0.0
            && self.gap > 0.0
            && (0.0..90.0).contains(&self.curvature_cap)
            && self.size >= 16;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("bad path geometry {self:?}")))
        }
    }

    /// Keeps dash pixels and marker discs inside the canvas.
    fn margin(&self) -> f64 {
        self.marker_radius + self.dash_width + 1.0
    }

    /// Smallest distance allowed between dashes that are not neighbours.
    fn clearance(&self) -> f64 {
        self.dash_width + self.gap
    }
}

/// Ordered dashes of one curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    /// `(start, end)` of every dash.
    pub dashes: Vec<(Pt, Pt)>,
    /// Heading of every dash, degrees.
    pub headings: Vec<f64>,
}

impl CurveSpec {
    pub fn endpoints(&self) -> [Pt; 2] {
        [self.dashes[0].0, self.dashes.last().unwrap().1]
    }

    /// Along-curve distance between the two endpoints.
    pub fn arc_length(&self, gap: f64) -> f64 {
        let dash: f64 = self.dashes.iter().map(|&(a, b)| dist(a, b)).sum();
        dash + gap * (self.dashes.len() - 1) as f64
    }

    pub fn mask(&self, geom: &PathGeometry) -> Bitmap {
        let mut bm = Bitmap::new(geom.size);
        draw_segments(&mut bm, &self.dashes, geom.dash_width);
        bm
    }

    fn min_distance(&self, other: &CurveSpec) -> f64 {
        let mut d = f64::INFINITY;
        for &(a, b) in &self.dashes {
            for &(c, e) in &other.dashes {
                d = d.min(segment_distance(a, b, c, e));
            }
        }
        d
    }
}

fn dist(a: Pt, b: Pt) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn cross(o: Pt, a: Pt, b: Pt) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn segments_cross(a: Pt, b: Pt, c: Pt, d: Pt) -> bool {
    let (d1, d2) = (cross(c, d, a), cross(c, d, b));
    let (d3, d4) = (cross(a, b, c), cross(a, b, d));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

pub fn segment_distance(a: Pt, b: Pt, c: Pt, d: Pt) -> f64 {
    if segments_cross(a, b, c, d) {
        return 0.0;
    }
    dist_to_segment(a, c, d).min(dist_to_segment(b, c, d)).min(dist_to_segment(c, a, b)).min(dist_to_segment(d, a, b))
}

fn step(p: Pt, heading: f64, len: f64) -> Pt {
    let h = heading.to_radians();
    (p.0 + len * h.cos(), p.1 - len * h.sin())
}

const STEP_RETRIES: usize = 4;
const PROPOSAL_BUDGET: usize = 3000;

/// One random-walk attempt. A dash that would leave the canvas or come too
/// close to an earlier dash is redrawn; when a step keeps failing the walk
/// backs up one dash. `None` once the proposal budget is spent.
pub fn try_grow(length: usize, geom: &PathGeometry, rng: &mut Rng) -> Option<CurveSpec> {
    let s = geom.size as f64;
    let m = geom.margin();
    let inside = |p: Pt| p.0 >= m && p.1 >= m && p.0 <= s - m && p.1 <= s - m;
    let start = (rng.random_range(m..s - m), rng.random_range(m..s - m));
    // aim roughly at the canvas center so long paths fit
    let to_center = (-(s / 2.0 - start.1)).atan2(s / 2.0 - start.0).to_degrees();
    let h0 = to_center + rng.random_range(-90.0..90.0);
    let e0 = step(start, h0, geom.dash_length);
    if !inside(start) || !inside(e0) {
        return None;
    }
    let mut dashes: Vec<(Pt, Pt)> = vec![(start, e0)];
    let mut headings = vec![h0];
    let mut failures = vec![0usize];
    let mut budget = PROPOSAL_BUDGET;
    while dashes.len() < length {
        if budget == 0 {
            return None;
        }
        budget -= 1;
        let (heading, end) = (*headings.last().unwrap(), dashes.last().unwrap().1);
        let turn = if geom.curvature_cap > 0.0 { rng.random_range(-geom.curvature_cap..=geom.curvature_cap) } else { 0.0 };
        let h = heading + turn;
        let p = step(end, h, geom.gap);
        let e = step(p, h, geom.dash_length);
        let clear = dashes
            .iter()
            .take(dashes.len() - 1)
            .all(|&(a, b)| segment_distance(a, b, p, e) >= geom.clearance());
        if inside(p) && inside(e) && clear {
            dashes.push((p, e));
            headings.push(h);
            failures.push(0);
            continue;
        }
        let f = failures.last_mut().unwrap();
        *f += 1;
        while *failures.last().unwrap() >= STEP_RETRIES {
            if dashes.len() == 1 {
                return None;
            }
            dashes.pop();
            headings.pop();
            failures.pop();
            // a dead end counts against the dash it grew from
            *failures.last_mut().unwrap() += 1;
        }
    }
    Some(CurveSpec { dashes, headings })
}

/// Fraction of single attempts that succeed, for calibration audits.
pub fn acceptance_rate(length: usize, geom: &PathGeometry, attempts: usize, rng: &mut Rng) -> f64 {
    let ok = (0..attempts).filter(|_| try_grow(length, geom, rng).is_some()).count();
    ok as f64 / attempts as f64
}

pub fn grow_path(length: usize, geom: &PathGeometry, rng: &mut Rng) -> Result<CurveSpec> {
    for _ in 0..PATH_RETRIES {
        if let Some(c) = try_grow(length, geom, rng) {
            return Ok(c);
        }
    }
    Err(Error::Exhausted { what: "path growth", attempts: PATH_RETRIES })
}

/// A curve that keeps clearance from every curve in `others`.
fn grow_clear(length: usize, geom: &PathGeometry, others: &[CurveSpec], rng: &mut Rng) -> Option<CurveSpec> {
    for _ in 0..PATH_RETRIES {
        if let Some(c) = try_grow(length, geom, rng) {
            if others.iter().all(|o| c.min_distance(o) >= geom.clearance()) {
                return Some(c);
            }
        }
    }
    None
}

/// Marker at one end of a curve, pulled half a stroke inward so its
/// center pixel is a dash pixel.
fn end_marker(curve: &CurveSpec, end: usize, mask: &Bitmap, geom: &PathGeometry, object: usize) -> Option<Marker> {
    let (tip, toward) = if end == 0 {
        (curve.dashes[0].0, curve.dashes[0].1)
    } else {
        let d = curve.dashes.last().unwrap();
        (d.1, d.0)
    };
    let len = dist(tip, toward).max(1e-9);
    let pull = (geom.dash_width / 2.0).min(len / 2.0);
    let fx = tip.0 + (toward.0 - tip.0) / len * pull;
    let fy = tip.1 + (toward.1 - tip.1) / len * pull;
    let mut best: Option<(f64, i64, i64)> = None;
    let (cx, cy) = (fx.floor() as i64, fy.floor() as i64);
    for y in cy - 2..=cy + 2 {
        for x in cx - 2..=cx + 2 {
            if mask.get(x, y) {
                let d = (x as f64 + 0.5 - fx).powi(2) + (y as f64 + 0.5 - fy).powi(2);
                if best.is_none_or(|b| d < b.0) {
                    best = Some((d, x, y));
                }
            }
        }
    }
    best.map(|(_, x, y)| Marker { x, y, radius: geom.marker_radius, object })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathfinderParams {
    /// Dashes per target curve.
    pub length: usize,
    pub task: Task,
    pub geometry: PathGeometry,
    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
}

impl PathfinderParams {
    pub fn new(length: usize, count: usize, seed: u64) -> Self {
        let (train_count, val_count) = default_split(count);
        PathfinderParams {
            length,
            task: Task::Classification,
            geometry: PathGeometry::for_size(128),
            seed,
            train_count,
            val_count,
        }
    }

    /// Single-marker segmentation set: length 14, 40000/400 images.
    pub fn segmentation(seed: u64) -> Self {
        PathfinderParams { task: Task::Segmentation, train_count: 40_000, val_count: 400, ..Self::new(14, 0, seed) }
    }

    pub fn with_size(mut self, size: usize) -> Self {
        self.geometry = PathGeometry::for_size(size);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::Invalid("path length must be at least 2 dashes".into()));
        }
        self.geometry.validate()
    }
}

pub struct PathfinderGenerator {
    pub params: PathfinderParams,
}

impl PathfinderGenerator {
    pub fn new(params: PathfinderParams) -> Result<Self> {
        params.validate()?;
        Ok(PathfinderGenerator { params })
    }

    fn attempt(&self, rng: &mut Rng, label: Option<bool>) -> Option<Sample> {
        let g = &self.params.geometry;
        let len = self.params.length;
        let first = try_grow(len, g, rng)?;
        let second = grow_clear(len, g, std::slice::from_ref(&first), rng)?;
        let mut all = vec![first, second];
        for _ in 0..g.distractor_dashes / DISTRACTOR_CHAIN {
            let d = grow_clear(DISTRACTOR_CHAIN, g, &all, rng)?;
            all.push(d);
        }
        let masks = [all[0].mask(g), all[1].mask(g)];
        let (ends, target): (Vec<(usize, usize)>, Option<usize>) = match label {
            Some(true) => {
                let c = rng.random_range(0..2);
                (vec![(c, 0), (c, 1)], None)
            }
            Some(false) => (vec![(0, rng.random_range(0..2)), (1, rng.random_range(0..2))], None),
            None => {
                let c = rng.random_range(0..2);
                (vec![(c, rng.random_range(0..2))], Some(c))
            }
        };
        let markers: Vec<Marker> =
            ends.iter().map(|&(c, e)| end_marker(&all[c], e, &masks[c], g, c)).collect::<Option<_>>()?;

        let size = g.size;
        let mut fg = Bitmap::new(size);
        for c in &all {
            draw_segments(&mut fg, &c.dashes, g.dash_width);
        }
        let mut image: Vec<u8> = fg.data().iter().map(|&v| if v != 0 { 255 } else { BACKGROUND }).collect();
        for mk in &markers {
            for (x, y) in mk.pixels() {
                if x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size {
                    image[y as usize * size + x as usize] = MARKER;
                }
            }
        }
        let params = json!({
            "curves": &all[..2],
            "distractors": &all[2..],
            "marker_ends": ends,
            "geodesic": (label == Some(true)).then(|| all[markers[0].object].arc_length(g.gap)),
        });
        Some(Sample { size, image, label, masks: masks.to_vec(), markers, target, params })
    }
}

impl Generator for PathfinderGenerator {
    fn kind(&self) -> &'static str {
        "pathfinder"
    }

    fn image_size(&self) -> usize {
        self.params.geometry.size
    }

    fn counts(&self) -> (usize, usize) {
        (self.params.train_count, self.params.val_count)
    }

    fn sample(&self, index: usize) -> Result<Sample> {
        let mut rng = stream(self.params.seed, &[index as u64]);
        let label = match self.params.task {
            Task::Classification => Some(label_for(index)),
            Task::Segmentation => None,
        };
        for attempt in 0..IMAGE_RETRIES {
            if let Some(mut s) = self.attempt(&mut rng, label) {
                s.params["attempts"] = json!(attempt + 1);
                return Ok(s);
            }
        }
        Err(Error::Exhausted { what: "pathfinder image", attempts: IMAGE_RETRIES })
    }

    fn describe(&self) -> Value {
        json!({ "pathfinder": self.params })
    }
}
