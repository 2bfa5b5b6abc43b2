//! Cluttered-ABC stimuli: two transformed letters placed close enough to
//! overlap, with two markers on the same or on different letters.
//!
//! Geometric constants are given for a 128-pixel canvas and scale linearly
//! with the configured image size.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::glyphs::{self, render_base};
use super::raster::{self, affine, mat_mul, pixelate, warp, Bitmap, Mat2, WarpTemplate};
use super::{default_split, label_for, Generator, Marker, Sample, BACKGROUND, MARKER};
use crate::error::{Error, Result};
use crate::rng::{stream, Rng};

/// Gain that gives a mean warp displacement of 2 px on a 128-px canvas
/// with ten σ = 20 px Gaussians (Monte-Carlo calibrated). It scales with
/// the square of the canvas size ratio.
pub const WARP_GAIN_128: f64 = 53.92;
pub const WARP_TARGET_DISPLACEMENT_128: f64 = 2.0;
pub const WARP_GAUSSIANS: usize = 10;
/// Letter pixels in the one-pixel ring around a marker are cleared so a
/// white marker stays visible on a white letter.
pub const MARKER_OUTLINE: u8 = BACKGROUND;

const POSITION_RETRIES: usize = 20;
const MARKER_RETRIES: usize = 50;
const IMAGE_RETRIES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Intermediate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Intermediate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Intermediate => "intermediate",
            Difficulty::Hard => "hard",
        }
    }
}

impl std::str::FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "intermediate" | "medium" => Ok(Difficulty::Intermediate),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Invalid(format!("unknown cABC difficulty {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Control {
    None,
    /// Letters drawn at two random intensities above 128, at least 40 apart.
    Luminance,
    /// Letters never touch or overlap.
    Positional,
}

impl std::str::FromStr for Control {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Control::None),
            "luminance" => Ok(Control::Luminance),
            "positional" => Ok(Control::Positional),
            other => Err(Error::Invalid(format!("unknown control {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShearAxis {
    Horizontal,
    Vertical,
}

/// Per-image random transformation parameters. Angles in degrees,
/// distances in pixels of a 128-px canvas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub theta: f64,
    /// Signed angular offset of the second letter.
    pub dtheta: f64,
    pub r: f64,
    pub phi: [f64; 2],
    pub phi_c: f64,
    pub scale: [f64; 2],
    pub scale_c: f64,
    pub shear: [f64; 2],
    pub shear_c: f64,
}

impl TransformParams {
    pub fn rotation(&self, i: usize) -> f64 {
        self.phi[i] + self.phi_c
    }

    pub fn total_scale(&self, i: usize) -> f64 {
        self.scale[i] * self.scale_c
    }

    pub fn total_shear(&self, i: usize) -> f64 {
        self.shear[i] + self.shear_c
    }
}

fn normal(sd: f64, rng: &mut Rng) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sd).unwrap().sample(rng)
    }
}

/// `1.5^N(0, sd)`.
fn log_normal_15(sd: f64, rng: &mut Rng) -> f64 {
    1.5f64.powf(normal(sd, rng))
}

/// `(θ range, smallest |Δθ|, r range)`.
fn position_rows(d: Difficulty) -> (f64, f64, (f64, f64)) {
    match d {
        Difficulty::Easy => (30.0, 170.0, (25.0, 30.0)),
        Difficulty::Intermediate => (60.0, 110.0, (20.0, 35.0)),
        Difficulty::Hard => (90.0, 70.0, (15.0, 40.0)),
    }
}

/// `(letter-wise, common)` standard deviations for rotation (degrees),
/// log-1.5 scale and shear.
fn transform_rows(d: Difficulty) -> [(f64, f64); 3] {
    let r2 = std::f64::consts::SQRT_2;
    match d {
        Difficulty::Easy => [(0.0, 30.0), (0.0, 0.5), (0.0, 0.2)],
        Difficulty::Intermediate => [(30.0 / r2, 30.0 / r2), (0.5 / r2, 0.5 / r2), (0.2 / r2, 0.2 / r2)],
        Difficulty::Hard => [(30.0, 0.0), (0.5, 0.0), (0.2, 0.0)],
    }
}

pub fn sample_positions(d: Difficulty, rng: &mut Rng) -> (f64, f64, f64) {
    let (theta_max, dmin, (r0, r1)) = position_rows(d);
    let theta = rng.random_range(-theta_max..=theta_max);
    let mag = rng.random_range(dmin..=180.0);
    let dtheta = if rng.random_bool(0.5) { mag } else { -mag };
    let r = rng.random_range(r0..=r1);
    (theta, dtheta, r)
}

pub fn sample_transform_params(d: Difficulty, rng: &mut Rng) -> TransformParams {
    let (theta, dtheta, r) = sample_positions(d, rng);
    let [(rot_i, rot_c), (sc_i, sc_c), (sh_i, sh_c)] = transform_rows(d);
    let phi = [normal(rot_i, rng), normal(rot_i, rng)];
    let phi_c = normal(rot_c, rng);
    let scale = [log_normal_15(sc_i, rng), log_normal_15(sc_i, rng)];
    let scale_c = log_normal_15(sc_c, rng);
    let shear = [normal(sh_i, rng), normal(sh_i, rng)];
    let shear_c = normal(sh_c, rng);
    TransformParams { theta, dtheta, r, phi, phi_c, scale, scale_c, shear, shear_c }
}

/// Pixel geometry for one canvas size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub size: usize,
    pub glyph_height: f64,
    pub stroke: f64,
    pub cell: usize,
    pub jitter_sigma: f64,
    pub warp_sigma: f64,
    pub warp_gain: f64,
    pub marker_radius: f64,
    pub marker_min_separation: f64,
}

impl Geometry {
    pub fn for_size(size: usize) -> Self {
        let s = size as f64 / 128.0;
        let marker_radius = (3.0 * s).round().max(1.0);
        Geometry {
            size,
            glyph_height: 60.0 * s,
            stroke: 9.0 * s,
            cell: (5.0 * s).round().max(1.0) as usize,
            jitter_sigma: 2.0 * s,
            warp_sigma: 20.0 * s,
            warp_gain: WARP_GAIN_128 * s * s,
            marker_radius,
            marker_min_separation: (10.0 * s).max(2.0 * marker_radius + 3.0),
        }
    }

    /// Pixels per reference pixel.
    pub fn scale(&self) -> f64 {
        self.size as f64 / 128.0
    }
}

/// One letter's identity and linear transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LetterInstance {
    pub glyph: usize,
    pub style: usize,
    pub rotation: f64,
    pub scale: f64,
    pub shear: f64,
    pub axis: ShearAxis,
}

impl LetterInstance {
    pub fn identity(style: usize, glyph: usize) -> Self {
        LetterInstance { glyph, style, rotation: 0.0, scale: 1.0, shear: 0.0, axis: ShearAxis::Horizontal }
    }

    /// Shear · rotation · scale, in image coordinates (y down).
    pub fn matrix(&self) -> Mat2 {
        let (s, c) = self.rotation.to_radians().sin_cos();
        let rot = [[c, s], [-s, c]];
        let scale = [[self.scale, 0.0], [0.0, self.scale]];
        let shear = match self.axis {
            ShearAxis::Horizontal => [[1.0, self.shear], [0.0, 1.0]],
            ShearAxis::Vertical => [[1.0, 0.0], [self.shear, 1.0]],
        };
        mat_mul(shear, mat_mul(rot, scale))
    }
}

/// Base glyph under the letter's linear transform, centered on the canvas.
pub fn render_letter(inst: &LetterInstance, geom: &Geometry) -> Bitmap {
    let base = render_base(inst.style, inst.glyph, geom.size, geom.glyph_height, geom.stroke);
    affine(&base, inst.matrix())
}

/// Warp then pixelation, each from its own seed.
pub fn distort(bm: &Bitmap, geom: &Geometry, warp_seed: u64, pixel_seed: u64) -> Bitmap {
    let template = WarpTemplate::random(geom.size, WARP_GAUSSIANS, geom.warp_sigma, &mut stream(warp_seed, &[]));
    let warped = warp(bm, &template, geom.warp_gain);
    pixelate(&warped, geom.cell, geom.jitter_sigma, &mut stream(pixel_seed, &[]))
}

fn touches_border(bm: &Bitmap) -> bool {
    let s = bm.size() as i64;
    bm.bbox().is_none_or(|(x0, y0, x1, y1)| x0 == 0 || y0 == 0 || x1 == s - 1 || y1 == s - 1)
}

/// Target centers for the two letters: two points on a circle around the
/// image center, `Δθ` apart in angle and exactly `separation` apart.
pub fn letter_centers(size: usize, theta: f64, dtheta: f64, separation: f64) -> [(f64, f64); 2] {
    let c = size as f64 / 2.0;
    let rho = separation / (2.0 * (dtheta.abs().to_radians() / 2.0).sin());
    let at = |a: f64| {
        let a = a.to_radians();
        (c + rho * a.cos(), c - rho * a.sin())
    };
    [at(theta), at(theta + dtheta)]
}

/// Moves each letter so its center of mass lands on its target. `None`
/// when a letter would leave the canvas.
pub fn place_letters(letters: &[Bitmap; 2], centers: [(f64, f64); 2]) -> Option<[Bitmap; 2]> {
    let mut out = Vec::with_capacity(2);
    for (bm, (tx, ty)) in letters.iter().zip(centers) {
        let (cx, cy) = bm.center_of_mass()?;
        let (moved, clipped) = bm.shifted((tx - cx).round() as i64, (ty - cy).round() as i64);
        if clipped {
            return None;
        }
        out.push(moved);
    }
    Some([out[0].clone(), out[1].clone()])
}

/// Pushes the second letter away from the first along the line between
/// their targets until the masks neither overlap nor touch.
fn separate(letters: &[Bitmap; 2], mut centers: [(f64, f64); 2]) -> Option<([Bitmap; 2], [(f64, f64); 2])> {
    let (dx, dy) = (centers[1].0 - centers[0].0, centers[1].1 - centers[0].1);
    let len = (dx * dx + dy * dy).sqrt().max(1e-9);
    let step = (dx / len, dy / len);
    let limit = letters[0].size() * 2;
    for _ in 0..limit {
        let placed = place_letters(letters, centers)?;
        if !placed[0].dilate().intersects(&placed[1]) {
            return Some((placed, centers));
        }
        centers[1].0 += step.0;
        centers[1].1 += step.1;
    }
    None
}

/// Marker centers on `masks[object]` whose disc stays inside that mask
/// dilated by one pixel and clear of every other mask.
fn marker_candidates(masks: &[Bitmap], object: usize, radius: f64) -> Vec<(i64, i64)> {
    let grown = masks[object].dilate();
    masks[object]
        .pixels()
        .filter(|&(x, y)| {
            raster::disc(x, y, radius).iter().all(|&(px, py)| {
                grown.get(px, py) && masks.iter().enumerate().all(|(k, m)| k == object || !m.get(px, py))
            })
        })
        .collect()
}

/// Places one marker per entry of `objects`, at least `min_sep` apart.
pub fn place_markers(masks: &[Bitmap], objects: &[usize], radius: f64, min_sep: f64, rng: &mut Rng) -> Option<Vec<Marker>> {
    let mut cands: Vec<Vec<(i64, i64)>> = Vec::new();
    for &o in objects {
        let c = marker_candidates(masks, o, radius);
        if c.is_empty() {
            return None;
        }
        cands.push(c);
    }
    'attempt: for _ in 0..MARKER_RETRIES {
        let mut out: Vec<Marker> = Vec::new();
        for (&o, c) in objects.iter().zip(&cands) {
            let (x, y) = c[rng.random_range(0..c.len())];
            if out.iter().any(|m| (((m.x - x).pow(2) + (m.y - y).pow(2)) as f64).sqrt() < min_sep) {
                continue 'attempt;
            }
            out.push(Marker { x, y, radius, object: o });
        }
        return Some(out);
    }
    None
}

/// Pixelwise max of the letters at their intensities, then the outlined
/// markers.
pub fn compose(size: usize, masks: &[Bitmap], intensities: &[u8], markers: &[Marker]) -> Vec<u8> {
    let mut img = vec![BACKGROUND; size * size];
    for (m, &v) in masks.iter().zip(intensities) {
        for (x, y) in m.pixels() {
            let p = &mut img[y as usize * size + x as usize];
            *p = (*p).max(v);
        }
    }
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size;
    for mk in markers {
        for (x, y) in raster::disc(mk.x, mk.y, mk.radius + 1.0) {
            if inside(x, y) {
                img[y as usize * size + x as usize] = MARKER_OUTLINE;
            }
        }
    }
    for mk in markers {
        for (x, y) in mk.pixels() {
            if inside(x, y) {
                img[y as usize * size + x as usize] = MARKER;
            }
        }
    }
    img
}

/// Luminance-control rule: both letters brighter than 128 and at least 40
/// levels apart.
pub fn valid_intensities(a: u8, b: u8) -> bool {
    a > 128 && b > 128 && a.abs_diff(b) >= 40
}

pub fn sample_intensities(rng: &mut Rng) -> [u8; 2] {
    loop {
        let a: u8 = rng.random_range(129..=255);
        let b: u8 = rng.random_range(129..=255);
        if valid_intensities(a, b) {
            return [a, b];
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CabcParams {
    pub difficulty: Difficulty,
    pub control: Control,
    pub task: Task,
    pub image_size: usize,
    pub seed: u64,
    pub train_count: usize,
    pub val_count: usize,
}

impl CabcParams {
    pub fn new(difficulty: Difficulty, count: usize, seed: u64) -> Self {
        let (train_count, val_count) = default_split(count);
        CabcParams { difficulty, control: Control::None, task: Task::Classification, image_size: 128, seed, train_count, val_count }
    }

    /// Single-marker segmentation set, hard difficulty, 10000/400 images.
    pub fn segmentation(seed: u64) -> Self {
        CabcParams {
            difficulty: Difficulty::Hard,
            control: Control::None,
            task: Task::Segmentation,
            image_size: 128,
            seed,
            train_count: 10_000,
            val_count: 400,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::Invalid("cABC image size must be at least 32".into()));
        }
        if self.task == Task::Segmentation && self.control != Control::None {
            return Err(Error::Invalid("controls apply to the classification task only".into()));
        }
        Ok(())
    }
}

pub struct CabcGenerator {
    pub params: CabcParams,
    pub geom: Geometry,
}

impl CabcGenerator {
    pub fn new(params: CabcParams) -> Result<Self> {
        params.validate()?;
        let geom = Geometry::for_size(params.image_size);
        Ok(CabcGenerator { params, geom })
    }

    fn attempt(&self, rng: &mut Rng, label: Option<bool>) -> Option<Sample> {
        let p = &self.params;
        let g = &self.geom;
        let tp = sample_transform_params(p.difficulty, rng);
        let style = rng.random_range(0..glyphs::STYLES);
        let a = rng.random_range(0..glyphs::LETTERS);
        let b = (a + rng.random_range(1..glyphs::LETTERS)) % glyphs::LETTERS;
        let axis = if rng.random_bool(0.5) { ShearAxis::Horizontal } else { ShearAxis::Vertical };
        let seeds: [(u64, u64); 2] = [(rng.random(), rng.random()), (rng.random(), rng.random())];
        let insts: Vec<LetterInstance> = [a, b]
            .iter()
            .enumerate()
            .map(|(i, &glyph)| LetterInstance {
                glyph,
                style,
                rotation: tp.rotation(i),
                scale: tp.total_scale(i),
                shear: tp.total_shear(i),
                axis,
            })
            .collect();
        let mut letters = Vec::with_capacity(2);
        for (inst, &(ws, ps)) in insts.iter().zip(&seeds) {
            let lin = render_letter(inst, g);
            if touches_border(&lin) {
                return None;
            }
            let bm = distort(&lin, g, ws, ps);
            if bm.is_empty() {
                return None;
            }
            letters.push(bm);
        }
        let letters = [letters[0].clone(), letters[1].clone()];

        let (mut theta, mut dtheta, mut r) = (tp.theta, tp.dtheta, tp.r);
        let mut placed = None;
        for k in 0..POSITION_RETRIES {
            if k > 0 {
                (theta, dtheta, r) = sample_positions(p.difficulty, rng);
            }
            let centers = letter_centers(g.size, theta, dtheta, r * g.scale());
            placed = match p.control {
                Control::Positional => separate(&letters, centers),
                _ => place_letters(&letters, centers).map(|m| (m, centers)),
            };
            if placed.is_some() {
                break;
            }
        }
        let (masks, centers) = placed?;

        let (objects, target) = match label {
            Some(true) => {
                let o = rng.random_range(0..2);
                (vec![o, o], None)
            }
            Some(false) => (vec![0, 1], None),
            None => {
                let o = rng.random_range(0..2);
                (vec![o], Some(o))
            }
        };
        let markers = place_markers(&masks, &objects, g.marker_radius, g.marker_min_separation, rng)?;
        let intensities = match p.control {
            Control::Luminance => sample_intensities(rng),
            _ => [255, 255],
        };
        let image = compose(g.size, &masks, &intensities, &markers);
        let params = json!({
            "style": style,
            "letters": [glyphs::letter_name(a).to_string(), glyphs::letter_name(b).to_string()],
            "transform": tp,
            "theta": theta,
            "dtheta": dtheta,
            "r": r,
            "centers": centers,
            "shear_axis": axis,
            "warp_seeds": [seeds[0].0, seeds[1].0],
            "pixelation_seeds": [seeds[0].1, seeds[1].1],
            "intensities": intensities,
        });
        Some(Sample { size: g.size, image, label, masks: masks.to_vec(), markers, target, params })
    }
}

impl Generator for CabcGenerator {
    fn kind(&self) -> &'static str {
        "cabc"
    }

    fn image_size(&self) -> usize {
        self.params.image_size
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
        Err(Error::Exhausted { what: "cABC image", attempts: IMAGE_RETRIES })
    }

    fn describe(&self) -> Value {
        json!({ "cabc": self.params, "geometry": self.geom, "warp_target_displacement": WARP_TARGET_DISPLACEMENT_128 * self.geom.scale() })
    }
}
