//! Square binary bitmaps and the geometric operations applied to letters and
//! curves before composition.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::rng::Rng;

/// Square `size × size` binary image, row-major, entries 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    size: usize,
    data: Vec<u8>,
}

impl Bitmap {
    pub fn new(size: usize) -> Self {
        Bitmap { size, data: vec![0; size * size] }
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut b = Bitmap::new(size);
        for y in 0..size {
            for x in 0..size {
                b.data[y * size + x] = f(x, y) as u8;
            }
        }
        b
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: i64, y: i64) -> bool {
        let s = self.size as i64;
        x >= 0 && y >= 0 && x < s && y < s && self.data[(y * s + x) as usize] != 0
    }

    pub fn at(&self, i: usize) -> bool {
        self.data[i] != 0
    }

    /// Sets a pixel; out-of-canvas coordinates are ignored and reported.
    pub fn set(&mut self, x: i64, y: i64, on: bool) -> bool {
        let s = self.size as i64;
        if x < 0 || y < 0 || x >= s || y >= s {
            return false;
        }
        self.data[(y * s + x) as usize] = on as u8;
        true
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Coordinates `(x, y)` of every foreground pixel.
    pub fn pixels(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        let s = self.size;
        self.data.iter().enumerate().filter(|(_, &v)| v != 0).map(move |(i, _)| ((i % s) as i64, (i / s) as i64))
    }

    /// `(x0, y0, x1, y1)` inclusive, or `None` when empty.
    pub fn bbox(&self) -> Option<(i64, i64, i64, i64)> {
        self.pixels().fold(None, |acc, (x, y)| match acc {
            None => Some((x, y, x, y)),
            Some((a, b, c, d)) => Some((a.min(x), b.min(y), c.max(x), d.max(y))),
        })
    }

    /// Mean foreground coordinate in pixel-center units.
    pub fn center_of_mass(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y) in self.pixels() {
            sx += x as f64 + 0.5;
            sy += y as f64 + 0.5;
            n += 1;
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }

    /// Integer translation. The flag reports whether any foreground pixel
    /// left the canvas.
    pub fn shifted(&self, dx: i64, dy: i64) -> (Bitmap, bool) {
        self.placed(self.size, dx, dy)
    }

    /// Translation onto a canvas of another size.
    pub fn placed(&self, size: usize, dx: i64, dy: i64) -> (Bitmap, bool) {
        let mut out = Bitmap::new(size);
        let mut clipped = false;
        for (x, y) in self.pixels() {
            clipped |= !out.set(x + dx, y + dy, true);
        }
        (out, clipped)
    }

    /// Dilation by one pixel in the 8-neighborhood.
    pub fn dilate(&self) -> Bitmap {
        let mut out = Bitmap::new(self.size);
        for (x, y) in self.pixels() {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    out.set(x + dx, y + dy, true);
                }
            }
        }
        out
    }

    pub fn union(&self, other: &Bitmap) -> Bitmap {
        assert_eq!(self.size, other.size);
        Bitmap { size: self.size, data: self.data.iter().zip(&other.data).map(|(a, b)| a | b).collect() }
    }

    pub fn intersects(&self, other: &Bitmap) -> bool {
        self.data.iter().zip(&other.data).any(|(a, b)| a & b != 0)
    }

    pub fn intersection_count(&self, other: &Bitmap) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| *a & *b != 0).count()
    }

    /// Intersection over union; 1 for two empty bitmaps.
    pub fn iou(&self, other: &Bitmap) -> f64 {
        let inter = self.intersection_count(other);
        let uni = self.union(other).count();
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// Bilinear sample at a continuous position; pixel `(i, j)` has its
    /// center at `(i + 0.5, j + 0.5)`. Outside the canvas reads as 0.
    pub fn sample(&self, fx: f64, fy: f64) -> f64 {
        let (u, v) = (fx - 0.5, fy - 0.5);
        let (x0, y0) = (u.floor(), v.floor());
        let (ax, ay) = (u - x0, v - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let p = |x, y| self.get(x, y) as u8 as f64;
        (1.0 - ay) * ((1.0 - ax) * p(x0, y0) + ax * p(x0 + 1, y0)) + ay * ((1.0 - ax) * p(x0, y0 + 1) + ax * p(x0 + 1, y0 + 1))
    }

    /// Resamples through an inverse coordinate map and binarizes at 0.5.
    pub fn resample(&self, inverse: impl Fn(f64, f64) -> (f64, f64)) -> Bitmap {
        Bitmap::from_fn(self.size, |x, y| {
            let (sx, sy) = inverse(x as f64 + 0.5, y as f64 + 0.5);
            self.sample(sx, sy) >= 0.5
        })
    }
}

/// 2×2 matrix `[[a, b], [c, d]]` acting on `(x, y)`.
pub type Mat2 = [[f64; 2]; 2];

pub fn mat_mul(a: Mat2, b: Mat2) -> Mat2 {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

pub fn mat_inv(m: Mat2) -> Option<Mat2> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    (det.abs() > 1e-12).then(|| [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// Linear map about the canvas center, bilinear sampling, binarized at 0.5.
pub fn affine(bm: &Bitmap, m: Mat2) -> Bitmap {
    let inv = mat_inv(m).expect("singular letter transform");
    let c = bm.size as f64 / 2.0;
    bm.resample(|x, y| {
        let (u, v) = (x - c, y - c);
        (inv[0][0] * u + inv[0][1] * v + c, inv[1][0] * u + inv[1][1] * v + c)
    })
}

pub fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

/// Draws round-capped segments of uniform `width` into `bm`.
pub fn draw_segments(bm: &mut Bitmap, segments: &[((f64, f64), (f64, f64))], width: f64) {
    let half = width / 2.0;
    for &(a, b) in segments {
        let x0 = (a.0.min(b.0) - half).floor().max(0.0) as i64;
        let x1 = (a.0.max(b.0) + half).ceil() as i64;
        let y0 = (a.1.min(b.1) - half).floor().max(0.0) as i64;
        let y1 = (a.1.max(b.1) + half).ceil() as i64;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if dist_to_segment((x as f64 + 0.5, y as f64 + 0.5), a, b) <= half {
                    bm.set(x, y, true);
                }
            }
        }
    }
}

/// Pixels whose centers lie within `radius` of pixel `(cx, cy)`'s center.
pub fn disc(cx: i64, cy: i64, radius: f64) -> Vec<(i64, i64)> {
    let r = radius.ceil() as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) <= radius * radius {
                out.push((cx + dx, cy + dy));
            }
        }
    }
    out
}

/// Sum of unit-amplitude isotropic Gaussians.
#[derive(Clone, Debug)]
pub struct WarpTemplate {
    pub centers: Vec<(f64, f64)>,
    pub sigma: f64,
}

impl WarpTemplate {
    pub fn random(size: usize, count: usize, sigma: f64, rng: &mut Rng) -> Self {
        let s = size as f64;
        let centers = (0..count).map(|_| (rng.random_range(0.0..s), rng.random_range(0.0..s))).collect();
        WarpTemplate { centers, sigma }
    }

    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma;
        let (mut gx, mut gy) = (0.0, 0.0);
        for &(cx, cy) in &self.centers {
            let (dx, dy) = (x - cx, y - cy);
            let e = (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
            gx -= dx / s2 * e;
            gy -= dy / s2 * e;
        }
        (gx, gy)
    }

    /// Mean displacement magnitude over the canvas for a given gain.
    pub fn mean_displacement(&self, size: usize, gain: f64) -> f64 {
        let mut total = 0.0;
        for y in 0..size {
            for x in 0..size {
                let (gx, gy) = self.gradient(x as f64 + 0.5, y as f64 + 0.5);
                total += gain * (gx * gx + gy * gy).sqrt();
            }
        }
        total / (size * size) as f64
    }
}

/// Moves every pixel by `gain · ∇template`, realized by inverse mapping.
pub fn warp(bm: &Bitmap, template: &WarpTemplate, gain: f64) -> Bitmap {
    if gain == 0.0 {
        return bm.clone();
    }
    bm.resample(|x, y| {
        let (gx, gy) = template.gradient(x, y);
        (x - gain * gx, y - gain * gy)
    })
}

/// Top-left corners of the `cell × cell` blocks with more than 30 % foreground.
pub fn coarse_cells(bm: &Bitmap, cell: usize) -> Vec<(i64, i64)> {
    let n = bm.size.div_ceil(cell);
    let mut out = Vec::new();
    for cy in 0..n {
        for cx in 0..n {
            let (x0, y0) = ((cx * cell) as i64, (cy * cell) as i64);
            let mut on = 0;
            for y in y0..y0 + cell as i64 {
                for x in x0..x0 + cell as i64 {
                    on += bm.get(x, y) as usize;
                }
            }
            // strictly more than 30 %
            if on * 10 > 3 * cell * cell {
                out.push((x0, y0));
            }
        }
    }
    out
}

/// Draws filled cells at the given corners, each offset by its own jitter.
/// Returns whether any cell was cut by the border.
pub fn draw_cells(size: usize, cell: usize, corners: &[(i64, i64)], offsets: &[(i64, i64)]) -> (Bitmap, bool) {
    let mut out = Bitmap::new(size);
    let mut clipped = false;
    for (&(x0, y0), &(dx, dy)) in corners.iter().zip(offsets) {
        for y in 0..cell as i64 {
            for x in 0..cell as i64 {
                clipped |= !out.set(x0 + dx + x, y0 + dy + y, true);
            }
        }
    }
    (out, clipped)
}

/// Normal draw truncated at two standard deviations, rounded to whole pixels.
pub fn truncated_jitter(sigma: f64, rng: &mut Rng) -> i64 {
    if sigma == 0.0 {
        return 0;
    }
    let n = Normal::new(0.0, sigma).unwrap();
    loop {
        let v: f64 = n.sample(rng);
        if v.abs() <= 2.0 * sigma {
            return v.round() as i64;
        }
    }
}

/// Coarse-grid binarization followed by independent per-cell jitter.
pub fn pixelate(bm: &Bitmap, cell: usize, jitter_sigma: f64, rng: &mut Rng) -> Bitmap {
    let corners = coarse_cells(bm, cell);
    let offsets: Vec<_> =
        corners.iter().map(|_| (truncated_jitter(jitter_sigma, rng), truncated_jitter(jitter_sigma, rng))).collect();
    draw_cells(bm.size, cell, &corners, &offsets).0
}
