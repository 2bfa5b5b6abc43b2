//! Two built-in stroke-skeleton alphabets (A–Z). Each letter is a set of
//! polylines in a unit box, `x` to the right and `y` downward; rendering
//! draws them with one uniform stroke width.

use super::raster::{draw_segments, Bitmap};

pub const STYLES: usize = 2;
pub const LETTERS: usize = 26;

/// Width-to-height ratio of each style's letter box.
const ASPECT: [f64; STYLES] = [0.75, 0.62];

type Poly = Vec<(f64, f64)>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Poly {
    let n = (((to_deg - from_deg).abs() / 15.0).ceil() as usize).max(2);
    (0..=n)
        .map(|i| {
            let a = (from_deg + (to_deg - from_deg) * i as f64 / n as f64).to_radians();
            (cx + rx * a.cos(), cy - ry * a.sin())
        })
        .collect()
}

fn join(parts: &[Poly]) -> Poly {
    parts.iter().flatten().copied().collect()
}

fn p(points: &[(f64, f64)]) -> Poly {
    points.to_vec()
}

fn angular(letter: u8) -> Vec<Poly> {
    match letter {
        b'A' => vec![p(&[(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)]), p(&[(0.25, 0.5), (0.75, 0.5)])],
        b'B' => vec![
            p(&[(0.0, 0.5), (0.75, 0.5), (0.9, 0.35), (0.9, 0.15), (0.75, 0.0), (0.0, 0.0), (0.0, 1.0)]),
            p(&[(0.0, 1.0), (0.85, 1.0), (1.0, 0.85), (1.0, 0.65), (0.85, 0.5)]),
        ],
        b'C' => vec![p(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0), (1.0, 1.0)])],
        b'D' => vec![p(&[(0.0, 0.0), (0.7, 0.0), (1.0, 0.3), (1.0, 0.7), (0.7, 1.0), (0.0, 1.0), (0.0, 0.0)])],
        b'E' => vec![p(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]), p(&[(0.0, 0.5), (0.75, 0.5)])],
        b'F' => vec![p(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]), p(&[(0.0, 0.5), (0.75, 0.5)])],
        b'G' => vec![p(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.55), (0.5, 0.55)])],
        b'H' => vec![p(&[(0.0, 0.0), (0.0, 1.0)]), p(&[(1.0, 0.0), (1.0, 1.0)]), p(&[(0.0, 0.5), (1.0, 0.5)])],
        b'I' => vec![p(&[(0.5, 0.0), (0.5, 1.0)]), p(&[(0.2, 0.0), (0.8, 0.0)]), p(&[(0.2, 1.0), (0.8, 1.0)])],
        b'J' => vec![p(&[(1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.7)])],
        b'K' => vec![p(&[(0.0, 0.0), (0.0, 1.0)]), p(&[(1.0, 0.0), (0.0, 0.6)]), p(&[(0.3, 0.42), (1.0, 1.0)])],
        b'L' => vec![p(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)])],
        b'M' => vec![p(&[(0.0, 1.0), (0.0, 0.0), (0.5, 0.5), (1.0, 0.0), (1.0, 1.0)])],
        b'N' => vec![p(&[(0.0, 1.0), (0.0, 0.0), (1.0, 1.0), (1.0, 0.0)])],
        b'O' => vec![p(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)])],
        b'P' => vec![p(&[(0.0, 1.0), (0.0, 0.0), (1.0, 0.0), (1.0, 0.5), (0.0, 0.5)])],
        b'Q' => vec![p(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)]), p(&[(0.6, 0.6), (1.0, 1.0)])],
        b'R' => vec![p(&[(0.0, 1.0), (0.0, 0.0), (1.0, 0.0), (1.0, 0.5), (0.0, 0.5)]), p(&[(0.4, 0.5), (1.0, 1.0)])],
        b'S' => vec![p(&[(1.0, 0.0), (0.0, 0.0), (0.0, 0.5), (1.0, 0.5), (1.0, 1.0), (0.0, 1.0)])],
        b'T' => vec![p(&[(0.0, 0.0), (1.0, 0.0)]), p(&[(0.5, 0.0), (0.5, 1.0)])],
        b'U' => vec![p(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)])],
        b'V' => vec![p(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)])],
        b'W' => vec![p(&[(0.0, 0.0), (0.25, 1.0), (0.5, 0.4), (0.75, 1.0), (1.0, 0.0)])],
        b'X' => vec![p(&[(0.0, 0.0), (1.0, 1.0)]), p(&[(1.0, 0.0), (0.0, 1.0)])],
        b'Y' => vec![p(&[(0.0, 0.0), (0.5, 0.5), (1.0, 0.0)]), p(&[(0.5, 0.5), (0.5, 1.0)])],
        b'Z' => vec![p(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])],
        _ => unreachable!(),
    }
}

fn rounded(letter: u8) -> Vec<Poly> {
    match letter {
        b'A' => vec![p(&[(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)]), p(&[(0.22, 0.62), (0.78, 0.62)])],
        b'B' => vec![
            join(&[p(&[(0.0, 0.5)]), arc(0.55, 0.25, 0.4, 0.25, -90.0, 90.0), p(&[(0.0, 0.0), (0.0, 1.0)])]),
            join(&[p(&[(0.0, 1.0)]), arc(0.55, 0.75, 0.45, 0.25, -90.0, 90.0), p(&[(0.0, 0.5)])]),
        ],
        b'C' => vec![arc(0.5, 0.5, 0.5, 0.5, 45.0, 315.0)],
        b'D' => vec![join(&[p(&[(0.0, 0.0), (0.0, 1.0)]), arc(0.35, 0.5, 0.65, 0.5, -90.0, 90.0), p(&[(0.0, 0.0)])])],
        b'E' => vec![p(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]), p(&[(0.0, 0.48), (0.65, 0.48)])],
        b'F' => vec![p(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]), p(&[(0.0, 0.48), (0.65, 0.48)])],
        b'G' => vec![join(&[arc(0.5, 0.5, 0.5, 0.5, 45.0, 360.0), p(&[(1.0, 0.55), (0.55, 0.55)])])],
        b'H' => vec![p(&[(0.0, 0.0), (0.0, 1.0)]), p(&[(1.0, 0.0), (1.0, 1.0)]), p(&[(0.0, 0.45), (1.0, 0.45)])],
        b'I' => vec![p(&[(0.5, 0.0), (0.5, 1.0)])],
        b'J' => vec![join(&[p(&[(1.0, 0.0)]), arc(0.5, 0.7, 0.5, 0.3, 0.0, -180.0)])],
        b'K' => vec![p(&[(0.0, 0.0), (0.0, 1.0)]), p(&[(1.0, 0.0), (0.0, 0.55)]), p(&[(0.35, 0.4), (1.0, 1.0)])],
        b'L' => vec![p(&[(0.0, 0.0), (0.0, 1.0), (0.9, 1.0)])],
        b'M' => vec![p(&[(0.0, 1.0), (0.1, 0.0), (0.5, 0.7), (0.9, 0.0), (1.0, 1.0)])],
        b'N' => vec![p(&[(0.0, 1.0), (0.0, 0.0), (1.0, 1.0), (1.0, 0.0)])],
        b'O' => vec![arc(0.5, 0.5, 0.5, 0.5, 0.0, 360.0)],
        b'P' => vec![join(&[p(&[(0.0, 1.0), (0.0, 0.0)]), arc(0.55, 0.27, 0.45, 0.27, 90.0, -90.0), p(&[(0.0, 0.54)])])],
        b'Q' => vec![arc(0.5, 0.5, 0.5, 0.5, 0.0, 360.0), p(&[(0.6, 0.7), (1.0, 1.0)])],
        b'R' => vec![
            join(&[p(&[(0.0, 1.0), (0.0, 0.0)]), arc(0.55, 0.27, 0.45, 0.27, 90.0, -90.0), p(&[(0.0, 0.54)])]),
            p(&[(0.45, 0.54), (1.0, 1.0)]),
        ],
        b'S' => vec![join(&[arc(0.5, 0.25, 0.5, 0.25, 20.0, 270.0), arc(0.5, 0.75, 0.5, 0.25, 90.0, -160.0)])],
        b'T' => vec![p(&[(0.0, 0.0), (1.0, 0.0)]), p(&[(0.5, 0.0), (0.5, 1.0)])],
        b'U' => vec![join(&[p(&[(0.0, 0.0)]), arc(0.5, 0.6, 0.5, 0.4, 180.0, 360.0), p(&[(1.0, 0.0)])])],
        b'V' => vec![p(&[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)])],
        b'W' => vec![p(&[(0.0, 0.0), (0.3, 1.0), (0.5, 0.5), (0.7, 1.0), (1.0, 0.0)])],
        b'X' => vec![p(&[(0.0, 0.0), (1.0, 1.0)]), p(&[(1.0, 0.0), (0.0, 1.0)])],
        b'Y' => vec![p(&[(0.0, 0.0), (0.5, 0.55), (0.5, 1.0)]), p(&[(1.0, 0.0), (0.5, 0.55)])],
        b'Z' => vec![p(&[(0.05, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])],
        _ => unreachable!(),
    }
}

/// Skeleton of letter `glyph` (0 = A) in `style`.
pub fn skeleton(style: usize, glyph: usize) -> Vec<Vec<(f64, f64)>> {
    assert!(style < STYLES && glyph < LETTERS);
    let letter = b'A' + glyph as u8;
    if style == 0 {
        angular(letter)
    } else {
        rounded(letter)
    }
}

/// Renders an untransformed letter `height` pixels tall, centered on a
/// `size × size` canvas.
pub fn render_base(style: usize, glyph: usize, size: usize, height: f64, stroke: f64) -> Bitmap {
    let width = height * ASPECT[style];
    let c = size as f64 / 2.0;
    let (x0, y0) = (c - width / 2.0, c - height / 2.0);
    let segs: Vec<_> = skeleton(style, glyph)
        .iter()
        .flat_map(|poly| {
            poly.windows(2)
                .map(|w| ((x0 + w[0].0 * width, y0 + w[0].1 * height), (x0 + w[1].0 * width, y0 + w[1].1 * height)))
                .collect::<Vec<_>>()
        })
        .collect();
    let mut bm = Bitmap::new(size);
    draw_segments(&mut bm, &segs, stroke);
    bm
}

pub fn letter_name(glyph: usize) -> char {
    (b'A' + glyph as u8) as char
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeletons_stay_in_box() {
        for s in 0..STYLES {
            for g in 0..LETTERS {
                for poly in skeleton(s, g) {
                    assert!(poly.len() >= 2);
                    for (x, y) in poly {
                        assert!((-1e-9..=1.0 + 1e-9).contains(&x) && (-1e-9..=1.0 + 1e-9).contains(&y), "{s} {g}");
                    }
                }
            }
        }
    }

    #[test]
    fn letters_are_distinct_within_style() {
        for s in 0..STYLES {
            let maps: Vec<_> = (0..LETTERS).map(|g| render_base(s, g, 64, 40.0, 4.0)).collect();
            for a in 0..LETTERS {
                for b in a + 1..LETTERS {
                    assert!(maps[a].iou(&maps[b]) < 0.9, "style {s}: {} vs {}", letter_name(a), letter_name(b));
                }
            }
        }
    }
}
