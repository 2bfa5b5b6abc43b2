//! Tiny raster plotting: grouped bar charts and heatmap panel grids written
//! as RGB PNG files. Text uses a built-in 3×5 pixel font.

use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];
pub const GRAY: Rgb = [150, 150, 150];
pub const LIGHT: Rgb = [225, 225, 225];

/// Series colors, cycled.
pub const PALETTE: [Rgb; 6] =
    [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

fn glyph(c: char) -> [u8; 5] {
    match c.to_ascii_uppercase() {
        '0' => [7, 5, 5, 5, 7],
        '1' => [2, 6, 2, 2, 7],
        '2' => [7, 1, 7, 4, 7],
        '3' => [7, 1, 7, 1, 7],
        '4' => [5, 5, 7, 1, 1],
        '5' => [7, 4, 7, 1, 7],
        '6' => [7, 4, 7, 5, 7],
        '7' => [7, 1, 1, 1, 1],
        '8' => [7, 5, 7, 5, 7],
        '9' => [7, 5, 7, 1, 7],
        'A' => [2, 5, 7, 5, 5],
        'B' => [6, 5, 6, 5, 6],
        'C' => [3, 4, 4, 4, 3],
        'D' => [6, 5, 5, 5, 6],
        'E' => [7, 4, 6, 4, 7],
        'F' => [7, 4, 6, 4, 4],
        'G' => [3, 4, 5, 5, 3],
        'H' => [5, 5, 7, 5, 5],
        'I' => [7, 2, 2, 2, 7],
        'J' => [1, 1, 1, 5, 2],
        'K' => [5, 5, 6, 5, 5],
        'L' => [4, 4, 4, 4, 7],
        'M' => [5, 7, 7, 5, 5],
        'N' => [6, 5, 5, 5, 5],
        'O' => [2, 5, 5, 5, 2],
        'P' => [6, 5, 6, 4, 4],
        'Q' => [2, 5, 5, 6, 3],
        'R' => [6, 5, 6, 5, 5],
        'S' => [3, 4, 2, 1, 6],
        'T' => [7, 2, 2, 2, 2],
        'U' => [5, 5, 5, 5, 7],
        'V' => [5, 5, 5, 5, 2],
        'W' => [5, 5, 7, 7, 5],
        'X' => [5, 5, 2, 5, 5],
        'Y' => [5, 5, 2, 2, 2],
        'Z' => [7, 1, 2, 4, 7],
        '.' => [0, 0, 0, 0, 2],
        ',' => [0, 0, 0, 2, 4],
        '-' => [0, 0, 7, 0, 0],
        '+' => [0, 2, 7, 2, 0],
        '/' => [1, 1, 2, 4, 4],
        ':' => [0, 2, 0, 2, 0],
        '_' => [0, 0, 0, 0, 7],
        '(' => [2, 4, 4, 4, 2],
        ')' => [2, 1, 1, 1, 2],
        '=' => [0, 7, 0, 7, 0],
        '%' => [5, 1, 2, 4, 5],
        _ => [0; 5],
    }
}

#[derive(Clone, Debug)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, bg: Rgb) -> Self {
        Canvas { width, height, px: vec![bg; width * height] }
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.px[y as usize * self.width + x as usize] = c;
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.px[y * self.width + x]
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.put(xx, yy, c);
            }
        }
    }

    pub fn rect_outline(&mut self, x: i64, y: i64, w: i64, h: i64, c: Rgb) {
        self.fill_rect(x, y, w, 1, c);
        self.fill_rect(x, y + h - 1, w, 1, c);
        self.fill_rect(x, y, 1, h, c);
        self.fill_rect(x + w - 1, y, 1, h, c);
    }

    /// Horizontal dashed line.
    pub fn dashed_hline(&mut self, x0: i64, x1: i64, y: i64, c: Rgb) {
        for x in x0..x1 {
            if (x / 4) % 2 == 0 {
                self.put(x, y, c);
            }
        }
    }

    pub fn text_width(s: &str, scale: usize) -> usize {
        s.chars().count() * 4 * scale
    }

    pub fn text(&mut self, x: i64, y: i64, s: &str, scale: usize, c: Rgb) {
        let k = scale as i64;
        for (i, ch) in s.chars().enumerate() {
            let rows = glyph(ch);
            let ox = x + i as i64 * 4 * k;
            for (r, bits) in rows.iter().enumerate() {
                for col in 0..3 {
                    if bits >> (2 - col) & 1 == 1 {
                        self.fill_rect(ox + col * k, y + r as i64 * k, k, k, c);
                    }
                }
            }
        }
    }

    pub fn text_centered(&mut self, cx: i64, y: i64, s: &str, scale: usize, c: Rgb) {
        let w = Self::text_width(s, scale) as i64;
        self.text(cx - w / 2, y, s, scale, c);
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().map_err(|e| Error::Invalid(format!("png: {e}")))?;
            let flat: Vec<u8> = self.px.iter().flatten().copied().collect();
            w.write_image_data(&flat).map_err(|e| Error::Invalid(format!("png: {e}")))?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }
}

/// Blue–white–red map for values in `[-max, max]`.
pub fn diverging(v: f64, max: f64) -> Rgb {
    let t = if max > 0.0 { (v / max).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |a: u8| (255.0 + (a as f64 - 255.0) * t.abs()).round() as u8;
    if t >= 0.0 {
        [fade(178), fade(24), fade(43)]
    } else {
        [fade(33), fade(102), fade(172)]
    }
}

/// Grouped bar chart: `values[s][g]` is series `s` in group `g`, drawn on a
/// `[0, y_max]` axis. An optional dashed reference line is labelled.
pub fn grouped_bars(
    title: &str,
    groups: &[String],
    series: &[String],
    values: &[Vec<f64>],
    y_max: f64,
    reference: Option<(f64, &str)>,
) -> Canvas {
    let bar_w = 18usize;
    let group_w = series.len().max(1) * bar_w + 24;
    let (left, right, top, bottom) = (56usize, 130usize, 36usize, 40usize);
    let plot_h = 240usize;
    let width = left + groups.len().max(1) * group_w + right;
    let height = top + plot_h + bottom;
    let mut cv = Canvas::new(width, height, WHITE);
    cv.text(left as i64, 10, title, 2, BLACK);
    let y_of = |v: f64| (top + plot_h) as i64 - ((v / y_max).clamp(0.0, 1.0) * plot_h as f64).round() as i64;

    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = y_of(v);
        cv.fill_rect(left as i64, y, (groups.len() * group_w) as i64, 1, LIGHT);
        cv.text(6, y - 4, &format!("{v:.2}"), 2, BLACK);
    }
    for (g, name) in groups.iter().enumerate() {
        let gx = left + g * group_w + 12;
        for (s, vals) in values.iter().enumerate() {
            let v = vals.get(g).copied().unwrap_or(f64::NAN);
            if !v.is_finite() {
                continue;
            }
            let x = (gx + s * bar_w) as i64;
            let y = y_of(v);
            cv.fill_rect(x, y, bar_w as i64 - 3, (top + plot_h) as i64 - y, PALETTE[s % PALETTE.len()]);
        }
        cv.text_centered((gx + series.len() * bar_w / 2) as i64, (top + plot_h + 10) as i64, name, 2, BLACK);
    }
    cv.fill_rect(left as i64, top as i64, 2, plot_h as i64 + 1, BLACK);
    cv.fill_rect(left as i64, (top + plot_h) as i64, (groups.len() * group_w) as i64, 2, BLACK);
    if let Some((v, label)) = reference {
        let y = y_of(v);
        cv.dashed_hline(left as i64, (left + groups.len() * group_w) as i64, y, BLACK);
        cv.text((left + groups.len() * group_w + 6) as i64, y - 4, label, 2, BLACK);
    }
    for (s, name) in series.iter().enumerate() {
        let x = (width - right + 8) as i64;
        let y = (top + 20 + s * 18) as i64;
        cv.fill_rect(x, y, 10, 10, PALETTE[s % PALETTE.len()]);
        cv.text(x + 14, y, name, 2, BLACK);
    }
    cv
}

/// One row per entry of `rows`, each a list of equally sized square
/// panels (row-major values). Every row shares a symmetric color scale.
pub fn heatmap_grid(title: &str, row_labels: &[String], rows: &[Vec<Vec<f64>>], panel: usize, zoom: usize) -> Canvas {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let cell = panel * zoom;
    let (left, top, pad) = (80usize, 40usize, 6usize);
    let width = left + cols * (cell + pad) + pad;
    let height = top + rows.len().max(1) * (cell + pad) + pad;
    let mut cv = Canvas::new(width, height, WHITE);
    cv.text(pad as i64, 10, title, 2, BLACK);
    for c in 0..cols {
        cv.text_centered((left + c * (cell + pad) + cell / 2) as i64, (top - 12) as i64, &format!("T{}", c + 2), 2, BLACK);
    }
    for (r, panels) in rows.iter().enumerate() {
        let y0 = top + r * (cell + pad);
        if let Some(l) = row_labels.get(r) {
            cv.text(pad as i64, (y0 + cell / 2) as i64 - 4, l, 2, BLACK);
        }
        let max = panels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        for (c, vals) in panels.iter().enumerate() {
            let x0 = left + c * (cell + pad);
            for y in 0..panel {
                for x in 0..panel {
                    let v = vals.get(y * panel + x).copied().unwrap_or(0.0);
                    cv.fill_rect((x0 + x * zoom) as i64, (y0 + y * zoom) as i64, zoom as i64, zoom as i64, diverging(v, max));
                }
            }
            cv.rect_outline(x0 as i64 - 1, y0 as i64 - 1, cell as i64 + 2, cell as i64 + 2, GRAY);
        }
    }
    cv
}
