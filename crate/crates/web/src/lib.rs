//! WebAssembly bindings for the browser demo in `www/`: draw a cABC or
//! Pathfinder stimulus and watch how a freshly initialized recurrent model's
//! low-level state evolves on it.

use fgru_core::arch::{norm_differences, ArchitectureConfig, Model, Variant};
use fgru_core::data::cabc::{CabcGenerator, CabcParams, Control, Difficulty};
use fgru_core::data::pathfinder::{PathfinderGenerator, PathfinderParams};
use fgru_core::data::{Generator, Sample};
use fgru_core::plot::diverging;
use fgru_core::Tensor;
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, fgru_core::Error>;

fn gray_to_rgba(px: &[u8]) -> Vec<u8> {
    px.iter().flat_map(|&v| [v, v, v, 255]).collect()
}

#[wasm_bindgen]
pub struct Stimulus {
    size: usize,
    pixels: Vec<u8>,
    info: String,
}

#[wasm_bindgen]
impl Stimulus {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Grayscale, one byte per pixel.
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    /// RGBA bytes ready for `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        gray_to_rgba(&self.pixels)
    }

    /// Label and sampled parameters as JSON.
    #[wasm_bindgen(getter)]
    pub fn info(&self) -> String {
        self.info.clone()
    }
}

fn stimulus(s: Sample) -> Stimulus {
    let info = serde_json::json!({
        "label": s.label.map(|l| if l { "same" } else { "different" }),
        "markers": s.markers,
        "params": s.params,
    });
    Stimulus { size: s.size, pixels: s.image, info: info.to_string() }
}

pub fn cabc_sample(difficulty: &str, control: &str, size: usize, seed: u32, index: usize) -> Result<Stimulus> {
    let difficulty: Difficulty = difficulty.parse()?;
    let control: Control = control.parse()?;
    let params = CabcParams { control, image_size: size, ..CabcParams::new(difficulty, 0, seed as u64) };
    Ok(stimulus(CabcGenerator::new(params)?.sample(index)?))
}

pub fn pathfinder_sample(length: usize, size: usize, seed: u32, index: usize) -> Result<Stimulus> {
    let params = PathfinderParams::new(length, 0, seed as u64).with_size(size);
    Ok(stimulus(PathfinderGenerator::new(params)?.sample(index)?))
}

/// One cABC image. `index` parity sets the label: even indices are "same".
#[wasm_bindgen]
pub fn cabc(difficulty: &str, control: &str, size: usize, seed: u32, index: usize) -> std::result::Result<Stimulus, JsError> {
    cabc_sample(difficulty, control, size, seed, index).map_err(|e| JsError::new(&e.to_string()))
}

/// One Pathfinder image with `length`-dash paths.
#[wasm_bindgen]
pub fn pathfinder(length: usize, size: usize, seed: u32, index: usize) -> std::result::Result<Stimulus, JsError> {
    pathfinder_sample(length, size, seed, index).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub struct Trace {
    size: usize,
    panels: Vec<Vec<f64>>,
    max_abs: f64,
    logit: f64,
}

#[wasm_bindgen]
impl Trace {
    #[wasm_bindgen(getter)]
    pub fn panel_count(&self) -> usize {
        self.panels.len()
    }

    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// Largest absolute change over all panels; the colour scale's end.
    #[wasm_bindgen(getter)]
    pub fn max_abs(&self) -> f64 {
        self.max_abs
    }

    #[wasm_bindgen(getter)]
    pub fn logit(&self) -> f64 {
        self.logit
    }

    /// Raw per-pixel change of the state norm between steps `k` and `k + 1`.
    pub fn values(&self, k: usize) -> Vec<f64> {
        self.panels.get(k).cloned().unwrap_or_default()
    }

    /// Panel `k` as RGBA: blue for shrinking, red for growing state norm.
    pub fn panel_rgba(&self, k: usize) -> Vec<u8> {
        self.panels.get(k).map_or_else(Vec::new, |p| {
            p.iter().flat_map(|&v| {
                let [r, g, b] = diverging(v, self.max_abs);
                [r, g, b, 255]
            })
            .collect()
        })
    }
}

/// A small model that still fits the browser's time budget.
pub fn demo_config(variant: Variant, timesteps: usize, size: usize) -> ArchitectureConfig {
    ArchitectureConfig {
        variant,
        timesteps,
        image_size: size,
        conv_channels: 8,
        horizontal_kernel: 9,
        ds_channels: [16, 32],
        ds_layers: 2,
        ..Default::default()
    }
}

pub fn run_trace(pixels: &[u8], size: usize, variant: &str, timesteps: usize, seed: u32) -> Result<Trace> {
    let variant: Variant = variant.parse()?;
    let mut model = Model::<f32>::new(demo_config(variant, timesteps, size), seed as u64)?;
    let x = Tensor::new(&[1, 1, size, size], pixels.iter().map(|&v| v as f32 / 255.0).collect())?;
    let (logits, trace) = model.predict_traced(&x, true)?;
    let panels = norm_differences(&trace.expect("trace requested").h1, 0);
    let max_abs = panels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(Trace { size, panels, max_abs, logit: logits.data()[0] as f64 })
}

/// Unrolls a randomly initialized model of the given variant on a grayscale
/// image and returns the per-step change of its low-level state norm.
#[wasm_bindgen]
pub fn trace(pixels: &[u8], size: usize, variant: &str, timesteps: usize, seed: u32) -> std::result::Result<Trace, JsError> {
    run_trace(pixels, size, variant, timesteps, seed).map_err(|e| JsError::new(&e.to_string()))
}
