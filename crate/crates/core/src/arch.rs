//! The TD+H-CNN backbone and its lesioned variants.
//!
//! ```text
//! image ─ Conv(7×7, 7×7) ─▶ X₁
//! for t in 0..T:
//!     H₁ ← fGRU₁(X₁, H₁)                                   horizontal
//!     D  ← BN ─ pool ─ DS stack ─ pool ─ DS stack (H₁)
//!     H₂ ← fGRU₂(D, H₂)                                    1×1 memory
//!     U  ← US stack ─ US stack (H₂)
//!     H₁ ← blend_β(H₁, fGRU₃(U, H₁))                       top-down
//! readout(BN(H₁))
//! ```
//!
//! TD replaces fGRU₁'s spatial kernel with 1×1, H drops fGRU₃ (so nothing
//! above fGRU₁ reaches the output) and BU does both with a single step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fgru::{init_fgru, FGruConfig, FGruParams};
use crate::params::{fan_in_uniform, BatchNormState, Bound, ParamId, ParamStore};
use crate::rng::{stream, Rng};
use crate::tensor::{BnMode, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Horizontal and top-down feedback.
    Tdh,
    /// Top-down only.
    Td,
    /// Horizontal only.
    H,
    /// Feedforward.
    Bu,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Tdh, Variant::Td, Variant::H, Variant::Bu];

    pub fn horizontal(self) -> bool {
        matches!(self, Variant::Tdh | Variant::H)
    }

    pub fn top_down(self) -> bool {
        matches!(self, Variant::Tdh | Variant::Td)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tdh => "tdh",
            Variant::Td => "td",
            Variant::H => "h",
            Variant::Bu => "bu",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::Tdh => "TD+H-CNN",
            Variant::Td => "TD-CNN",
            Variant::H => "H-CNN",
            Variant::Bu => "BU-CNN",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tdh" | "td+h" | "tdh-cnn" => Ok(Variant::Tdh),
            "td" => Ok(Variant::Td),
            "h" => Ok(Variant::H),
            "bu" => Ok(Variant::Bu),
            other => Err(Error::Invalid(format!("unknown variant {other:?} (expected tdh, td, h or bu)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" | "class" => Ok(Task::Classification),
            "segmentation" | "seg" => Ok(Task::Segmentation),
            other => Err(Error::Invalid(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub variant: Variant,
    pub timesteps: usize,
    pub image_size: usize,
    pub task: Task,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    /// fGRU₁ interaction kernel for the horizontal variants.
    pub horizontal_kernel: usize,
    pub ds_channels: [usize; 2],
    pub ds_layers: usize,
    pub ds_kernel: usize,
    pub us_kernel: usize,
    pub seg_hidden: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            variant: Variant::Tdh,
            timesteps: 8,
            image_size: 128,
            task: Task::Classification,
            conv_channels: 20,
            conv_kernel: 7,
            horizontal_kernel: 15,
            ds_channels: [32, 128],
            ds_layers: 3,
            ds_kernel: 3,
            us_kernel: 4,
            seg_hidden: 20,
        }
    }
}

impl ArchitectureConfig {
    pub fn new(variant: Variant) -> Self {
        ArchitectureConfig { variant, ..Default::default() }
    }

    /// Unroll length after lesioning (BU always runs one step).
    pub fn effective_timesteps(&self) -> usize {
        if self.variant == Variant::Bu {
            1
        } else {
            self.timesteps
        }
    }

    pub fn fgru1_kernel(&self) -> usize {
        if self.variant.horizontal() {
            self.horizontal_kernel
        } else {
            1
        }
    }

    pub fn has_fgru3(&self) -> bool {
        self.variant.top_down()
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::Invalid("timesteps must be ≥ 1".into()));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return Err(Error::Invalid(format!("image size {} must be a positive multiple of 4", self.image_size)));
        }
        if self.conv_kernel % 2 == 0 || self.ds_kernel % 2 == 0 || self.horizontal_kernel % 2 == 0 {
            return Err(Error::Invalid("convolution kernels must be odd".into()));
        }
        if self.us_kernel != 4 {
            return Err(Error::Invalid("upsampling uses 4×4 stride-2 transpose convolutions".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    bn: Option<BatchNormState>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Layout {
    conv: [ConvLayer; 2],
    fgru1: FGruParams,
    pre_pool_bn: BatchNormState,
    ds: Vec<ConvLayer>,
    fgru2: FGruParams,
    us: Vec<ConvLayer>,
    fgru3: Option<FGruParams>,
    final_bn: BatchNormState,
    head: [ConvLayer; 2],
}

/// Per-timestep copies of the fGRU₁ and fGRU₂ states.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace<R> {
    /// H₁ at the end of each timestep.
    pub h1: Vec<Tensor<R>>,
    /// H₁ straight after fGRU₁, before top-down integration.
    pub horizontal: Vec<Tensor<R>>,
    /// Empty for variants without top-down feedback.
    pub h2: Vec<Tensor<R>>,
}

pub struct Model<R> {
    pub cfg: ArchitectureConfig,
    pub store: ParamStore<R>,
    layout: Layout,
}

fn conv_layer<R: Real>(
    store: &mut ParamStore<R>,
    name: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
    transpose: bool,
    bn: bool,
    rng: &mut Rng,
) -> ConvLayer {
    let shape = if transpose { [c_in, c_out, k, k] } else { [c_out, c_in, k, k] };
    let fan_in = if transpose { c_in * k * k / 4 } else { c_in * k * k };
    ConvLayer {
        w: store.add(format!("{name}.w"), fan_in_uniform(&shape, fan_in, rng), true),
        b: store.add(format!("{name}.b"), Tensor::zeros(&[c_out]), true),
        bn: bn.then(|| BatchNormState::register(store, &format!("{name}.bn"), c_out, 1.0)),
    }
}

impl<R: Real> Model<R> {
    pub fn new(cfg: ArchitectureConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let t = cfg.effective_timesteps();
        let c = cfg.conv_channels;
        let [c2, c3] = cfg.ds_channels;
        let rng = &mut stream(seed, &[0x1417]);

        let conv = [
            conv_layer(&mut store, "conv.0", 1, c, cfg.conv_kernel, false, false, rng),
            conv_layer(&mut store, "conv.1", c, c, cfg.conv_kernel, false, false, rng),
        ];
        let fgru1 = init_fgru(&mut store, "fgru1", FGruConfig::new(c, cfg.fgru1_kernel(), t), rng)?;
        let pre_pool_bn = BatchNormState::register(&mut store, "ds.pre_bn", c, 1.0);
        let mut ds = Vec::new();
        for (s, (&cin, &cout)) in [c, c2].iter().zip(&[c2, c3]).enumerate() {
            for l in 0..cfg.ds_layers {
                let from = if l == 0 { cin } else { cout };
                ds.push(conv_layer(&mut store, &format!("ds.{s}.{l}"), from, cout, cfg.ds_kernel, false, true, rng));
            }
        }
        let fgru2 = init_fgru(&mut store, "fgru2", FGruConfig::new(c3, 1, t), rng)?;
        let us = vec![
            conv_layer(&mut store, "us.0", c3, c2, cfg.us_kernel, true, true, rng),
            conv_layer(&mut store, "us.1", c2, c, cfg.us_kernel, true, true, rng),
        ];
        let fgru3 = if cfg.has_fgru3() {
            let f3 = FGruConfig { topdown_blend_gate: true, ..FGruConfig::new(c, 1, t) };
            Some(init_fgru(&mut store, "fgru3", f3, rng)?)
        } else {
            None
        };
        let final_bn = BatchNormState::register(&mut store, "readout.bn", c, 1.0);
        let head = match cfg.task {
            Task::Classification => [
                conv_layer(&mut store, "readout.0", c, 1, 1, false, false, rng),
                conv_layer(&mut store, "readout.1", 1, 1, 1, false, false, rng),
            ],
            Task::Segmentation => [
                conv_layer(&mut store, "seg.0", c, cfg.seg_hidden, 1, false, false, rng),
                conv_layer(&mut store, "seg.1", cfg.seg_hidden, 1, 1, false, false, rng),
            ],
        };
        let layout = Layout { conv, fgru1, pre_pool_bn, ds, fgru2, us, fgru3, final_bn, head };
        Ok(Model { cfg, store, layout })
    }

    pub fn fgru1(&self) -> &FGruParams {
        &self.layout.fgru1
    }

    pub fn fgru3(&self) -> Option<&FGruParams> {
        self.layout.fgru3.as_ref()
    }

    /// Parameter names that belong to the downsampling, upsampling, fGRU₂ and
    /// fGRU₃ blocks.
    pub fn top_down_param_names(&self) -> Vec<String> {
        self.store
            .names()
            .filter(|n| ["ds.", "us.", "fgru2.", "fgru3."].iter().any(|p| n.starts_with(p)))
            .map(str::to_owned)
            .collect()
    }

    fn conv(&self, tape: &mut Tape<R>, bound: &Bound, layer: &ConvLayer, x: Var) -> Result<Var> {
        tape.conv_same(x, bound.var(layer.w), Some(bound.var(layer.b)))
    }

    /// Unrolled forward pass on `(batch, 1, S, S)` images. Returns per-image
    /// logits — `(batch, 1, 1, 1)` for classification, `(batch, 1, S, S)`
    /// for segmentation — and, if requested, the state trace.
    pub fn forward(
        &mut self,
        tape: &mut Tape<R>,
        bound: &Bound,
        images: Var,
        mode: BnMode,
        keep_trace: bool,
    ) -> Result<(Var, Option<ForwardTrace<R>>)> {
        let s = self.cfg.image_size;
        match tape.value(images).dims4() {
            Some((n, 1, h, w)) if n > 0 && h == s && w == s => {}
            _ => {
                return Err(Error::shape(
                    "forward",
                    format!("expected (batch, 1, {s}, {s}) images, got {:?}", tape.shape(images)),
                ))
            }
        }
        let Model { cfg, store, layout } = self;
        let l = &*layout;
        let conv = |tape: &mut Tape<R>, layer: &ConvLayer, x: Var| tape.conv_same(x, bound.var(layer.w), Some(bound.var(layer.b)));

        // the image is constant across timesteps, so the input block is evaluated once
        let x = conv(tape, &l.conv[0], images)?;
        let x = tape.relu(x)?;
        let drive = conv(tape, &l.conv[1], x)?;

        let zeros = Tensor::zeros(tape.shape(drive));
        let mut h1 = tape.constant(zeros);
        let mut h2: Option<Var> = None;
        let mut trace = keep_trace.then(ForwardTrace::default);

        for t in 0..cfg.effective_timesteps() {
            h1 = l.fgru1.step(tape, store, bound, drive, h1, t, mode)?;
            if let Some(tr) = trace.as_mut() {
                tr.horizontal.push(tape.value(h1).clone());
            }
            if let Some(f3) = &l.fgru3 {
                let mut d = l.pre_pool_bn.apply(tape, store, bound, h1, mode)?;
                d = tape.maxpool2(d)?;
                for (i, layer) in l.ds.iter().enumerate() {
                    if i == cfg.ds_layers {
                        d = tape.maxpool2(d)?;
                    }
                    d = conv(tape, layer, d)?;
                    d = tape.relu(d)?;
                    d = layer.bn.as_ref().unwrap().apply(tape, store, bound, d, mode)?;
                }
                let prev = match h2 {
                    Some(h) => h,
                    None => tape.constant(Tensor::zeros(tape.shape(d))),
                };
                let top = l.fgru2.step(tape, store, bound, d, prev, t, mode)?;
                h2 = Some(top);
                let mut u = top;
                for layer in &l.us {
                    u = tape.conv2d_transpose(u, bound.var(layer.w), Some(bound.var(layer.b)), 2, 1)?;
                    u = tape.relu(u)?;
                    u = layer.bn.as_ref().unwrap().apply(tape, store, bound, u, mode)?;
                }
                let out = f3.step(tape, store, bound, u, h1, t, mode)?;
                h1 = f3.blend(tape, bound, h1, out)?;
            }
            if let Some(tr) = trace.as_mut() {
                tr.h1.push(tape.value(h1).clone());
                if let Some(h) = h2 {
                    tr.h2.push(tape.value(h).clone());
                }
            }
        }

        let feat = l.final_bn.apply(tape, store, bound, h1, mode)?;
        let logits = self.readout(tape, bound, feat)?;
        Ok((logits, trace))
    }

    /// Output head on an already normalized state: one logit per image for
    /// classification, one per pixel for segmentation.
    pub fn readout(&self, tape: &mut Tape<R>, bound: &Bound, feat: Var) -> Result<Var> {
        let l = &self.layout;
        match self.cfg.task {
            Task::Classification => {
                let r = self.conv(tape, bound, &l.head[0], feat)?;
                let r = tape.relu(r)?;
                let r = tape.global_max_pool(r)?;
                self.conv(tape, bound, &l.head[1], r)
            }
            Task::Segmentation => {
                let r = self.conv(tape, bound, &l.head[0], feat)?;
                let r = tape.relu(r)?;
                self.conv(tape, bound, &l.head[1], r)
            }
        }
    }

    /// Eval-mode logits for a batch of images, as a flat vector
    /// (classification: one per image; segmentation: one per pixel).
    pub fn predict(&mut self, images: &Tensor<R>) -> Result<Tensor<R>> {
        Ok(self.predict_traced(images, false)?.0)
    }

    pub fn predict_traced(&mut self, images: &Tensor<R>, keep_trace: bool) -> Result<(Tensor<R>, Option<ForwardTrace<R>>)> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let (logits, trace) = self.forward(&mut tape, &bound, x, BnMode::Eval, keep_trace)?;
        Ok((tape.value(logits).clone(), trace))
    }

    /// Mean binary cross-entropy from logits; `targets` is one label per
    /// image or one mask value per pixel, in `{0, 1}`.
    pub fn loss(&self, tape: &mut Tape<R>, logits: Var, targets: &Tensor<R>) -> Result<Var> {
        if targets.data().iter().any(|&t| t != R::zero() && t != R::one()) {
            return Err(Error::Invalid("labels must be 0 or 1".into()));
        }
        let t = targets.clone().reshape(tape.shape(logits))?;
        tape.bce_with_logits(logits, &t)
    }

    pub fn structure(&self) -> serde_json::Value {
        serde_json::json!({ "config": self.cfg, "layout": self.layout })
    }

    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        self.store.save(dir, self.structure())
    }

    /// Rebuilds the model from a checkpoint directory.
    pub fn load(dir: &std::path::Path) -> Result<Self> {
        let structure = ParamStore::<R>::read_structure(dir)?;
        let cfg: ArchitectureConfig = serde_json::from_value(structure["config"].clone())?;
        let mut m = Model::new(cfg, 0)?;
        m.store.load_into(dir)?;
        Ok(m)
    }
}

/// Euclidean norm of each pixel's feature vector in image `b` of a
/// `(batch, C, H, W)` state, row-major over pixels.
pub fn pixel_norms<R: Real>(state: &Tensor<R>, b: usize) -> Vec<f64> {
    let (_, c, h, w) = state.dims4().expect("state must be 4-d");
    let img = state.image(b);
    (0..h * w)
        .map(|p| (0..c).map(|k| img[k * h * w + p].as_f64().powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Change of the per-pixel state norm between consecutive timesteps, one
/// map per step after the first. A single-step trace gives one all-zero map.
pub fn norm_differences<R: Real>(states: &[Tensor<R>], b: usize) -> Vec<Vec<f64>> {
    let norms: Vec<Vec<f64>> = states.iter().map(|s| pixel_norms(s, b)).collect();
    if norms.len() < 2 {
        return vec![vec![0.0; norms.first().map_or(0, Vec::len)]];
    }
    norms.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect()).collect()
}
