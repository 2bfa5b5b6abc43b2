//! The fGRU: a two-stage gated convolutional recurrence. A suppression
//! stage computes `Z` from the drive `X` and the previous state, then a
//! facilitation stage proposes `H̃` and a mix gate blends it into the state.
//!
//! ```text
//! G_I = σ(BN₀(U_I ⋆ H))          C_I = BN₁(W_I ⋆ (H ⊙ G_I))
//! Z   = [X − [(α H + μ) ⊙ C_I]₊]₊
//! G_E = σ(BN₂(U_E ⋆ Z))          C_E = BN₃(W_E ⋆ Z)
//! H̃   = [κ (C_E + Z) + ω (C_E ⊙ Z)]₊
//! H'  = (1 − G_E) ⊙ H + G_E ⊙ H̃
//! ```
//!
//! Each of the four batch-norm sites has its own state per timestep.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, BatchNormState, Bound, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::{BnMode, Real, Tape, Tensor, Var};

/// Initial batch-norm scale of every fGRU normalization.
pub const BN_SCALE_INIT: f64 = 0.1;
/// Initial multiplicative suppression / facilitation coefficients (α, ω).
pub const MULTIPLICATIVE_INIT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FGruConfig {
    pub channels: usize,
    /// Spatial extent of the interaction kernels `W_I`, `W_E`.
    pub kernel: usize,
    /// Spatial extent of the gate kernels `U_I`, `U_E`.
    pub gate_kernel: usize,
    pub timesteps: usize,
    pub topdown_blend_gate: bool,
}

impl FGruConfig {
    pub fn new(channels: usize, kernel: usize, timesteps: usize) -> Self {
        FGruConfig { channels, kernel, gate_kernel: 1, timesteps, topdown_blend_gate: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.timesteps == 0 {
            return Err(Error::Invalid("fGRU needs at least one channel and one timestep".into()));
        }
        if self.kernel % 2 == 0 || self.gate_kernel % 2 == 0 {
            return Err(Error::Invalid(format!(
                "fGRU kernels must be odd (got {} and {})",
                self.kernel, self.gate_kernel
            )));
        }
        Ok(())
    }
}

/// Parameter handles of one fGRU instance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FGruParams {
    pub cfg: FGruConfig,
    pub u_i: ParamId,
    pub u_e: ParamId,
    pub w_i: ParamId,
    pub w_e: ParamId,
    pub alpha: ParamId,
    pub mu: ParamId,
    pub kappa: ParamId,
    pub omega: ParamId,
    /// `bn[t][site]`, sites ordered G_I, C_I, G_E, C_E.
    pub bn: Vec<[BatchNormState; 4]>,
    pub beta: Option<ParamId>,
}

/// Index of the batch-norm site feeding each gate.
pub const GAIN_SITE: usize = 0;
pub const MIX_SITE: usize = 2;

/// Every intermediate of one update, for inspection and tests.
#[derive(Clone, Copy, Debug)]
pub struct StepTrace {
    pub gain: Var,
    pub c_inhibit: Var,
    pub z: Var,
    pub mix: Var,
    pub c_excite: Var,
    pub candidate: Var,
    pub h: Var,
}

/// Registers and initializes an fGRU under `prefix`.
///
/// Gate biases follow the chrono scheme: `b = ln u` with `u ~ U(1, T − 1)`
/// per channel (`T` at least 2); the gain gate starts at `−b` and the mix
/// gate at `+b`. Batch-norm scales start at 0.1, μ and κ at 0, α and ω at
/// 0.1 and the blend bias β at 0.
pub fn init_fgru<R: Real>(store: &mut ParamStore<R>, prefix: &str, cfg: FGruConfig, rng: &mut Rng) -> Result<FGruParams> {
    cfg.validate()?;
    let k = cfg.channels;
    let gate_fan = k * cfg.gate_kernel * cfg.gate_kernel;
    let w_fan = k * cfg.kernel * cfg.kernel;
    let gshape = [k, k, cfg.gate_kernel, cfg.gate_kernel];
    let wshape = [k, k, cfg.kernel, cfg.kernel];
    let u_i = store.add(format!("{prefix}.U_I"), fan_in_uniform(&gshape, gate_fan, rng), true);
    let u_e = store.add(format!("{prefix}.U_E"), fan_in_uniform(&gshape, gate_fan, rng), true);
    let w_i = store.add(format!("{prefix}.W_I"), fan_in_uniform(&wshape, w_fan, rng), true);
    let w_e = store.add(format!("{prefix}.W_E"), fan_in_uniform(&wshape, w_fan, rng), true);
    let vec_of = |v: f64| Tensor::<R>::full(&[k], R::of(v));
    let alpha = store.add(format!("{prefix}.alpha"), vec_of(MULTIPLICATIVE_INIT), true);
    let mu = store.add(format!("{prefix}.mu"), vec_of(0.0), true);
    let kappa = store.add(format!("{prefix}.kappa"), vec_of(0.0), true);
    let omega = store.add(format!("{prefix}.omega"), vec_of(MULTIPLICATIVE_INIT), true);

    let horizon = cfg.timesteps.max(2) as f64;
    let chrono: Vec<f64> = (0..k)
        .map(|_| if horizon > 2.0 { rng.random_range(1.0..horizon - 1.0) } else { 1.0 }.ln())
        .collect();

    let mut bn = Vec::with_capacity(cfg.timesteps);
    for t in 0..cfg.timesteps {
        let sites: [BatchNormState; 4] = std::array::from_fn(|s| {
            BatchNormState::register(store, &format!("{prefix}.bn{s}.t{t}"), k, BN_SCALE_INIT)
        });
        let gain_bias = store.get_mut(sites[GAIN_SITE].bias);
        gain_bias.data_mut().iter_mut().zip(&chrono).for_each(|(v, &b)| *v = R::of(-b));
        let mix_bias = store.get_mut(sites[MIX_SITE].bias);
        mix_bias.data_mut().iter_mut().zip(&chrono).for_each(|(v, &b)| *v = R::of(b));
        bn.push(sites);
    }
    let beta = cfg.topdown_blend_gate.then(|| store.add(format!("{prefix}.beta"), vec_of(0.0), true));
    Ok(FGruParams { cfg, u_i, u_e, w_i, w_e, alpha, mu, kappa, omega, bn, beta })
}

impl FGruParams {
    /// Number of batch-norm sites (four per timestep).
    pub fn bn_site_count(&self) -> usize {
        self.bn.len() * 4
    }

    /// One state update from drive `x` and previous state `h_prev`.
    #[allow(clippy::too_many_arguments)]
    pub fn step<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &mut ParamStore<R>,
        bound: &Bound,
        x: Var,
        h_prev: Var,
        t: usize,
        mode: BnMode,
    ) -> Result<Var> {
        Ok(self.step_traced(tape, store, bound, x, h_prev, t, mode)?.h)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step_traced<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &mut ParamStore<R>,
        bound: &Bound,
        x: Var,
        h_prev: Var,
        t: usize,
        mode: BnMode,
    ) -> Result<StepTrace> {
        if t >= self.cfg.timesteps {
            return Err(Error::Invalid(format!("timestep {t} beyond configured {}", self.cfg.timesteps)));
        }
        if tape.shape(x) != tape.shape(h_prev) {
            return Err(Error::shape("fgru_step", format!("drive {:?} vs state {:?}", tape.shape(x), tape.shape(h_prev))));
        }
        if tape.shape(x).get(1) != Some(&self.cfg.channels) {
            return Err(Error::shape("fgru_step", format!("expected {} channels", self.cfg.channels)));
        }
        let bn = self.bn[t];
        let v = |id| bound.var(id);

        // suppression
        let a = tape.conv_same(h_prev, v(self.u_i), None)?;
        let a = bn[0].apply(tape, store, bound, a, mode)?;
        let gain = tape.sigmoid(a)?;
        let gated = tape.mul(h_prev, gain)?;
        let ci = tape.conv_same(gated, v(self.w_i), None)?;
        let c_inhibit = bn[1].apply(tape, store, bound, ci, mode)?;
        let coef = tape.channel_mul(h_prev, v(self.alpha))?;
        let coef = tape.channel_add(coef, v(self.mu))?;
        let inhibition = tape.mul(coef, c_inhibit)?;
        let inhibition = tape.relu(inhibition)?;
        let z = tape.sub(x, inhibition)?;
        let z = tape.relu(z)?;

        // facilitation
        let e = tape.conv_same(z, v(self.u_e), None)?;
        let e = bn[2].apply(tape, store, bound, e, mode)?;
        let mix = tape.sigmoid(e)?;
        let ce = tape.conv_same(z, v(self.w_e), None)?;
        let c_excite = bn[3].apply(tape, store, bound, ce, mode)?;
        let lin = tape.add(c_excite, z)?;
        let lin = tape.channel_mul(lin, v(self.kappa))?;
        let quad = tape.mul(c_excite, z)?;
        let quad = tape.channel_mul(quad, v(self.omega))?;
        let candidate = tape.add(lin, quad)?;
        let candidate = tape.relu(candidate)?;

        let h = tape.mix(h_prev, candidate, mix)?;
        Ok(StepTrace { gain, c_inhibit, z, mix, c_excite, candidate, h })
    }

    /// Top-down blend `(1 − σ(β)) ⊙ out + σ(β) ⊙ low`; identity on `out` when
    /// the instance has no blend gate.
    pub fn blend<R: Real>(&self, tape: &mut Tape<R>, bound: &Bound, low: Var, out: Var) -> Result<Var> {
        match self.beta {
            Some(beta) => topdown_blend(tape, low, out, bound.var(beta)),
            None => Ok(out),
        }
    }
}

pub fn topdown_blend<R: Real>(tape: &mut Tape<R>, low: Var, out: Var, beta: Var) -> Result<Var> {
    tape.blend(low, out, beta)
}
