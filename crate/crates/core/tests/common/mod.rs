#![allow(dead_code)]

use fgru_core::fgru::{init_fgru, FGruConfig, FGruParams};
use fgru_core::params::ParamStore;
use fgru_core::rng::stream;
use fgru_core::tensor::gradcheck::{compare_all, numeric_gradients, Comparison, DEFAULT_STEP};
use fgru_core::tensor::{BnMode, Tape, Tensor, Var};
use fgru_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Uniform entries bounded away from zero, so relu kinks are not hit.
pub fn rand_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Compares tape gradients of `Σ r ⊙ build(inputs)` (with a fixed random
/// projection `r`) against central differences.
pub fn gradcheck(
    inputs: &[Tensor<f64>],
    seed: u64,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Comparison {
    let probe = |tape: &mut Tape<f64>, y: Var| -> Result<Var> {
        let shape = tape.shape(y).to_vec();
        let mut r = rng(seed ^ 0xABCD);
        let proj = tape.constant(Tensor::from_fn(&shape, |_| r.random_range(-1.0..1.0)));
        let p = tape.mul(y, proj)?;
        tape.sum(p)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let y = build(&mut tape, &vars).unwrap();
    let loss = probe(&mut tape, y).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let numeric = numeric_gradients(inputs, DEFAULT_STEP, |xs| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let y = build(&mut tape, &vars)?;
        let l = probe(&mut tape, y)?;
        Ok((tape.value(l).item(), tape.activation_pattern()))
    })
    .unwrap();
    compare_all(&analytic, &numeric)
}

pub fn instance(seed: u64, k: usize, kernel: usize, t: usize) -> (ParamStore<f64>, FGruParams) {
    let mut store = ParamStore::new();
    let p = init_fgru(&mut store, "f", FGruConfig::new(k, kernel, t), &mut stream(seed, &[])).unwrap();
    (store, p)
}

/// Replaces every learnable entry with a random value so no gate or
/// coefficient sits at a degenerate initial value.
pub fn randomize(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    for (name, t, learnable) in store.iter_mut() {
        if !learnable {
            continue;
        }
        let scale = if name.contains(".scale") { 1.0 } else { 0.5 };
        for v in t.data_mut() {
            *v = if name.contains(".scale") { scale + r.random_range(-0.5..0.5) } else { r.random_range(-scale..scale) };
        }
    }
}

pub fn learnable(store: &ParamStore<f64>) -> Vec<Tensor<f64>> {
    store.iter().filter(|e| e.2).map(|e| e.1.clone()).collect()
}

pub fn with_learnable(store: &ParamStore<f64>, values: &[Tensor<f64>]) -> ParamStore<f64> {
    let mut s = store.clone();
    let mut it = values.iter();
    for (_, t, l) in s.iter_mut() {
        if l {
            *t = it.next().unwrap().clone();
        }
    }
    s
}

pub fn step_loss(
    tape: &mut Tape<f64>,
    store: &mut ParamStore<f64>,
    p: &FGruParams,
    x: Var,
    h: Var,
    track: bool,
    proj: &Tensor<f64>,
) -> (Var, fgru_core::params::Bound) {
    let bound = store.bind(tape, track);
    let y = p.step(tape, store, &bound, x, h, 1, BnMode::Train).unwrap();
    let r = tape.constant(proj.clone());
    let yr = tape.mul(y, r).unwrap();
    (tape.sum(yr).unwrap(), bound)
}

/// Finite-difference check of one full fGRU step (batch 2, 4 channels,
/// 8×8, kernel 3) with respect to both inputs and every learnable parameter.
pub fn step_gradcheck(seed: u64) -> Comparison {
    let (mut store, p) = instance(seed, 4, 3, 2);
    randomize(&mut store, 1000 + seed);
    let mut r = rng(2000 + seed);
    let x = Tensor::from_fn(&[2, 4, 8, 8], |_| r.random_range(-0.5..1.5));
    let h = Tensor::from_fn(&[2, 4, 8, 8], |_| r.random_range(0.0..1.0));
    let proj = randn(&[2, 4, 8, 8], &mut r);

    let mut tape = Tape::new();
    let mut s = store.clone();
    let xv = tape.param(x.clone());
    let hv = tape.param(h.clone());
    let (loss, bound) = step_loss(&mut tape, &mut s, &p, xv, hv, true, &proj);
    let ids: Vec<Var> = store
        .iter()
        .filter(|e| e.2)
        .map(|e| bound.var(store.id(e.0).unwrap()))
        .collect();
    let grads = tape.backward(loss).unwrap();
    let mut analytic = vec![grads.get(xv).unwrap().clone(), grads.get(hv).unwrap().clone()];
    for (v, t) in ids.iter().zip(learnable(&store)) {
        analytic.push(grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())));
    }

    let mut inputs = vec![x, h];
    inputs.extend(learnable(&store));
    let numeric = numeric_gradients(&inputs, DEFAULT_STEP, |vals| {
        let mut s = with_learnable(&store, &vals[2..]);
        let mut tape = Tape::new();
        let xv = tape.constant(vals[0].clone());
        let hv = tape.constant(vals[1].clone());
        let (loss, _) = step_loss(&mut tape, &mut s, &p, xv, hv, false, &proj);
        Ok((tape.value(loss).item(), tape.activation_pattern()))
    })
    .unwrap();
    compare_all(&analytic, &numeric)
}
