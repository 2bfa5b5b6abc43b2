//! Acceptance suite. Prints one `[PASS]`, `[FAIL]` or `[NOT-RUN]` line per
//! criterion and fails if any criterion fails. The toy-training criteria
//! (6, 7 and the segmentation half of 8) need hours of multicore compute and
//! only run with `FGRU_FULL_ACCEPTANCE=1`.

mod common;

use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{instance, rand_away_from_zero, randn, randomize, rng, step_gradcheck};
use fgru_core::analysis::{analytic_reliability, bootstrap_compare, simulate_raters, spearman_brown, splithalf_ceiling};
use fgru_core::arch::{norm_differences, ArchitectureConfig, Model, Task, Variant};
use fgru_core::data::cabc::{sample_positions, sample_transform_params, valid_intensities, CabcGenerator, CabcParams, Control, Difficulty};
use fgru_core::data::pathfinder::{PathfinderGenerator, PathfinderParams};
use fgru_core::data::{generate_dataset, Dataset, Generator, Split, MARKER};
use fgru_core::fgru::MIX_SITE;
use fgru_core::plot::heatmap_grid;
use fgru_core::rng::stream;
use fgru_core::tensor::gradcheck::Comparison;
use fgru_core::tensor::{BnMode, Tape, Tensor};
use fgru_core::train::{self, init_seed, sweep, train_seed, TrainConfig};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

enum Verdict {
    Pass(String),
    Fail(String),
    NotRun(String),
}

use Verdict::{Fail, NotRun, Pass};

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

#[derive(Default)]
struct Tally {
    pass: usize,
    fail: usize,
    not_run: usize,
}

impl Tally {
    fn run(&mut self, id: &str, name: &str, f: impl FnOnce() -> Verdict) {
        let started = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Fail(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match v {
            Pass(d) => {
                self.pass += 1;
                ("PASS", d)
            }
            Fail(d) => {
                self.fail += 1;
                ("FAIL", d)
            }
            NotRun(d) => {
                self.not_run += 1;
                ("NOT-RUN", d)
            }
        };
        // written straight to stderr so the lines survive output capture
        let _ = writeln!(std::io::stderr(), "[{tag}] {id} {name}: {detail} ({secs:.1} s)");
    }
}

fn full_run() -> bool {
    std::env::var("FGRU_FULL_ACCEPTANCE").is_ok_and(|v| v == "1")
}

// ---------------------------------------------------------------- 1

fn worst(cs: &[(String, Comparison)]) -> (String, f64) {
    cs.iter()
        .map(|(n, c)| (n.clone(), c.rel_error))
        .fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a })
}

fn gradient_fidelity() -> Verdict {
    use common::gradcheck;
    let started = Instant::now();
    let mut checks: Vec<(String, Comparison)> = Vec::new();
    for seed in 0..20u64 {
        let mut r = rng(9000 + seed);
        let push = |checks: &mut Vec<(String, Comparison)>, name: &str, c: Comparison| checks.push((format!("{name}/{seed}"), c));

        let (c_in, c_out) = (r.random_range(1..4), r.random_range(1..4));
        let k = [1, 3, 5][r.random_range(0..3)];
        let stride = r.random_range(1..3);
        let hw = r.random_range(k.max(3)..8);
        let x = randn(&[2, c_in, hw, hw], &mut r);
        let w = randn(&[c_out, c_in, k, k], &mut r);
        let b = randn(&[c_out], &mut r);
        push(&mut checks, "conv2d", gradcheck(&[x, w, b], seed, |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, k / 2)));

        let x = randn(&[2, 3, 3, 3], &mut r);
        let w = randn(&[3, 2, 4, 4], &mut r);
        let b = randn(&[2], &mut r);
        push(&mut checks, "conv2d_transpose", gradcheck(&[x, w, b], seed, |t, v| t.conv2d_transpose(v[0], v[1], Some(v[2]), 2, 1)));

        // distinct values, so no pooling window is tied
        let n = 2 * 2 * 4 * 6;
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        for i in (1..n).rev() {
            vals.swap(i, r.random_range(0..=i));
        }
        let x = Tensor::new(&[2, 2, 4, 6], vals).unwrap();
        push(&mut checks, "maxpool2", gradcheck(&[x.clone()], seed, |t, v| t.maxpool2(v[0])));
        push(&mut checks, "global_max_pool", gradcheck(&[x], seed, |t, v| t.global_max_pool(v[0])));

        let x = randn(&[3, 3, 3, 3], &mut r);
        let (s, b) = (randn(&[3], &mut r), randn(&[3], &mut r));
        for mode in [BnMode::Train, BnMode::Eval] {
            let c = gradcheck(&[x.clone(), s.clone(), b.clone()], seed, |t, v| {
                let mut run = Tensor::new(&[2, 3], vec![0.1, 0.0, -0.1, 0.9, 1.1, 1.3]).unwrap();
                t.batchnorm(v[0], v[1], v[2], &mut run, mode, 1e-5)
            });
            push(&mut checks, &format!("batchnorm {mode:?}"), c);
        }

        let shape = [2, 3, 3, 2];
        let a = rand_away_from_zero(&shape, &mut r);
        let b = randn(&shape, &mut r);
        let g = Tensor::from_fn(&shape, |_| r.random_range(0.05..0.95));
        let s = randn(&[3], &mut r);
        push(&mut checks, "sigmoid", gradcheck(&[b.clone()], seed, |t, v| t.sigmoid(v[0])));
        push(&mut checks, "relu", gradcheck(&[a.clone()], seed, |t, v| t.relu(v[0])));
        push(&mut checks, "scale", gradcheck(&[b.clone()], seed, |t, v| t.scale(v[0], 0.7)));
        push(&mut checks, "add", gradcheck(&[a.clone(), b.clone()], seed, |t, v| t.add(v[0], v[1])));
        push(&mut checks, "sub", gradcheck(&[a.clone(), b.clone()], seed, |t, v| t.sub(v[0], v[1])));
        push(&mut checks, "mul", gradcheck(&[a.clone(), b.clone()], seed, |t, v| t.mul(v[0], v[1])));
        push(&mut checks, "channel_mul", gradcheck(&[b.clone(), s.clone()], seed, |t, v| t.channel_mul(v[0], v[1])));
        push(&mut checks, "channel_add", gradcheck(&[b.clone(), s.clone()], seed, |t, v| t.channel_add(v[0], v[1])));
        push(&mut checks, "mix", gradcheck(&[a.clone(), b.clone(), g], seed, |t, v| t.mix(v[0], v[1], v[2])));
        push(&mut checks, "blend", gradcheck(&[a.clone(), b.clone(), s], seed, |t, v| t.blend(v[0], v[1], v[2])));
        push(&mut checks, "sum", gradcheck(&[b.clone()], seed, |t, v| t.sum(v[0])));
        push(&mut checks, "mean", gradcheck(&[b], seed, |t, v| t.mean(v[0])));
        let z = randn(&[6], &mut r);
        let y = Tensor::from_fn(&[6], |_| if r.random_bool(0.5) { 1.0 } else { 0.0 });
        push(&mut checks, "bce_with_logits", gradcheck(&[z], seed, |t, v| t.bce_with_logits(v[0], &y)));

        push(&mut checks, "fgru step", step_gradcheck(seed));
    }
    let secs = started.elapsed().as_secs_f64();
    let (name, err) = worst(&checks);
    let skips_ok = checks.iter().all(|(_, c)| c.skipped * 10 < c.compared.max(1) || c.compared == 0);
    verdict(
        err <= 1e-5 && skips_ok && secs <= 300.0,
        format!("{} checks over 20 seeds, worst rel err {err:.2e} ({name}) ≤ 1e-5, {secs:.0} s ≤ 300 s", checks.len()),
    )
}

// ---------------------------------------------------------------- 2

fn fgru_invariants() -> Verdict {
    let (mut mix, mut annihilation, mut between) = (0.0f64, 0usize, 0.0f64);
    for i in 0..1000u64 {
        let mut r = rng(20_000 + i);
        let k = r.random_range(1..5);
        let kernel = [1, 3, 5][r.random_range(0..3)];
        let (n, hw) = (r.random_range(1..3), r.random_range(3..7));
        let (mut store, p) = instance(i, k, kernel, 2);
        randomize(&mut store, 30_000 + i);
        let x = randn(&[n, k, hw, hw], &mut r);
        let h = Tensor::from_fn(&[n, k, hw, hw], |_| r.random_range(0.0..2.0));

        // closed mix gate keeps the state
        let mut s = store.clone();
        *s.get_mut(p.u_e) = Tensor::zeros(s.get(p.u_e).shape());
        *s.get_mut(p.bn[1][MIX_SITE].bias) = Tensor::full(&[k], -40.0);
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let (xv, hv) = (tape.constant(x.clone()), tape.constant(h.clone()));
        let out = p.step(&mut tape, &mut s, &bound, xv, hv, 1, BnMode::Train).unwrap();
        mix = mix.max(tape.value(out).data().iter().zip(h.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        // no inhibition kernel and identity normalization pass the drive through relu
        let mut s = store.clone();
        *s.get_mut(p.w_i) = Tensor::zeros(s.get(p.w_i).shape());
        *s.get_mut(p.bn[0][1].scale) = Tensor::full(&[k], 1.0);
        *s.get_mut(p.bn[0][1].bias) = Tensor::zeros(&[k]);
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let (xv, hv) = (tape.constant(x.clone()), tape.constant(h.clone()));
        let tr = p.step_traced(&mut tape, &mut s, &bound, xv, hv, 0, BnMode::Train).unwrap();
        if tape.value(tr.z).data().iter().zip(x.data()).any(|(z, x)| *z != x.max(0.0)) {
            annihilation += 1;
        }

        // the new state lies between the previous one and the candidate
        let mut s = store.clone();
        let mut tape = Tape::new();
        let bound = s.bind(&mut tape, false);
        let (xv, hv) = (tape.constant(x), tape.constant(h.clone()));
        let tr = p.step_traced(&mut tape, &mut s, &bound, xv, hv, 1, BnMode::Train).unwrap();
        let (hn, cand) = (tape.value(tr.h), tape.value(tr.candidate));
        for j in 0..hn.len() {
            let (lo, hi) = (h.data()[j].min(cand.data()[j]), h.data()[j].max(cand.data()[j]));
            between = between.max(lo - hn.data()[j]).max(hn.data()[j] - hi);
        }
    }
    verdict(
        mix <= 1e-8 && annihilation == 0 && between <= 1e-12,
        format!(
            "1000 instances: mix-gate drift {mix:.1e} ≤ 1e-8, {annihilation} inexact relu pass-throughs, betweenness overshoot {:.1e}",
            between.max(0.0)
        ),
    )
}

// ---------------------------------------------------------------- 3

fn lesion_config(variant: Variant, t: usize) -> ArchitectureConfig {
    ArchitectureConfig {
        variant,
        timesteps: t,
        image_size: 32,
        conv_channels: 6,
        horizontal_kernel: 7,
        ds_channels: [8, 12],
        ds_layers: 2,
        ..Default::default()
    }
}

fn binary_images<R: fgru_core::Real>(n: usize, s: usize, seed: u64) -> Tensor<R> {
    let mut r = stream(seed, &[]);
    Tensor::from_fn(&[n, 1, s, s], |_| R::of(if r.random_bool(0.2) { 1.0 } else { 0.0 }))
}

/// Output of the input convolution block, recomputed from the stored weights.
fn drive(m: &Model<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let p = |tape: &mut Tape<f64>, n: &str| tape.constant(m.store.by_name(n).unwrap().clone());
    let (w0, b0, w1, b1) = (p(&mut tape, "conv.0.w"), p(&mut tape, "conv.0.b"), p(&mut tape, "conv.1.w"), p(&mut tape, "conv.1.b"));
    let xv = tape.constant(x.clone());
    let a = tape.conv_same(xv, w0, Some(b0)).unwrap();
    let a = tape.relu(a).unwrap();
    let d = tape.conv_same(a, w1, Some(b1)).unwrap();
    tape.value(d).clone()
}

fn changed(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<bool> {
    let (_, c, h, w) = a.dims4().unwrap();
    (0..h * w).map(|p| (0..c).any(|k| a.data()[k * h * w + p] != b.data()[k * h * w + p])).collect()
}

fn lesions() -> Verdict {
    let mut h_mismatch = 0usize;
    for seed in 0..5u64 {
        let mut m = Model::<f32>::new(lesion_config(Variant::H, 6), seed).unwrap();
        let x = binary_images::<f32>(4, 32, seed);
        let before: Vec<u32> = m.predict(&x).unwrap().data().iter().map(|v| v.to_bits()).collect();
        let td = m.top_down_param_names();
        let mut r = stream(seed, &[77]);
        for (name, t, _) in m.store.iter_mut() {
            if td.iter().any(|n| n == name) {
                let half = t.len() / 2;
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    let positive = name.ends_with(".scale") || (name.ends_with(".running") && i >= half);
                    *v = if positive { r.random_range(0.5..1.5) } else { r.random_range(-1.0..1.0) };
                }
            }
        }
        let after: Vec<u32> = m.predict(&x).unwrap().data().iter().map(|v| v.to_bits()).collect();
        h_mismatch += before.iter().zip(&after).filter(|(a, b)| a != b).count();
    }

    // TD at one timestep: fGRU1 changes nowhere the input block did not
    let (mut leaks, mut probes, mut h_spread) = (0usize, 0usize, 0usize);
    for seed in 0..5u64 {
        for variant in [Variant::Td, Variant::H] {
            let mut m = Model::<f64>::new(lesion_config(variant, 1), 100 + seed).unwrap();
            let x = binary_images::<f64>(1, 32, 200 + seed);
            let mut r = stream(seed, &[5]);
            for _ in 0..4 {
                let p = r.random_range(0..32 * 32);
                let mut y = x.clone();
                y.data_mut()[p] = 1.0 - y.data()[p];
                let (_, ta) = m.predict_traced(&x, true).unwrap();
                let (_, tb) = m.predict_traced(&y, true).unwrap();
                let inner = changed(&ta.unwrap().horizontal[0], &tb.unwrap().horizontal[0]);
                let input = changed(&drive(&m, &x), &drive(&m, &y));
                let outside = inner.iter().zip(&input).filter(|(a, b)| **a && !**b).count();
                if variant == Variant::Td {
                    probes += 1;
                    leaks += outside;
                } else if outside > 0 {
                    h_spread += 1;
                }
            }
        }
    }
    verdict(
        h_mismatch == 0 && leaks == 0 && h_spread > 0,
        format!(
            "H: {h_mismatch} logits changed after randomizing top-down weights (5 seeds); \
             TD, T=1: {leaks} pixels changed beyond the input block's footprint over {probes} probes \
             (H control spread in {h_spread}/20)"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn generator_statistics() -> Verdict {
    let started = Instant::now();
    let mut notes = Vec::new();
    let mut ok = true;
    for (d, lo) in [(Difficulty::Easy, 170.0), (Difficulty::Intermediate, 110.0), (Difficulty::Hard, 70.0)] {
        let mut r = stream(4, &[d as u64]);
        let draws: Vec<_> = (0..100_000).map(|_| sample_transform_params(d, &mut r)).collect();
        let v = variance(&draws.iter().map(|t| t.rotation(0)).collect::<Vec<_>>());
        let v2 = variance(&draws.iter().map(|t| t.rotation(1)).collect::<Vec<_>>());
        let mags: Vec<f64> = (0..100_000).map(|_| sample_positions(d, &mut r).1.abs()).collect();
        let min = mags.iter().cloned().fold(f64::MAX, f64::min);
        let max = mags.iter().cloned().fold(f64::MIN, f64::max);
        ok &= (v - 900.0).abs() <= 45.0 && (v2 - 900.0).abs() <= 45.0;
        ok &= min >= lo && min - lo <= 1.0 && max <= 180.0 && 180.0 - max <= 1.0;
        notes.push(format!("{}: rot var {v:.0}/{v2:.0}, |Δθ| ∈ [{min:.2}, {max:.2}]", d.name()));
    }

    let mut violations = [0usize; 2];
    for (c, control) in [Control::Luminance, Control::Positional].into_iter().enumerate() {
        for (j, d) in Difficulty::ALL.into_iter().enumerate() {
            let gen = CabcGenerator::new(CabcParams { control, ..CabcParams::new(d, 0, 40 + j as u64) }).unwrap();
            let n = 10_000 / 3 + usize::from(j == 0);
            for i in 0..n {
                let s = gen.sample(i).unwrap();
                let bad = match control {
                    Control::Luminance => {
                        let v = &s.params["intensities"];
                        let (a, b) = (v[0].as_u64().unwrap() as u8, v[1].as_u64().unwrap() as u8);
                        !valid_intensities(a, b) || s.image.iter().any(|&p| p != 0 && p != MARKER && p != a && p != b)
                    }
                    _ => s.masks[0].dilate().intersects(&s.masks[1]),
                };
                violations[c] += bad as usize;
            }
        }
    }
    ok &= violations == [0, 0];
    let secs = started.elapsed().as_secs_f64();
    verdict(
        ok && secs <= 600.0,
        format!(
            "{}; luminance violations {}/10000, positional overlaps {}/10000; {secs:.0} s ≤ 600 s",
            notes.join("; "),
            violations[0],
            violations[1]
        ),
    )
}

// ---------------------------------------------------------------- 5

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cabc = CabcGenerator::new(CabcParams { image_size: 64, ..CabcParams::new(Difficulty::Hard, 120, 8) }).unwrap();
    let pf = PathfinderGenerator::new(PathfinderParams::new(9, 120, 8).with_size(64)).unwrap();
    let mut identical = true;
    let mut files = 0;
    for (name, g) in [("cabc", &cabc as &dyn Generator), ("pathfinder", &pf)] {
        let a = generate_dataset(g, &dir.path().join(format!("{name}-a")), 1).unwrap();
        let b = generate_dataset(g, &dir.path().join(format!("{name}-b")), 1).unwrap();
        let c = generate_dataset(g, &dir.path().join(format!("{name}-c")), 3).unwrap();
        let (ta, tb) = (tree(&a.root), tree(&b.root));
        files += ta.len();
        identical &= ta == tb && a.digest == c.digest;
    }

    let root = dir.path().join("cabc-a");
    let (tr, va) = (Dataset::load(&root, Split::Train).unwrap(), Dataset::load(&root, Split::Val).unwrap());
    let arch = ArchitectureConfig { image_size: 64, conv_channels: 6, ds_channels: [8, 12], ds_layers: 1, timesteps: 3, ..Default::default() };
    let cfg = TrainConfig { max_epochs: 2, patience: 1, batch_size: 16, ..Default::default() };
    let run = |k: &str| {
        let d = dir.path().join(k);
        let mut m = Model::<f32>::new(arch.clone(), init_seed(0, 1)).unwrap();
        let r = train::train(&mut m, &tr, &va, &cfg, 1e-3, train_seed(0, 1), Some(&d)).unwrap();
        (r.batch_losses.iter().map(|v| (*v as f32).to_bits()).collect::<Vec<_>>(), tree(&d.join("best")))
    };
    let (la, ca) = run("run-a");
    let (lb, cb) = run("run-b");
    verdict(
        identical && la == lb && ca == cb,
        format!(
            "{files} dataset files byte-identical across regeneration and 1 vs 3 workers: {identical}; \
             {} batch losses and checkpoint bit-identical: {}",
            la.len(),
            la == lb && ca == cb
        ),
    )
}

// ---------------------------------------------------------------- 6 7 8

/// Seconds for one forward/backward pass per image of the default model at
/// 64×64 and eight timesteps.
fn per_image_cost() -> f64 {
    let cfg = ArchitectureConfig { image_size: 64, ..Default::default() };
    let mut m = Model::<f32>::new(cfg, 0).unwrap();
    let (x, y) = (binary_images::<f32>(2, 64, 1), Tensor::new(&[2, 1, 1, 1], vec![1.0, 0.0]).unwrap());
    let started = Instant::now();
    let mut tape = Tape::new();
    let bound = m.store.bind(&mut tape, true);
    let xv = tape.constant(x);
    let (z, _) = m.forward(&mut tape, &bound, xv, BnMode::Train, false).unwrap();
    let l = m.loss(&mut tape, z, &y).unwrap();
    tape.backward(l).unwrap();
    started.elapsed().as_secs_f64() / 2.0
}

/// Hours for a 4-LR × 3-seed grid that stops at the earliest allowed epoch.
fn grid_hours(per_image: f64, train: usize, val: usize) -> f64 {
    let cfg = TrainConfig::default();
    // validation costs roughly a third of a training pass per image
    let epoch = per_image * (train as f64 + val as f64 / 3.0);
    epoch * (cfg.patience + 1) as f64 * (cfg.learning_rates.len() * 3) as f64 / 3600.0
}

fn in_memory(g: &dyn Generator) -> (Dataset, Dataset) {
    let dir = tempfile::tempdir().unwrap();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    generate_dataset(g, dir.path(), workers).unwrap();
    (Dataset::load(dir.path(), Split::Train).unwrap(), Dataset::load(dir.path(), Split::Val).unwrap())
}

fn pathfinder_lite(length: usize, seed: u64) -> (Dataset, Dataset) {
    let p = PathfinderParams { train_count: 5000, val_count: 500, ..PathfinderParams::new(length, 0, seed).with_size(64) };
    in_memory(&PathfinderGenerator::new(p).unwrap())
}

fn cabc_lite(seed: u64) -> (Dataset, Dataset) {
    let p = CabcParams { image_size: 64, train_count: 5000, val_count: 500, ..CabcParams::new(Difficulty::Hard, 0, seed) };
    in_memory(&CabcGenerator::new(p).unwrap())
}

fn best_of_grid(arch: &ArchitectureConfig, data: &(Dataset, Dataset)) -> f64 {
    let cfg = TrainConfig { seeds: 3, ..Default::default() };
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    sweep::<f32>(arch, &data.0, &data.1, &cfg, None, workers).unwrap().best_metric().unwrap_or(0.0)
}

fn lite(variant: Variant, timesteps: usize, task: Task) -> ArchitectureConfig {
    ArchitectureConfig { variant, timesteps, image_size: 64, task, ..Default::default() }
}

/// BU model whose learnable parameter count is closest to `target`'s.
fn parameter_matched_bu(target: &ArchitectureConfig) -> ArchitectureConfig {
    let count = |c: &ArchitectureConfig| Model::<f32>::new(c.clone(), 0).unwrap().store.learnable_count();
    let want = count(target);
    (1..=64)
        .map(|ch| ArchitectureConfig { variant: Variant::Bu, conv_channels: ch, ..target.clone() })
        .min_by_key(|c| count(c).abs_diff(want))
        .unwrap()
}

struct ToyResults {
    h_path: f64,
    bu_path: f64,
    h1_path: f64,
    td_cabc: f64,
    h_cabc: f64,
}

fn toy_results() -> ToyResults {
    let path = pathfinder_lite(9, 61);
    let cabc = cabc_lite(62);
    let h = lite(Variant::H, 8, Task::Classification);
    ToyResults {
        h_path: best_of_grid(&h, &path),
        bu_path: best_of_grid(&parameter_matched_bu(&h), &path),
        h1_path: best_of_grid(&lite(Variant::H, 1, Task::Classification), &path),
        td_cabc: best_of_grid(&lite(Variant::Td, 8, Task::Classification), &cabc),
        h_cabc: best_of_grid(&h, &cabc),
    }
}

fn segmentation_f1() -> f64 {
    let p = CabcParams { image_size: 64, train_count: 2000, val_count: 200, ..CabcParams::segmentation(63) };
    let data = in_memory(&CabcGenerator::new(p).unwrap());
    best_of_grid(&lite(Variant::Td, 8, Task::Segmentation), &data)
}

fn trace_panels() -> Verdict {
    let p = CabcParams { image_size: 64, ..CabcParams::segmentation(64) };
    let gen = CabcGenerator::new(p).unwrap();
    let n = 3;
    let mut px = Vec::new();
    for i in 0..n {
        px.extend(gen.sample(i).unwrap().image.iter().map(|&v| v as f32 / 255.0));
    }
    let x = Tensor::new(&[n, 1, 64, 64], px).unwrap();
    let mut m = Model::<f32>::new(lite(Variant::Td, 8, Task::Segmentation), 5).unwrap();
    let (_, tr) = m.predict_traced(&x, true).unwrap();
    let h1 = tr.unwrap().h1;
    let mut mismatches = 0usize;
    let mut rows = Vec::new();
    let mut counts = Vec::new();
    for b in 0..n {
        let panels = norm_differences(&h1, b);
        counts.push(panels.len());
        // independent recomputation straight from the saved states
        let norm = |t: &Tensor<f32>, p: usize| {
            let (_, c, h, w) = t.dims4().unwrap();
            let img = &t.data()[b * c * h * w..(b + 1) * c * h * w];
            (0..c).map(|k| (img[k * h * w + p] as f64) * (img[k * h * w + p] as f64)).sum::<f64>().sqrt()
        };
        for (k, panel) in panels.iter().enumerate() {
            for (p, &v) in panel.iter().enumerate() {
                mismatches += (v != norm(&h1[k + 1], p) - norm(&h1[k], p)) as usize;
            }
        }
        rows.push(panels);
    }
    let labels: Vec<String> = (0..n).map(|i| format!("{i:06}")).collect();
    let canvas = heatmap_grid("TRACE", &labels, &rows, 64, 1);
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("trace.png");
    canvas.save(&png).unwrap();
    let written = std::fs::read(&png).unwrap().starts_with(&[0x89, b'P', b'N', b'G']);
    verdict(
        counts.iter().all(|&c| c == 7) && mismatches == 0 && written,
        format!("T=8: panels per image {counts:?} (want 7), {mismatches} values differ from recomputation, PNG rendered: {written}"),
    )
}

// ---------------------------------------------------------------- 9

fn statistics_oracle() -> Verdict {
    let mut notes = Vec::new();
    let mut ok = true;
    for (images, raters, seed) in [(1000usize, 20usize, 1u64), (600, 30, 3), (800, 15, 4)] {
        let mut r = stream(seed, &[90]);
        let p: Vec<f64> = (0..images).map(|_| r.random_range(0.4..1.0)).collect();
        let c = splithalf_ceiling(&simulate_raters(&p, raters, seed), 1000, 95.0, seed).unwrap();
        let truth = analytic_reliability(&p, raters);
        ok &= (c.value - truth).abs() <= 0.05;
        notes.push(format!("ceiling {:.3} vs {truth:.3}", c.value));
    }
    let mut rejections = 0;
    for s in 0..500u64 {
        let mut r = stream(91, &[s]);
        let mut normal = || -> f64 { StandardNormal.sample(&mut r) };
        let h: Vec<f64> = (0..100).map(|_| normal()).collect();
        let m: Vec<f64> = h.iter().map(|v| v + normal()).collect();
        let a: Vec<f64> = m.iter().map(|v| v + normal()).collect();
        let b: Vec<f64> = m.iter().map(|v| v + normal()).collect();
        rejections += (bootstrap_compare(&h, &a, &b, 1000, s).unwrap() < 0.05) as usize;
    }
    let rate = rejections as f64 / 500.0;
    ok &= (0.03..=0.08).contains(&rate);
    let sb = spearman_brown(0.5);
    ok &= sb == 2.0 / 3.0;
    verdict(ok, format!("{}; null rejection {rate:.3} ∈ [0.03, 0.08]; SB(0.5) = {sb}", notes.join(", ")))
}

#[test]
fn acceptance() {
    let mut t = Tally::default();
    t.run("1", "gradient fidelity", gradient_fidelity);
    t.run("2", "fGRU invariants", fgru_invariants);
    t.run("3", "lesion correctness", lesions);
    t.run("4", "generator statistics", generator_statistics);
    t.run("5", "determinism", determinism);

    let toy = if full_run() {
        Some(toy_results())
    } else {
        let per = per_image_cost();
        let path = grid_hours(per, 5000, 500);
        let msg = |what: &str, grids: f64| {
            NotRun(format!(
                "{what}; needs at least {:.0} core-hours here ({:.2} s per image per training pass, \
                 early stopping at the earliest allowed epoch); set FGRU_FULL_ACCEPTANCE=1 to run",
                grids * path,
                per
            ))
        };
        t.run("6", "toy straining direction", || msg("five 4-LR x 3-seed grids on 5k-image 64x64 sets", 5.0));
        t.run("7", "recurrence benefit", || msg("shares criterion 6's H-CNN grid plus one T=1 grid", 1.0));
        t.run("8a", "segmentation f1", || msg("one grid on a 2k-image segmentation set", 2000.0 / 5000.0));
        None
    };
    if let Some(r) = &toy {
        t.run("6", "toy straining direction", || {
            verdict(
                r.h_path >= 0.85 && r.h_path - r.bu_path >= 0.10 && r.td_cabc >= 0.80 && r.td_cabc - r.h_cabc >= 0.05,
                format!(
                    "Pathfinder-lite H {:.3} (≥ 0.85), BU {:.3} (gap ≥ 0.10); cABC-lite TD {:.3} (≥ 0.80), H {:.3} (gap ≥ 0.05)",
                    r.h_path, r.bu_path, r.td_cabc, r.h_cabc
                ),
            )
        });
        t.run("7", "recurrence benefit", || {
            verdict(r.h_path - r.h1_path >= 0.05, format!("H T=8 {:.3} vs T=1 {:.3} (gap ≥ 0.05)", r.h_path, r.h1_path))
        });
        t.run("8a", "segmentation f1", || {
            let f1 = segmentation_f1();
            verdict(f1 > 0.6, format!("TD-CNN best pixel f1 {f1:.3} (> 0.6)"))
        });
    }
    t.run("8b", "trace rendering", trace_panels);
    t.run("9", "statistics oracle", statistics_oracle);

    let _ = writeln!(std::io::stderr(), "acceptance: {} passed, {} failed, {} not run", t.pass, t.fail, t.not_run);
    assert_eq!(t.fail, 0, "acceptance criteria failed");
}
