mod common;

use common::{gradcheck, rand_away_from_zero, randn, rng};
use fgru_core::tensor::{BnMode, RunningStats, Tape, Tensor};
use rand::Rng;

const TOL: f64 = 1e-5;

fn assert_ok(name: &str, c: fgru_core::tensor::gradcheck::Comparison) {
    assert!(c.compared > 0, "{name}: nothing compared");
    assert!(c.rel_error <= TOL, "{name}: rel error {:.3e} ({} compared, {} skipped)", c.rel_error, c.compared, c.skipped);
}

#[test]
fn conv_identity_kernel() {
    let mut r = rng(1);
    let x = randn(&[2, 1, 5, 4], &mut r);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let y = tape.conv2d(xv, w, None, 1, 0).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn conv_of_zeros_is_zero() {
    let mut r = rng(2);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::<f64>::zeros(&[1, 3, 6, 6]));
    let w = tape.constant(randn(&[4, 3, 3, 3], &mut r));
    let y = tape.conv_same(x, w, None).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_shape_errors() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 3, 6, 6]));
    let w = tape.constant(Tensor::zeros(&[4, 2, 3, 3]));
    assert!(tape.conv_same(x, w, None).is_err());
    let w = tape.constant(Tensor::zeros(&[4, 3, 2, 2]));
    assert!(tape.conv_same(x, w, None).is_err());
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut r = rng(3);
    let x = randn(&[2, 3, 5, 5], &mut r);
    let w = randn(&[4, 3, 3, 3], &mut r);
    let c = gradcheck(&[x, w], 3, |t, v| t.conv2d(v[0], v[1], None, 1, 1));
    assert_ok("conv2d", c);
}

#[test]
fn conv_gradients_over_random_geometries() {
    for seed in 0..20u64 {
        let mut r = rng(100 + seed);
        let c_in = r.random_range(1..4);
        let c_out = r.random_range(1..4);
        let k = [1, 3, 5][r.random_range(0..3)];
        let stride = r.random_range(1..3);
        let hw = r.random_range(k.max(3)..8);
        let x = randn(&[r.random_range(1..3), c_in, hw, hw], &mut r);
        let w = randn(&[c_out, c_in, k, k], &mut r);
        let b = randn(&[c_out], &mut r);
        let c = gradcheck(&[x, w, b], seed, |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, k / 2));
        assert_ok(&format!("conv2d seed {seed}"), c);
    }
}

#[test]
fn transpose_is_adjoint_of_strided_conv() {
    for seed in 0..20u64 {
        let mut r = rng(200 + seed);
        let (c_small, c_big) = (r.random_range(1..5), r.random_range(1..5));
        let h = r.random_range(1..6);
        let n = r.random_range(1..3);
        // forward conv maps (c_big, 2h, 2h) -> (c_small, h, h); w is (c_small, c_big, 4, 4)
        let w = randn(&[c_small, c_big, 4, 4], &mut r);
        let x = randn(&[n, c_big, 2 * h, 2 * h], &mut r);
        let y = randn(&[n, c_small, h, h], &mut r);
        let mut tape = Tape::new();
        let (xv, yv, wv) = (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(w));
        let cx = tape.conv2d(xv, wv, None, 2, 1).unwrap();
        let ty = tape.conv2d_transpose(yv, wv, None, 2, 1).unwrap();
        let lhs = tape.value(cx).dot(&y);
        let rhs = x.dot(tape.value(ty));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300), "seed {seed}: {lhs} vs {rhs}");
    }
}

#[test]
fn transpose_shape_and_zero() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let w = tape.constant(Tensor::full(&[1, 1, 4, 4], 0.3));
    let y = tape.conv2d_transpose(x, w, None, 2, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 4, 4]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn transpose_gradients() {
    for seed in 0..20u64 {
        let mut r = rng(300 + seed);
        let x = randn(&[r.random_range(1..3), 3, 3, 3], &mut r);
        let w = randn(&[3, 2, 4, 4], &mut r);
        let b = randn(&[2], &mut r);
        let c = gradcheck(&[x, w, b], seed, |t, v| t.conv2d_transpose(v[0], v[1], Some(v[2]), 2, 1));
        assert_ok(&format!("conv2d_transpose seed {seed}"), c);
    }
}

#[test]
fn maxpool_definition() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let y = tape.maxpool2(x).unwrap();
    assert_eq!(tape.value(y).data(), &[4.0]);
    let c = tape.constant(Tensor::full(&[2, 3, 4, 6], 1.5));
    let y = tape.maxpool2(c).unwrap();
    assert_eq!(tape.shape(y), &[2, 3, 2, 3]);
    assert!(tape.value(y).data().iter().all(|&v| v == 1.5));
}

/// Distinct values so no pooling window has a tie.
fn untied(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        vals.swap(i, r.random_range(0..=i));
    }
    Tensor::new(shape, vals).unwrap()
}

#[test]
fn maxpool_and_global_max_gradients() {
    for seed in 0..20u64 {
        let mut r = rng(400 + seed);
        let hw = r.random_range(2..7);
        let x = untied(&[2, 2, hw, hw + 1], &mut r);
        assert_ok(&format!("maxpool2 seed {seed}"), gradcheck(&[x.clone()], seed, |t, v| t.maxpool2(v[0])));
        assert_ok(&format!("global_max seed {seed}"), gradcheck(&[x], seed, |t, v| t.global_max_pool(v[0])));
    }
}

#[test]
fn global_max_examples() {
    let mut tape = Tape::<f64>::new();
    let c = tape.constant(Tensor::full(&[1, 2, 3, 3], -0.7));
    let y = tape.global_max_pool(c).unwrap();
    assert_eq!(tape.value(y).data(), &[-0.7, -0.7]);
    let mut hot = Tensor::zeros(&[1, 1, 4, 4]);
    hot.data_mut()[9] = 3.0;
    let h = tape.constant(hot);
    let y = tape.global_max_pool(h).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0]);
}

#[test]
fn batchnorm_examples() {
    let mut r = rng(5);
    // standardize per channel so the normalized input is a fixed point
    let raw = randn(&[4, 2, 3, 3], &mut r);
    let mut x = raw.clone();
    for ch in 0..2 {
        let idx: Vec<usize> = (0..x.len()).filter(|i| (i / 9) % 2 == ch).collect();
        let mean = idx.iter().map(|&i| raw.data()[i]).sum::<f64>() / idx.len() as f64;
        let var = idx.iter().map(|&i| (raw.data()[i] - mean).powi(2)).sum::<f64>() / idx.len() as f64;
        for &i in &idx {
            x.data_mut()[i] = (raw.data()[i] - mean) / var.sqrt();
        }
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let one = tape.constant(Tensor::full(&[2], 1.0));
    let zero = tape.constant(Tensor::zeros(&[2]));
    let mut run = RunningStats::init(2);
    let y = tape.batchnorm(xv, one, zero, &mut run, BnMode::Train, 1e-12).unwrap();
    for (a, b) in tape.value(y).data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-9);
    }
    // running stats moved toward the batch statistics
    assert!((run.data()[2] - 1.0).abs() < 0.1 && run.data()[0].abs() < 1e-12);

    let nu = tape.constant(Tensor::new(&[2], vec![0.3, -2.0]).unwrap());
    let delta0 = tape.constant(Tensor::zeros(&[2]));
    let y = tape.batchnorm(xv, delta0, nu, &mut run, BnMode::Train, 1e-5).unwrap();
    for (i, &v) in tape.value(y).data().iter().enumerate() {
        assert_eq!(v, if (i / 9) % 2 == 0 { 0.3 } else { -2.0 });
    }

    let empty = tape.constant(Tensor::zeros(&[0, 2, 3, 3]));
    assert!(tape.batchnorm(empty, one, zero, &mut run, BnMode::Train, 1e-5).is_err());
}

#[test]
fn batchnorm_eval_is_affine() {
    let mut r = rng(6);
    let mut run = Tensor::new(&[2, 3], vec![0.1, -0.2, 0.5, 2.0, 0.5, 1.5]).unwrap();
    let scale = randn(&[3], &mut r);
    let bias = randn(&[3], &mut r);
    let a = randn(&[2, 3, 4, 4], &mut r);
    let b = randn(&[2, 3, 4, 4], &mut r);
    let eval = |x: &Tensor<f64>, run: &mut Tensor<f64>| {
        let mut tape = Tape::new();
        let (xv, s, bb) = (tape.constant(x.clone()), tape.constant(scale.clone()), tape.constant(bias.clone()));
        let y = tape.batchnorm(xv, s, bb, run, BnMode::Eval, 1e-5).unwrap();
        tape.value(y).clone()
    };
    let before = run.clone();
    let (ya, yb) = (eval(&a, &mut run), eval(&b, &mut run));
    assert_eq!(run, before, "eval must not touch running statistics");
    // f(λa + (1−λ)b) = λ f(a) + (1−λ) f(b)
    let lam = 0.3;
    let mixed = Tensor::from_fn(a.shape(), |i| lam * a.data()[i] + (1.0 - lam) * b.data()[i]);
    let ym = eval(&mixed, &mut run);
    for i in 0..ym.len() {
        assert!((ym.data()[i] - (lam * ya.data()[i] + (1.0 - lam) * yb.data()[i])).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_gradients() {
    for seed in 0..20u64 {
        let mut r = rng(500 + seed);
        let x = randn(&[r.random_range(2..4), 3, 3, 3], &mut r);
        let s = randn(&[3], &mut r);
        let b = randn(&[3], &mut r);
        for mode in [BnMode::Train, BnMode::Eval] {
            let c = gradcheck(&[x.clone(), s.clone(), b.clone()], seed, |t, v| {
                let mut run = Tensor::new(&[2, 3], vec![0.1, 0.0, -0.1, 0.9, 1.1, 1.3]).unwrap();
                t.batchnorm(v[0], v[1], v[2], &mut run, mode, 1e-5)
            });
            assert_ok(&format!("batchnorm {mode:?} seed {seed}"), c);
        }
    }
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[2], vec![-1.0, 0.0]).unwrap());
    let r = tape.relu(x).unwrap();
    let s = tape.sigmoid(x).unwrap();
    assert_eq!(tape.value(r).data(), &[0.0, 0.0]);
    assert_eq!(tape.value(s).data()[1], 0.5);
    let img = tape.constant(Tensor::zeros(&[1, 2, 2, 2]));
    let bad = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.channel_mul(img, bad).is_err());
    assert!(tape.add(img, x).is_err());
}

#[test]
fn elementwise_gradients() {
    for seed in 0..20u64 {
        let mut r = rng(600 + seed);
        let shape = [r.random_range(1..3), 3, r.random_range(1..4), r.random_range(1..4)];
        let a = rand_away_from_zero(&shape, &mut r);
        let b = randn(&shape, &mut r);
        let g = Tensor::from_fn(&shape, |_| r.random_range(0.05..0.95));
        let s = randn(&[3], &mut r);
        assert_ok("sigmoid", gradcheck(&[b.clone()], seed, |t, v| t.sigmoid(v[0])));
        assert_ok("relu", gradcheck(&[a.clone()], seed, |t, v| t.relu(v[0])));
        assert_ok("add", gradcheck(&[a.clone(), b.clone()], seed, |t, v| t.add(v[0], v[1])));
        assert_ok("sub", gradcheck(&[a.clone(), b.clone()], seed, |t, v| t.sub(v[0], v[1])));
        assert_ok("mul", gradcheck(&[a.clone(), b.clone()], seed, |t, v| t.mul(v[0], v[1])));
        assert_ok("channel_mul", gradcheck(&[b.clone(), s.clone()], seed, |t, v| t.channel_mul(v[0], v[1])));
        assert_ok("channel_add", gradcheck(&[b.clone(), s.clone()], seed, |t, v| t.channel_add(v[0], v[1])));
        assert_ok("mix", gradcheck(&[a.clone(), b.clone(), g.clone()], seed, |t, v| t.mix(v[0], v[1], v[2])));
        assert_ok("blend", gradcheck(&[a.clone(), b.clone(), s.clone()], seed, |t, v| t.blend(v[0], v[1], v[2])));
        assert_ok("scale", gradcheck(&[b.clone()], seed, |t, v| t.scale(v[0], -1.7)));
    }
}

#[test]
fn bce_gradients_and_values() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros(&[1]));
    let l = tape.bce_with_logits(z, &Tensor::full(&[1], 1.0)).unwrap();
    assert!((tape.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15);
    let big = tape.constant(Tensor::new(&[2], vec![40.0, -40.0]).unwrap());
    let l = tape.bce_with_logits(big, &Tensor::new(&[2], vec![1.0, 0.0]).unwrap()).unwrap();
    assert!(tape.value(l).item() < 1e-6);
    assert!(tape.bce_with_logits(z, &Tensor::full(&[1], 2.0)).is_err());

    for seed in 0..20u64 {
        let mut r = rng(700 + seed);
        let x = randn(&[6], &mut r);
        let y = Tensor::from_fn(&[6], |_| if r.random_bool(0.5) { 1.0 } else { 0.0 });
        let c = gradcheck(&[x], seed, |t, v| t.bce_with_logits(v[0], &y));
        assert_ok("bce", c);
    }
}

#[test]
fn backward_basics() {
    let mut r = rng(8);
    let p = randn(&[3, 2], &mut r);
    let mut tape = Tape::new();
    let v = tape.param(p.clone());
    let s = tape.sum(v).unwrap();
    let g = tape.backward(s).unwrap();
    assert!(g.get(v).unwrap().data().iter().all(|&x| x == 1.0));

    let mut tape = Tape::new();
    let v = tape.param(p.clone());
    let sq = tape.mul(v, v).unwrap();
    let s = tape.sum(sq).unwrap();
    let half = tape.scale(s, 0.5).unwrap();
    let g = tape.backward(half).unwrap();
    assert_eq!(g.get(v).unwrap(), &p);

    let mut tape = Tape::new();
    let v = tape.param(p);
    assert!(tape.backward(v).is_err(), "non-scalar loss must be rejected");
}

#[test]
fn non_finite_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::new(&[1], vec![f64::MAX]).unwrap());
    assert!(tape.add(x, x).is_err());
}

#[test]
fn forward_is_deterministic() {
    let mut r = rng(9);
    let x = randn(&[2, 3, 7, 7], &mut r);
    let w = randn(&[5, 3, 5, 5], &mut r);
    let run = || {
        let mut tape = Tape::new();
        let (a, b) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let y = tape.conv_same(a, b, None).unwrap();
        tape.value(y).clone()
    };
    assert_eq!(run(), run());
}
