use super::kernels::{self, ConvGeom};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BnMode {
    #[default]
    Train,
    Eval,
}

/// Exponential moving average weight used by batch norm in train mode.
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of one batch-norm site, stored as a `(2, c)` tensor:
/// row 0 is the mean, row 1 the variance.
pub struct RunningStats;

impl RunningStats {
    pub fn init<R: Real>(channels: usize) -> Tensor<R> {
        Tensor::from_fn(&[2, channels], |i| if i < channels { R::zero() } else { R::one() })
    }
}

enum Op<R> {
    Leaf,
    Conv { x: usize, w: usize, b: Option<usize>, g: ConvGeom },
    ConvT { x: usize, w: usize, b: Option<usize>, g: ConvGeom },
    MaxPool { x: usize, arg: Vec<u32> },
    GlobalMax { x: usize, arg: Vec<u32> },
    BatchNorm { x: usize, scale: usize, bias: usize, xhat: Vec<R>, inv_std: Vec<R>, train: bool },
    Sigmoid { x: usize },
    Relu { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    ChannelMul { x: usize, s: usize },
    ChannelAdd { x: usize, s: usize },
    Mix { a: usize, b: usize, g: usize },
    Blend { out: usize, low: usize, beta: usize },
    Scale { x: usize, k: R },
    Sum { x: usize },
    Mean { x: usize },
    Bce { x: usize, target: Vec<R> },
}

struct Node<R> {
    value: Option<Tensor<R>>,
    needs_grad: bool,
    op: Op<R>,
}

/// Records primitive applications in execution order. Node indices are a
/// topological order, so `backward` simply walks them in reverse.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of the leaves that were marked learnable.
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<R>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid<R: Real>(v: R) -> R {
    R::one() / (R::one() + (-v).exp())
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, format!("{a:?} vs {b:?}")))
    }
}

fn acc<R: Real>(slot: &mut Option<Vec<R>>, g: Vec<R>) {
    match slot {
        Some(s) => s.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        self.nodes[v.0].value.as_ref().expect("value consumed")
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<R>, op: Op<R>, inputs: &[usize]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|&i| self.needs(i));
        self.nodes.push(Node { value: Some(value), needs_grad, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A learnable leaf; its gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, t: Tensor<R>) -> Var {
        self.nodes.push(Node { value: Some(t), needs_grad: true, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<R>) -> Var {
        self.nodes.push(Node { value: Some(t), needs_grad: false, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn geom(&self, op: &'static str, x: Var, w: Var, stride: usize, pad: usize) -> Result<ConvGeom> {
        let (n, c_in, h, wd) = self
            .value(x)
            .dims4()
            .ok_or_else(|| Error::shape(op, format!("input must be rank 4, got {:?}", self.shape(x))))?;
        let ws = self.shape(w);
        if ws.len() != 4 || ws[2] != ws[3] {
            return Err(Error::shape(op, format!("kernel must be (out, in, k, k), got {ws:?}")));
        }
        if ws[1] != c_in {
            return Err(Error::shape(op, format!("input has {c_in} channels, kernel expects {}", ws[1])));
        }
        if stride == 0 || h + 2 * pad < ws[2] || wd + 2 * pad < ws[2] {
            return Err(Error::shape(op, "kernel larger than padded input"));
        }
        Ok(ConvGeom { n, c_in, h, w: wd, c_out: ws[0], k: ws[2], stride, pad })
    }

    fn check_bias(&self, op: &'static str, b: Option<Var>, c: usize) -> Result<()> {
        match b {
            Some(b) if self.shape(b) != [c] => Err(Error::shape(op, format!("bias {:?} for {c} channels", self.shape(b)))),
            _ => Ok(()),
        }
    }

    /// Cross-correlation of `x: (n, c_in, h, w)` with `w: (c_out, c_in, k, k)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let g = self.geom("conv2d", x, w, stride, pad)?;
        self.check_bias("conv2d", b, g.c_out)?;
        let y = kernels::conv2d_forward(g, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let t = Tensor::new(&[g.n, g.c_out, g.oh(), g.ow()], y)?;
        let mut ins = vec![x.0, w.0];
        ins.extend(b.map(|b| b.0));
        self.push("conv2d", t, Op::Conv { x: x.0, w: w.0, b: b.map(|b| b.0), g }, &ins)
    }

    /// Convolution with odd kernel and "same" zero padding at stride 1.
    pub fn conv_same(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let k = self.shape(w).get(2).copied().unwrap_or(1);
        if k % 2 == 0 {
            return Err(Error::shape("conv2d", format!("same padding needs an odd kernel, got {k}")));
        }
        self.conv2d(x, w, b, 1, k / 2)
    }

    /// Transposed convolution; `w` is `(c_in, c_out, k, k)`. Output size is
    /// `(h - 1)·stride − 2·pad + k`, so `k = 4, stride = 2, pad = 1` doubles.
    pub fn conv2d_transpose(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let op = "conv2d_transpose";
        let (n, c_in, h, wd) = self
            .value(x)
            .dims4()
            .ok_or_else(|| Error::shape(op, "input must be rank 4"))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[2] != ws[3] || ws[0] != c_in {
            return Err(Error::shape(op, format!("kernel {ws:?} for {c_in} input channels")));
        }
        let k = ws[2];
        if stride == 0 || (h - 1) * stride + k < 2 * pad + 1 {
            return Err(Error::shape(op, "degenerate output size"));
        }
        let (oh, ow) = ((h - 1) * stride + k - 2 * pad, (wd - 1) * stride + k - 2 * pad);
        // geometry of the forward conv this op is the adjoint of
        let g = ConvGeom { n, c_in: ws[1], h: oh, w: ow, c_out: c_in, k, stride, pad };
        if g.oh() != h || g.ow() != wd {
            return Err(Error::shape(op, "stride/padding not invertible for this size"));
        }
        self.check_bias(op, b, ws[1])?;
        let y = kernels::conv_transpose_forward(g, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let t = Tensor::new(&[n, ws[1], oh, ow], y)?;
        let mut ins = vec![x.0, w.0];
        ins.extend(b.map(|b| b.0));
        self.push(op, t, Op::ConvT { x: x.0, w: w.0, b: b.map(|b| b.0), g }, &ins)
    }

    /// 2×2 max pooling with stride 2; odd edges are replicate-padded.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4().ok_or_else(|| Error::shape("maxpool2", "input must be rank 4"))?;
        let (y, arg) = kernels::maxpool2_forward(self.value(x).data(), n * c, h, w);
        let t = Tensor::new(&[n, c, h.div_ceil(2), w.div_ceil(2)], y)?;
        self.push("maxpool2", t, Op::MaxPool { x: x.0, arg }, &[x.0])
    }

    /// Max over the spatial dims, giving `(n, c, 1, 1)`.
    pub fn global_max_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self
            .value(x)
            .dims4()
            .ok_or_else(|| Error::shape("global_max_pool", "input must be rank 4"))?;
        let mut y = Vec::with_capacity(n * c);
        let mut arg = Vec::with_capacity(n * c);
        for plane in self.value(x).data().chunks(h * w) {
            let (i, v) = plane
                .iter()
                .enumerate()
                .fold((0, R::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            y.push(v);
            arg.push(i as u32);
        }
        let t = Tensor::new(&[n, c, 1, 1], y)?;
        self.push("global_max_pool", t, Op::GlobalMax { x: x.0, arg }, &[x.0])
    }

    /// `bias + scale ⊙ (x − E[x]) / sqrt(Var[x] + eta)` per channel. Train mode
    /// uses batch statistics and updates `running` (see [`RunningStats`]);
    /// eval mode uses `running`.
    pub fn batchnorm(
        &mut self,
        x: Var,
        scale: Var,
        bias: Var,
        running: &mut Tensor<R>,
        mode: BnMode,
        eta: f64,
    ) -> Result<Var> {
        let op = "batchnorm";
        let (n, c, h, w) = self.value(x).dims4().ok_or_else(|| Error::shape(op, "input must be rank 4"))?;
        if n == 0 {
            return Err(Error::Invalid("batchnorm on an empty batch".into()));
        }
        if self.shape(scale) != [c] || self.shape(bias) != [c] || running.shape() != [2, c] {
            return Err(Error::shape(op, format!("per-channel parameters must have {c} entries")));
        }
        let hw = h * w;
        let m = n * hw;
        let xs = self.value(x).data();
        let eta = R::of(eta);
        let (mean, var): (Vec<R>, Vec<R>) = match mode {
            BnMode::Train => {
                let mut mean = vec![R::zero(); c];
                let mut var = vec![R::zero(); c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for b in 0..n {
                        s += xs[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut q = 0.0f64;
                    for b in 0..n {
                        q += xs[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                            .iter()
                            .map(|v| (v.as_f64() - mu).powi(2))
                            .sum::<f64>();
                    }
                    mean[ch] = R::of(mu);
                    var[ch] = R::of(q / m as f64);
                    let mom = R::of(BN_MOMENTUM);
                    let unbiased = if m > 1 { q / (m - 1) as f64 } else { 0.0 };
                    let run = running.data_mut();
                    run[ch] = (R::one() - mom) * run[ch] + mom * mean[ch];
                    run[c + ch] = (R::one() - mom) * run[c + ch] + mom * R::of(unbiased);
                }
                (mean, var)
            }
            BnMode::Eval => (running.data()[..c].to_vec(), running.data()[c..].to_vec()),
        };
        let inv_std: Vec<R> = var.iter().map(|&v| R::one() / (v + eta).sqrt()).collect();
        let (sc, bi) = (self.value(scale).data(), self.value(bias).data());
        let mut xhat = vec![R::zero(); xs.len()];
        let mut y = vec![R::zero(); xs.len()];
        for b in 0..n {
            for ch in 0..c {
                let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                for i in r {
                    let xh = (xs[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    y[i] = bi[ch] + sc[ch] * xh;
                }
            }
        }
        let t = Tensor::new(&[n, c, h, w], y)?;
        let train = mode == BnMode::Train;
        self.push(op, t, Op::BatchNorm { x: x.0, scale: scale.0, bias: bias.0, xhat, inv_std, train }, &[x.0, scale.0, bias.0])
    }

    fn unary(&mut self, op_name: &'static str, x: Var, f: impl Fn(R) -> R, op: Op<R>) -> Result<Var> {
        let t = self.value(x).map(f);
        self.push(op_name, t, op, &[x.0])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid { x: x.0 })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(R::zero()), Op::Relu { x: x.0 })
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let k = R::of(k);
        self.unary("scale", x, |v| v * k, Op::Scale { x: x.0, k })
    }

    fn binary(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(R, R) -> R, op: Op<R>) -> Result<Var> {
        same_shape(op_name, self.shape(a), self.shape(b))?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(va.shape(), data)?;
        self.push(op_name, t, op, &[a.0, b.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |p, q| p + q, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |p, q| p - q, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |p, q| p * q, Op::Mul { a: a.0, b: b.0 })
    }

    fn channel_dims(&self, op: &'static str, x: Var, s: Var) -> Result<(usize, usize)> {
        let (_, c, h, w) = self.value(x).dims4().ok_or_else(|| Error::shape(op, "input must be rank 4"))?;
        if self.shape(s) != [c] {
            return Err(Error::shape(op, format!("per-channel vector {:?} against {c} channels", self.shape(s))));
        }
        Ok((c, h * w))
    }

    fn channelwise(&mut self, op_name: &'static str, x: Var, s: Var, f: impl Fn(R, R) -> R, op: Op<R>) -> Result<Var> {
        let (c, hw) = self.channel_dims(op_name, x, s)?;
        let sv = self.value(s).data();
        let xv = self.value(x);
        let data = xv.data().iter().enumerate().map(|(i, &v)| f(v, sv[(i / hw) % c])).collect();
        let t = Tensor::new(xv.shape(), data)?;
        self.push(op_name, t, op, &[x.0, s.0])
    }

    /// `x[:, c] · s[c]`
    pub fn channel_mul(&mut self, x: Var, s: Var) -> Result<Var> {
        self.channelwise("channel_mul", x, s, |v, k| v * k, Op::ChannelMul { x: x.0, s: s.0 })
    }

    /// `x[:, c] + s[c]`
    pub fn channel_add(&mut self, x: Var, s: Var) -> Result<Var> {
        self.channelwise("channel_add", x, s, |v, k| v + k, Op::ChannelAdd { x: x.0, s: s.0 })
    }

    /// Gated convex combination `(1 − g) ⊙ a + g ⊙ b`.
    pub fn mix(&mut self, a: Var, b: Var, g: Var) -> Result<Var> {
        same_shape("mix", self.shape(a), self.shape(b))?;
        same_shape("mix", self.shape(a), self.shape(g))?;
        let (va, vb, vg) = (self.value(a).data(), self.value(b).data(), self.value(g).data());
        let data = (0..va.len()).map(|i| (R::one() - vg[i]) * va[i] + vg[i] * vb[i]).collect();
        let t = Tensor::new(self.shape(a), data)?;
        self.push("mix", t, Op::Mix { a: a.0, b: b.0, g: g.0 }, &[a.0, b.0, g.0])
    }

    /// Per-channel gated blend `(1 − σ(β)) ⊙ out + σ(β) ⊙ low`.
    pub fn blend(&mut self, low: Var, out: Var, beta: Var) -> Result<Var> {
        same_shape("blend", self.shape(low), self.shape(out))?;
        let (c, hw) = self.channel_dims("blend", out, beta)?;
        let s: Vec<R> = self.value(beta).data().iter().map(|&b| sigmoid(b)).collect();
        let (vo, vl) = (self.value(out).data(), self.value(low).data());
        let data = (0..vo.len())
            .map(|i| {
                let g = s[(i / hw) % c];
                (R::one() - g) * vo[i] + g * vl[i]
            })
            .collect();
        let t = Tensor::new(self.shape(out), data)?;
        self.push("blend", t, Op::Blend { out: out.0, low: low.0, beta: beta.0 }, &[out.0, low.0, beta.0])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let s = v.sum() / R::of(v.len() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean { x: x.0 }, &[x.0])
    }

    /// Mean binary cross-entropy between `logits` and a same-shaped target
    /// with entries in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &Tensor<R>) -> Result<Var> {
        same_shape("bce_with_logits", self.shape(logits), target.shape())?;
        if target.data().iter().any(|&t| t < R::zero() || t > R::one()) {
            return Err(Error::Invalid("labels must lie in [0, 1]".into()));
        }
        let xs = self.value(logits).data();
        let n = R::of(xs.len() as f64);
        let total: f64 = xs
            .iter()
            .zip(target.data())
            .map(|(&x, &y)| {
                let (x, y) = (x.as_f64(), y.as_f64());
                x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
            })
            .sum();
        let loss = Tensor::scalar(R::of(total) / n);
        self.push("bce_with_logits", loss, Op::Bce { x: logits.0, target: target.data().to_vec() }, &[logits.0])
    }

    /// Hash of every relu on/off decision and pooling argmax recorded so far.
    /// Two evaluations with equal patterns lie in the same smooth piece.
    pub fn activation_pattern(&self) -> u64 {
        use std::hash::{DefaultHasher, Hash, Hasher};
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.val(*x) {
                        (*v > R::zero()).hash(&mut h);
                    }
                }
                Op::MaxPool { arg, .. } | Op::GlobalMax { arg, .. } => arg.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(mut self, loss: Var) -> Result<Gradients<R>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<R>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![R::one()]);
        let mut out: Vec<Option<Tensor<R>>> = (0..n).map(|_| None).collect();
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else {
                self.nodes[i].value = None;
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            if let Op::Leaf = op {
                let shape = self.nodes[i].value.as_ref().unwrap().shape().to_vec();
                out[i] = Some(Tensor::new(&shape, gy)?);
                continue;
            }
            self.backprop_node(i, op, gy, &mut grads);
            self.nodes[i].value = None;
        }
        Ok(Gradients { grads: out })
    }

    fn val(&self, i: usize) -> &[R] {
        self.nodes[i].value.as_ref().expect("input value consumed").data()
    }

    fn backprop_node(&self, i: usize, op: Op<R>, gy: Vec<R>, grads: &mut [Option<Vec<R>>]) {
        let need = |j: usize| self.nodes[j].needs_grad;
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, g } => {
                let (dx, dw) = kernels::conv2d_backward(g, self.val(x), self.val(w), &gy, need(x), need(w));
                if let Some(dx) = dx {
                    acc(&mut grads[x], dx);
                }
                if let Some(dw) = dw {
                    acc(&mut grads[w], dw);
                }
                if let Some(b) = b.filter(|&b| need(b)) {
                    acc(&mut grads[b], channel_sums(&gy, g.n, g.c_out, g.oh() * g.ow()));
                }
            }
            Op::ConvT { x, w, b, g } => {
                let (dx, dw) = kernels::conv_transpose_backward(g, self.val(x), self.val(w), &gy, need(x), need(w));
                if let Some(dx) = dx {
                    acc(&mut grads[x], dx);
                }
                if let Some(dw) = dw {
                    acc(&mut grads[w], dw);
                }
                if let Some(b) = b.filter(|&b| need(b)) {
                    acc(&mut grads[b], channel_sums(&gy, g.n, g.c_in, g.h * g.w));
                }
            }
            Op::MaxPool { x, arg } => {
                let (n, c, h, w) = self.nodes[x].value.as_ref().unwrap().dims4().unwrap();
                let per = h.div_ceil(2) * w.div_ceil(2);
                let mut dx = vec![R::zero(); n * c * h * w];
                for (o, (&a, &g)) in arg.iter().zip(&gy).enumerate() {
                    dx[(o / per) * h * w + a as usize] += g;
                }
                acc(&mut grads[x], dx);
            }
            Op::GlobalMax { x, arg } => {
                let (n, c, h, w) = self.nodes[x].value.as_ref().unwrap().dims4().unwrap();
                let mut dx = vec![R::zero(); n * c * h * w];
                for (p, (&a, &g)) in arg.iter().zip(&gy).enumerate() {
                    dx[p * h * w + a as usize] += g;
                }
                acc(&mut grads[x], dx);
            }
            Op::BatchNorm { x, scale, bias, xhat, inv_std, train } => {
                let (n, c, h, w) = self.nodes[x].value.as_ref().unwrap().dims4().unwrap();
                let hw = h * w;
                let m = R::of((n * hw) as f64);
                let mut sum_g = vec![R::zero(); c];
                let mut sum_gx = vec![R::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        for j in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                            sum_g[ch] += gy[j];
                            sum_gx[ch] += gy[j] * xhat[j];
                        }
                    }
                }
                if need(x) {
                    let sc = self.val(scale);
                    let mut dx = vec![R::zero(); gy.len()];
                    for b in 0..n {
                        for ch in 0..c {
                            let k = sc[ch] * inv_std[ch];
                            for j in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                                dx[j] = if train {
                                    k * (gy[j] - (sum_g[ch] + xhat[j] * sum_gx[ch]) / m)
                                } else {
                                    k * gy[j]
                                };
                            }
                        }
                    }
                    acc(&mut grads[x], dx);
                }
                if need(scale) {
                    acc(&mut grads[scale], sum_gx);
                }
                if need(bias) {
                    acc(&mut grads[bias], sum_g);
                }
            }
            Op::Sigmoid { x } => {
                let y = self.val(i);
                acc(&mut grads[x], gy.iter().zip(y).map(|(&g, &s)| g * s * (R::one() - s)).collect());
            }
            Op::Relu { x } => {
                let xv = self.val(x);
                acc(&mut grads[x], gy.iter().zip(xv).map(|(&g, &v)| if v > R::zero() { g } else { R::zero() }).collect());
            }
            Op::Scale { x, k } => acc(&mut grads[x], gy.iter().map(|&g| g * k).collect()),
            Op::Add { a, b } => {
                if need(a) {
                    acc(&mut grads[a], gy.clone());
                }
                if need(b) {
                    acc(&mut grads[b], gy);
                }
            }
            Op::Sub { a, b } => {
                if need(a) {
                    acc(&mut grads[a], gy.clone());
                }
                if need(b) {
                    acc(&mut grads[b], gy.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul { a, b } => {
                if need(a) {
                    acc(&mut grads[a], gy.iter().zip(self.val(b)).map(|(&g, &v)| g * v).collect());
                }
                if need(b) {
                    acc(&mut grads[b], gy.iter().zip(self.val(a)).map(|(&g, &v)| g * v).collect());
                }
            }
            Op::ChannelMul { x, s } => {
                let (n, c, h, w) = self.nodes[x].value.as_ref().unwrap().dims4().unwrap();
                let hw = h * w;
                let sv = self.val(s);
                if need(x) {
                    acc(&mut grads[x], gy.iter().enumerate().map(|(j, &g)| g * sv[(j / hw) % c]).collect());
                }
                if need(s) {
                    let xv = self.val(x);
                    let mut ds = vec![R::zero(); c];
                    for j in 0..n * c * hw {
                        ds[(j / hw) % c] += gy[j] * xv[j];
                    }
                    acc(&mut grads[s], ds);
                }
            }
            Op::ChannelAdd { x, s } => {
                let (n, c, h, w) = self.nodes[x].value.as_ref().unwrap().dims4().unwrap();
                if need(s) {
                    acc(&mut grads[s], channel_sums(&gy, n, c, h * w));
                }
                if need(x) {
                    acc(&mut grads[x], gy);
                }
            }
            Op::Mix { a, b, g } => {
                let (va, vb, vg) = (self.val(a), self.val(b), self.val(g));
                if need(a) {
                    acc(&mut grads[a], gy.iter().zip(vg).map(|(&d, &q)| d * (R::one() - q)).collect());
                }
                if need(b) {
                    acc(&mut grads[b], gy.iter().zip(vg).map(|(&d, &q)| d * q).collect());
                }
                if need(g) {
                    acc(&mut grads[g], (0..gy.len()).map(|j| gy[j] * (vb[j] - va[j])).collect());
                }
            }
            Op::Blend { out, low, beta } => {
                let (n, c, h, w) = self.nodes[out].value.as_ref().unwrap().dims4().unwrap();
                let hw = h * w;
                let s: Vec<R> = self.val(beta).iter().map(|&b| sigmoid(b)).collect();
                let ch = |j: usize| (j / hw) % c;
                if need(out) {
                    acc(&mut grads[out], gy.iter().enumerate().map(|(j, &d)| d * (R::one() - s[ch(j)])).collect());
                }
                if need(low) {
                    acc(&mut grads[low], gy.iter().enumerate().map(|(j, &d)| d * s[ch(j)]).collect());
                }
                if need(beta) {
                    let (vo, vl) = (self.val(out), self.val(low));
                    let mut db = vec![R::zero(); c];
                    for j in 0..n * c * hw {
                        let k = ch(j);
                        db[k] += gy[j] * (vl[j] - vo[j]) * s[k] * (R::one() - s[k]);
                    }
                    acc(&mut grads[beta], db);
                }
            }
            Op::Sum { x } => {
                let len = self.val(x).len();
                acc(&mut grads[x], vec![gy[0]; len]);
            }
            Op::Mean { x } => {
                let len = self.val(x).len();
                acc(&mut grads[x], vec![gy[0] / R::of(len as f64); len]);
            }
            Op::Bce { x, target } => {
                let xv = self.val(x);
                let k = gy[0] / R::of(xv.len() as f64);
                acc(&mut grads[x], xv.iter().zip(&target).map(|(&v, &t)| k * (sigmoid(v) - t)).collect());
            }
        }
    }
}

fn channel_sums<R: Real>(g: &[R], n: usize, c: usize, hw: usize) -> Vec<R> {
    let mut s = vec![R::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            s[ch] += g[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<R>();
        }
    }
    s
}
