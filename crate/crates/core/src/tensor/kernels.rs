//! Raw convolution and pooling kernels. Everything here works on one image
//! at a time in (channel, height, width) order; batching is done by callers.

use super::Real;

pub fn conv_out_dim(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Unfold one `(c, h, w)` image into a `(c·k·k, oh·ow)` column matrix.
pub fn im2col<R: Real>(
    x: &[R],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cols: &mut [R],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let plane = oh * ow;
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(R::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // contiguous run with zero fringes
                        let off = kx as isize - pad as isize;
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize + off;
                            *v = if ix >= 0 && ix < w as isize { srow[ix as usize] } else { R::zero() };
                        }
                    } else {
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *v = if ix >= 0 && ix < w as isize { srow[ix as usize] } else { R::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image buffer.
pub fn col2im<R: Real>(
    cols: &[R],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    x: &mut [R],
) {
    let oh = conv_out_dim(h, k, stride, pad);
    let ow = conv_out_dim(w, k, stride, pad);
    let plane = oh * ow;
    for ch in 0..c {
        let dst = &mut x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            drow[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn oh(&self) -> usize {
        conv_out_dim(self.h, self.k, self.stride, self.pad)
    }

    pub fn ow(&self) -> usize {
        conv_out_dim(self.w, self.k, self.stride, self.pad)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn ckk(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// Cross-correlation `y = w ⋆ x + b`; `w` is `(c_out, c_in, k, k)`.
pub(crate) fn conv2d_forward<R: Real>(g: ConvGeom, x: &[R], wt: &[R], bias: Option<&[R]>) -> Vec<R> {
    let (oh, ow) = (g.oh(), g.ow());
    let plane = oh * ow;
    let mut y = vec![R::zero(); g.n * g.c_out * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![R::zero(); g.ckk() * plane] };
    let in_per = g.c_in * g.h * g.w;
    for b in 0..g.n {
        let xb = &x[b * in_per..(b + 1) * in_per];
        let src: &[R] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g.c_in, g.h, g.w, g.k, g.stride, g.pad, &mut cols);
            &cols
        };
        let yb = &mut y[b * g.c_out * plane..(b + 1) * g.c_out * plane];
        if let Some(bias) = bias {
            for (o, chunk) in yb.chunks_mut(plane).enumerate() {
                chunk.fill(bias[o]);
            }
        }
        let beta = if bias.is_some() { R::one() } else { R::zero() };
        R::gemm(g.c_out, g.ckk(), plane, wt, false, src, false, beta, yb);
    }
    y
}

/// Returns `(dx, dw)`; either may be skipped.
pub(crate) fn conv2d_backward<R: Real>(
    g: ConvGeom,
    x: &[R],
    wt: &[R],
    dy: &[R],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<R>>, Option<Vec<R>>) {
    let (oh, ow) = (g.oh(), g.ow());
    let plane = oh * ow;
    let in_per = g.c_in * g.h * g.w;
    let mut dx = need_dx.then(|| vec![R::zero(); g.n * in_per]);
    let mut dw = need_dw.then(|| vec![R::zero(); g.c_out * g.ckk()]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![R::zero(); g.ckk() * plane] };
    for b in 0..g.n {
        let dyb = &dy[b * g.c_out * plane..(b + 1) * g.c_out * plane];
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_per..(b + 1) * in_per];
            let src: &[R] = if g.is_pointwise() {
                xb
            } else {
                im2col(xb, g.c_in, g.h, g.w, g.k, g.stride, g.pad, &mut cols);
                &cols
            };
            R::gemm(g.c_out, plane, g.ckk(), dyb, false, src, true, R::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_per..(b + 1) * in_per];
            if g.is_pointwise() {
                R::gemm(g.ckk(), g.c_out, plane, wt, true, dyb, false, R::zero(), dxb);
            } else {
                R::gemm(g.ckk(), g.c_out, plane, wt, true, dyb, false, R::zero(), &mut cols);
                col2im(&cols, g.c_in, g.h, g.w, g.k, g.stride, g.pad, dxb);
            }
        }
    }
    (dx, dw)
}

/// Transposed convolution, the adjoint of [`conv2d_forward`] with geometry
/// `g` (which describes the *forward* conv from the large map to the small
/// one). `x` is `(n, c_out, oh, ow)`, `w` is `(c_out, c_in, k, k)` and the
/// result is `(n, c_in, h, w)`.
pub(crate) fn conv_transpose_forward<R: Real>(g: ConvGeom, x: &[R], wt: &[R], bias: Option<&[R]>) -> Vec<R> {
    let plane = g.oh() * g.ow();
    let out_per = g.c_in * g.h * g.w;
    let mut y = vec![R::zero(); g.n * out_per];
    let mut cols = vec![R::zero(); g.ckk() * plane];
    for b in 0..g.n {
        let xb = &x[b * g.c_out * plane..(b + 1) * g.c_out * plane];
        R::gemm(g.ckk(), g.c_out, plane, wt, true, xb, false, R::zero(), &mut cols);
        let yb = &mut y[b * out_per..(b + 1) * out_per];
        if let Some(bias) = bias {
            for (ch, chunk) in yb.chunks_mut(g.h * g.w).enumerate() {
                chunk.fill(bias[ch]);
            }
        }
        col2im(&cols, g.c_in, g.h, g.w, g.k, g.stride, g.pad, yb);
    }
    y
}

pub(crate) fn conv_transpose_backward<R: Real>(
    g: ConvGeom,
    x: &[R],
    wt: &[R],
    dy: &[R],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<R>>, Option<Vec<R>>) {
    let plane = g.oh() * g.ow();
    let out_per = g.c_in * g.h * g.w;
    let mut dx = need_dx.then(|| vec![R::zero(); g.n * g.c_out * plane]);
    let mut dw = need_dw.then(|| vec![R::zero(); g.c_out * g.ckk()]);
    let mut cols = vec![R::zero(); g.ckk() * plane];
    for b in 0..g.n {
        let dyb = &dy[b * out_per..(b + 1) * out_per];
        im2col(dyb, g.c_in, g.h, g.w, g.k, g.stride, g.pad, &mut cols);
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * g.c_out * plane..(b + 1) * g.c_out * plane];
            R::gemm(g.c_out, g.ckk(), plane, wt, false, &cols, false, R::zero(), dxb);
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * g.c_out * plane..(b + 1) * g.c_out * plane];
            R::gemm(g.c_out, plane, g.ckk(), xb, false, &cols, true, R::one(), dw);
        }
    }
    (dx, dw)
}

/// 2×2/2 max pooling over `(n·c)` planes. Odd trailing rows/columns are
/// replicate-padded. Returns the pooled values and the flat argmax index
/// of each output within its input plane.
pub(crate) fn maxpool2_forward<R: Real>(x: &[R], planes: usize, h: usize, w: usize) -> (Vec<R>, Vec<u32>) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut y = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = R::neg_infinity();
                let mut at = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let iy = (2 * oy + dy).min(h - 1);
                        let ix = (2 * ox + dx).min(w - 1);
                        let idx = iy * w + ix;
                        if src[idx] > best {
                            best = src[idx];
                            at = idx as u32;
                        }
                    }
                }
                y.push(best);
                arg.push(at);
            }
        }
    }
    (y, arg)
}
