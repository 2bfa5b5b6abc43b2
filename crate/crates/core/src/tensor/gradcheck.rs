//! Central finite-difference oracle for checking tape gradients in 64-bit.
//! Differences at steps `h` and `h/2` are Richardson-combined, which cancels
//! the `O(h²)` truncation term of the plain central quotient.
//!
//! The function under test returns its value together with the tape's
//! activation pattern; a coordinate whose `±h` evaluations land in
//! different smooth pieces (a relu or pooling kink in between) is skipped.

use super::Tensor;
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-3;

/// Numerical gradient of `f` with respect to every input. Entries that
/// straddle a kink are NaN.
pub fn numeric_gradients(
    inputs: &[Tensor<f64>],
    h: f64,
    mut f: impl FnMut(&[Tensor<f64>]) -> Result<(f64, u64)>,
) -> Result<Vec<Tensor<f64>>> {
    let (_, base_pattern) = f(inputs)?;
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[t].shape());
        for j in 0..inputs[t].len() {
            let orig = work[t].data()[j];
            let mut eval = |x: f64| -> Result<Option<f64>> {
                work[t].data_mut()[j] = x;
                let (v, pattern) = f(&work)?;
                Ok((pattern == base_pattern).then_some(v))
            };
            let pts = [eval(orig + h)?, eval(orig - h)?, eval(orig + h / 2.0)?, eval(orig - h / 2.0)?];
            work[t].data_mut()[j] = orig;
            g.data_mut()[j] = match pts {
                [Some(a), Some(b), Some(c), Some(d)] => {
                    let wide = (a - b) / (2.0 * h);
                    let narrow = (c - d) / h;
                    (4.0 * narrow - wide) / 3.0
                }
                _ => f64::NAN,
            };
        }
        out.push(g);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Comparison {
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)` over the compared entries.
    pub rel_error: f64,
    pub compared: usize,
    pub skipped: usize,
}

pub fn compare(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> Comparison {
    let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
    let (mut compared, mut skipped) = (0, 0);
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        if n.is_nan() {
            skipped += 1;
            continue;
        }
        compared += 1;
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let scale = na.sqrt().max(nn.sqrt());
    let rel_error = if scale == 0.0 { 0.0 } else { diff.sqrt() / scale };
    Comparison { rel_error, compared, skipped }
}

/// Worst comparison across several inputs.
pub fn compare_all(analytic: &[Tensor<f64>], numeric: &[Tensor<f64>]) -> Comparison {
    analytic.iter().zip(numeric).map(|(a, n)| compare(a, n)).fold(
        Comparison { rel_error: 0.0, compared: 0, skipped: 0 },
        |acc, c| Comparison {
            rel_error: acc.rel_error.max(c.rel_error),
            compared: acc.compared + c.compared,
            skipped: acc.skipped + c.skipped,
        },
    )
}
