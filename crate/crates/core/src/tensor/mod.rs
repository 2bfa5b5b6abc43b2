//! Dense NCHW tensors with a reverse-mode tape covering the operations the
//! fGRU architectures need.

mod adam;
pub mod gradcheck;
mod kernels;
mod tape;

use std::fmt::Debug;
use std::io::{Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::path::Path;

use num_traits::Float;

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamState};
pub use kernels::{col2im, conv_out_dim, im2col};
pub use tape::{BnMode, Gradients, RunningStats, Tape, Var};

/// Floating point element type of a tensor. Training uses `f32`, the
/// gradient-check suite `f64`.
pub trait Real:
    Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const MAGIC: [u8; 8];
    const BYTES: usize;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a · b + beta · c` with row-major `a: m×k` and `b: k×n`. Either
    /// operand may be supplied transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        trans_a: bool,
        b: &[Self],
        trans_b: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn put_le(self, out: &mut Vec<u8>);
    fn get_le(bytes: &[u8]) -> Self;
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // stored matrix is rows×cols when not transposed, cols×rows otherwise
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $magic:expr) => {
        impl Real for $t {
            const MAGIC: [u8; 8] = *$magic;
            const BYTES: usize = std::mem::size_of::<$t>();

            #[inline]
            fn of(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                trans_a: bool,
                b: &[Self],
                trans_b: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = strides(m, k, trans_a);
                let (rsb, csb) = strides(k, n, trans_b);
                // SAFETY: bounds asserted above; strides describe dense row-major storage.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn put_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn get_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm, b"FGRUTF32");
impl_real!(f64, matrixmultiply::dgemm, b"FGRUTF64");

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R> {
    shape: Vec<usize>,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn new(shape: &[usize], data: Vec<R>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, R::zero())
    }

    pub fn full(shape: &[usize], v: R) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> R) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
    }

    pub fn scalar(v: R) -> Self {
        Tensor { shape: vec![], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<R> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Option<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Some((n, c, h, w)),
            _ => None,
        }
    }

    pub fn item(&self) -> R {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<S: Real>(&self) -> Tensor<S> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| S::of(v.as_f64())).collect() }
    }

    pub fn sum(&self) -> R {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> R {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn max_abs(&self) -> R {
        self.data.iter().fold(R::zero(), |m, v| m.max(v.abs()))
    }

    /// Image `b` of a rank-4 tensor as a contiguous slice.
    pub fn image(&self, b: usize) -> &[R] {
        let per = self.shape[1..].iter().product::<usize>();
        &self.data[b * per..(b + 1) * per]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.shape.len() + self.data.len() * R::BYTES);
        out.extend_from_slice(&R::MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            v.put_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Invalid(format!("tensor file: {msg}"));
        if bytes.len() < 12 {
            return Err(bad("truncated header"));
        }
        if bytes[..8] != R::MAGIC {
            return Err(bad("magic does not match requested precision"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let rank = u32_at(8);
        let head = 12 + 4 * rank;
        if bytes.len() < head {
            return Err(bad("truncated dims"));
        }
        let shape: Vec<usize> = (0..rank).map(|i| u32_at(12 + 4 * i)).collect();
        let n: usize = shape.iter().product();
        if bytes.len() != head + n * R::BYTES {
            return Err(bad("payload length does not match shape"));
        }
        let data = bytes[head..].chunks_exact(R::BYTES).map(R::get_le).collect();
        Tensor::new(&shape, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
