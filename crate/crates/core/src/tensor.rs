use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Floating-point element type. Training runs in `f32`; numerical checks run
/// the same code in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Default + Debug + Send + Sync + 'static
{
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data length");
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.f64())).collect(),
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `out[rows×cols] = a[rows×inner] · b[inner×cols]`.
pub(crate) fn matmul<T: Real>(a: &[T], b: &[T], rows: usize, inner: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        let o = &mut out[i * cols..(i + 1) * cols];
        for k in 0..inner {
            let aik = a[i * inner + k];
            let brow = &b[k * cols..(k + 1) * cols];
            for (oj, &bj) in o.iter_mut().zip(brow) {
                *oj += aik * bj;
            }
        }
    }
    out
}

/// `out[rows×cols] = a[rows×inner] · b[inner×cols] + bias[cols]` (bias broadcast over rows).
pub(crate) fn affine<T: Real>(
    a: &[T],
    w: &[T],
    bias: &[T],
    rows: usize,
    inner: usize,
    cols: usize,
) -> Vec<T> {
    let mut out = matmul(a, w, rows, inner, cols);
    for r in out.chunks_mut(cols) {
        for (o, &b) in r.iter_mut().zip(bias) {
            *o += b;
        }
    }
    out
}

/// `dw[inner×cols] += aᵀ · dout` where `a` is `rows×inner` and `dout` is `rows×cols`.
pub(crate) fn acc_at_b<T: Real>(dw: &mut [T], a: &[T], dout: &[T], rows: usize, inner: usize, cols: usize) {
    for r in 0..rows {
        let drow = &dout[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let ark = a[r * inner + k];
            if ark == T::zero() {
                continue;
            }
            let dst = &mut dw[k * cols..(k + 1) * cols];
            for (d, &g) in dst.iter_mut().zip(drow) {
                *d += ark * g;
            }
        }
    }
}

/// `db[cols] += Σ_rows dout`.
pub(crate) fn acc_rows<T: Real>(db: &mut [T], dout: &[T], cols: usize) {
    for r in dout.chunks(cols) {
        for (d, &g) in db.iter_mut().zip(r) {
            *d += g;
        }
    }
}

/// `dx[rows×inner] = dout[rows×cols] · wᵀ` where `w` is `inner×cols`.
pub(crate) fn matmul_bt<T: Real>(dout: &[T], w: &[T], rows: usize, inner: usize, cols: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * inner];
    for r in 0..rows {
        let drow = &dout[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let wrow = &w[k * cols..(k + 1) * cols];
            let mut s = T::zero();
            for (&g, &wv) in drow.iter().zip(wrow) {
                s += g * wv;
            }
            dx[r * inner + k] = s;
        }
    }
    dx
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// In-place numerically stable softmax.
pub(crate) fn softmax_in_place<T: Real>(xs: &mut [T]) {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// `log Σ exp(xs)`.
pub(crate) fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for &x in xs {
        sum += (x - max).exp();
    }
    max + sum.ln()
}
