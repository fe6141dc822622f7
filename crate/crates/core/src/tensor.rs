//! Dense row-major tensors and the handful of kernels the decoder needs.
//!
//! Every kernel accumulates each output element in a fixed order that does
//! not depend on how many rows are processed together, so a row computed
//! inside a long packed sequence is bitwise equal to the same row computed
//! alone.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type (`f32` for inference, `f64` for gradient
/// checks).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    dims: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn zeros(dims: &[usize]) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![F::zero(); dims.iter().product()],
        }
    }

    pub fn filled(dims: &[usize], v: F) -> Self {
        Tensor {
            dims: dims.to_vec(),
            data: vec![v; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<F>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor dims {dims:?} do not match {} elements",
            data.len()
        );
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[F] {
        let w = self.dims[self.dims.len() - 1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        let w = self.dims[self.dims.len() - 1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| G::c(v.f64())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = F::zero());
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

/// `out[r×n] = a[r×k] · w[k×n]`.
pub fn matmul<F: Scalar>(a: &[F], rows: usize, inner: usize, w: &[F], cols: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(w.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        let o = &mut out[r * cols..(r + 1) * cols];
        o.iter_mut().for_each(|v| *v = F::zero());
        let ar = &a[r * inner..(r + 1) * inner];
        for (kk, &av) in ar.iter().enumerate() {
            let wr = &w[kk * cols..(kk + 1) * cols];
            for (ov, &wv) in o.iter_mut().zip(wr) {
                *ov = *ov + av * wv;
            }
        }
    }
}

/// `out[r×n] = a[r×k] · b[n×k]ᵀ`.
pub fn matmul_bt<F: Scalar>(a: &[F], rows: usize, inner: usize, b: &[F], cols: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), cols * inner);
    debug_assert_eq!(out.len(), rows * cols);
    for r in 0..rows {
        let ar = &a[r * inner..(r + 1) * inner];
        for c in 0..cols {
            out[r * cols + c] = dot(ar, &b[c * inner..(c + 1) * inner]);
        }
    }
}

/// `acc[k×n] += a[r×k]ᵀ · d[r×n]`.
pub fn add_matmul_at<F: Scalar>(a: &[F], rows: usize, inner: usize, d: &[F], cols: usize, acc: &mut [F]) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(d.len(), rows * cols);
    debug_assert_eq!(acc.len(), inner * cols);
    for r in 0..rows {
        let dr = &d[r * cols..(r + 1) * cols];
        for kk in 0..inner {
            let av = a[r * inner + kk];
            if av == F::zero() {
                continue;
            }
            let accr = &mut acc[kk * cols..(kk + 1) * cols];
            for (x, &dv) in accr.iter_mut().zip(dr) {
                *x = *x + av * dv;
            }
        }
    }
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut s = F::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

pub const RMS_EPS: f64 = 1e-5;

/// Root-mean-square normalization of each row, scaled by `gain`.
/// Returns the per-row inverse RMS for the backward pass.
pub fn rms_norm<F: Scalar>(x: &[F], width: usize, gain: &[F], out: &mut [F]) -> Vec<F> {
    let rows = x.len() / width;
    let eps = F::c(RMS_EPS);
    let n = F::c(width as f64);
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let xr = &x[r * width..(r + 1) * width];
        let ms = xr.iter().map(|&v| v * v).sum::<F>() / n;
        let ir = F::one() / (ms + eps).sqrt();
        for ((o, &v), &g) in out[r * width..(r + 1) * width].iter_mut().zip(xr).zip(gain) {
            *o = v * ir * g;
        }
        inv.push(ir);
    }
    inv
}

/// Backward of [`rms_norm`]: accumulates into `dx` and `dgain`.
pub fn rms_norm_backward<F: Scalar>(
    x: &[F],
    width: usize,
    gain: &[F],
    inv_rms: &[F],
    dy: &[F],
    dx: &mut [F],
    dgain: &mut [F],
) {
    let n = F::c(width as f64);
    for (r, &ir) in inv_rms.iter().enumerate() {
        let xr = &x[r * width..(r + 1) * width];
        let dyr = &dy[r * width..(r + 1) * width];
        let mut proj = F::zero();
        for i in 0..width {
            dgain[i] = dgain[i] + dyr[i] * xr[i] * ir;
            proj = proj + gain[i] * dyr[i] * xr[i];
        }
        let coef = ir * ir * ir * proj / n;
        let dxr = &mut dx[r * width..(r + 1) * width];
        for i in 0..width {
            dxr[i] = dxr[i] + ir * gain[i] * dyr[i] - xr[i] * coef;
        }
    }
}

pub fn sigmoid<F: Scalar>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

pub fn silu<F: Scalar>(v: F) -> F {
    v * sigmoid(v)
}

pub fn silu_grad<F: Scalar>(v: F) -> F {
    let s = sigmoid(v);
    s * (F::one() + v * (F::one() - s))
}

/// Numerically stable softmax in `f64`.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let w = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut out = [0.0; 6];
        matmul(&a, 2, 2, &w, 3, &mut out);
        assert_eq!(out, [1.0, 2.0, 3.0, 3.0, 4.0, 7.0]);
        let mut bt = [0.0; 4];
        matmul_bt(&a, 2, 2, &a, 2, &mut bt);
        assert_eq!(bt, [5.0, 11.0, 11.0, 25.0]);
        let mut acc = [0.0; 6];
        add_matmul_at(&a, 2, 2, &out, 3, &mut acc);
        assert_eq!(acc, [10.0, 14.0, 24.0, 14.0, 20.0, 34.0]);
    }

    #[test]
    fn rms_norm_unit_rows() {
        let x = [3.0f64, 4.0];
        let mut out = [0.0; 2];
        let inv = rms_norm(&x, 2, &[1.0, 1.0], &mut out);
        let rms = (12.5f64 + RMS_EPS).sqrt();
        assert!((inv[0] - 1.0 / rms).abs() < 1e-15);
        assert!((out[0] - 3.0 / rms).abs() < 1e-15);
    }

    #[test]
    fn rms_norm_backward_matches_differences() {
        let x = [0.3f64, -1.2, 0.7];
        let g = [1.1, 0.9, -0.4];
        let dy = [0.5, -0.25, 1.5];
        let loss = |x: &[f64]| {
            let mut o = [0.0; 3];
            rms_norm(x, 3, &g, &mut o);
            dot(&o, &dy)
        };
        let mut o = [0.0; 3];
        let inv = rms_norm(&x, 3, &g, &mut o);
        let mut dx = [0.0; 3];
        let mut dg = [0.0; 3];
        rms_norm_backward(&x, 3, &g, &inv, &dy, &mut dx, &mut dg);
        for i in 0..3 {
            let mut p = x;
            let mut m = x;
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let num = (loss(&p) - loss(&m)) / 2e-6;
            assert!((num - dx[i]).abs() < 1e-8, "dx[{i}] {num} vs {}", dx[i]);
        }
    }

    #[test]
    fn silu_grad_matches_difference() {
        for v in [-3.0f64, -0.5, 0.0, 0.8, 4.0] {
            let num = (silu(v + 1e-6) - silu(v - 1e-6)) / 2e-6;
            assert!((num - silu_grad(v)).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1] && p[1] > p[2]);
    }
}
