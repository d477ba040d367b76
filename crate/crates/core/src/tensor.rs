//! Dense row-major matrices and the linear-layer kernels built on them.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

use crate::par;

/// Floating-point element type for model math (f32 for training, f64 for
/// verification).
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    fn erf(self) -> Self;

    /// `exp` for bulk loops; may trade the last ulp for vectorization.
    fn exp_bulk(self) -> Self {
        self.exp()
    }

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Scalar for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }

    /// Branch-free Cephes-style `expf` (relative error about 2e-7).
    #[inline(always)]
    fn exp_bulk(self) -> Self {
        const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
        let x = self.clamp(-87.0, 88.0);
        let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
        let r = x - n * 0.693_359_4 + n * 2.121_944_4e-4;
        let p = ((((1.987_569_1e-4 * r + 1.398_199_9e-3) * r + 8.333_452e-3) * r + 4.166_579_6e-2) * r
            + 1.666_666_5e-1)
            * r
            + 0.5;
        let e = p * r * r + r + 1.0;
        e * f32::from_bits(((n as i32 + 127) as u32) << 23)
    }
}

impl Scalar for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn add_assign(&mut self, other: &Mat<T>) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Mat<T> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Mat<U> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect(),
        }
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    /// Rows reordered so row `i` of the result is row `perm[i]` of `self`.
    pub fn permute_rows(&self, perm: &[usize]) -> Mat<T> {
        let mut out = Vec::with_capacity(self.data.len());
        for &p in perm {
            out.extend_from_slice(self.row(p));
        }
        Mat::from_vec(self.rows, self.cols, out)
    }
}

/// `y = x W + b` with `W` stored row-major as `in x out`.
pub fn linear<T: Scalar>(x: &Mat<T>, w: &[T], b: &[T]) -> Mat<T> {
    let n_in = x.cols;
    let n_out = b.len();
    debug_assert_eq!(w.len(), n_in * n_out);
    let mut y = Mat::zeros(x.rows, n_out);
    par::for_each_row(&mut y.data, n_out, |r, out| {
        out.copy_from_slice(b);
        let xr = x.row(r);
        for (i, &xi) in xr.iter().enumerate() {
            if xi == T::zero() {
                continue;
            }
            let wr = &w[i * n_out..(i + 1) * n_out];
            for (o, &wv) in out.iter_mut().zip(wr) {
                *o += xi * wv;
            }
        }
    });
    y
}

/// Input gradient of [`linear`]: `gx = gy W^T`.
pub fn linear_backward_input<T: Scalar>(gy: &Mat<T>, w: &[T], n_in: usize) -> Mat<T> {
    let n_out = gy.cols;
    let mut gx = Mat::zeros(gy.rows, n_in);
    par::for_each_row(&mut gx.data, n_in, |r, out| {
        let g = gy.row(r);
        for (i, o) in out.iter_mut().enumerate() {
            let wr = &w[i * n_out..(i + 1) * n_out];
            let mut s = T::zero();
            for (&a, &b) in g.iter().zip(wr) {
                s += a * b;
            }
            *o = s;
        }
    });
    gx
}

/// Accumulates `gW += x^T gy` and `gb += sum_rows(gy)`; every output entry is
/// reduced over rows in index order.
pub fn linear_backward_params<T: Scalar>(x: &Mat<T>, gy: &Mat<T>, gw: &mut [T], gb: &mut [T]) {
    let n_out = gy.cols;
    debug_assert_eq!(gw.len(), x.cols * n_out);
    par::for_each_row(gw, n_out, |i, grow| {
        for r in 0..x.rows {
            let xi = x.data[r * x.cols + i];
            if xi == T::zero() {
                continue;
            }
            for (g, &d) in grow.iter_mut().zip(gy.row(r)) {
                *g += xi * d;
            }
        }
    });
    for r in 0..gy.rows {
        for (g, &d) in gb.iter_mut().zip(gy.row(r)) {
            *g += d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bulk_exp_is_close() {
        let mut worst = 0f64;
        for k in 0..=160_000 {
            let x = -80.0 + k as f32 * 1e-3;
            let got = x.exp_bulk() as f64;
            let want = (x as f64).exp();
            worst = worst.max(((got - want) / want).abs());
        }
        assert!(worst < 4e-7, "{worst}");
        assert_eq!(0f32.exp_bulk(), 1.0);
        assert!((-200f32).exp_bulk() < 1e-37);
    }

    #[test]
    fn linear_matches_hand_product() {
        let x = Mat::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let w = [1.0, 0.0, -1.0, 0.5, 1.0, 2.0];
        let b = [0.1, 0.2, 0.3];
        let y = linear(&x, &w, &b);
        assert_eq!(y.row(0), &[1.0 + 1.0 + 0.1, 2.0 + 0.2, -1.0 + 4.0 + 0.3]);
        assert_eq!(y.row(1), &[3.0 + 2.0 + 0.1, 4.0 + 0.2, -3.0 + 8.0 + 0.3]);
    }

    #[test]
    fn backward_shapes_and_values() {
        let x = Mat::from_vec(2, 2, vec![1.0f64, 2.0, 3.0, 4.0]);
        let w = [1.0, 0.0, -1.0, 0.5, 1.0, 2.0];
        let gy = Mat::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let gx = linear_backward_input(&gy, &w, 2);
        assert_eq!(gx.row(0), &[1.0, 0.5]);
        assert_eq!(gx.row(1), &[-1.0, 3.0]);
        let mut gw = vec![0.0; 6];
        let mut gb = vec![0.0; 3];
        linear_backward_params(&x, &gy, &mut gw, &mut gb);
        assert_eq!(gw, vec![1.0, 3.0, 3.0, 2.0, 4.0, 4.0]);
        assert_eq!(gb, vec![1.0, 1.0, 1.0]);
    }
}
