use super::params::LinearIdx;
use crate::par;
use crate::tensor::{linear, linear_backward_input, linear_backward_params, Mat, Scalar};

/// `x / sqrt(mean(x^2) + eps) * gain` for a single token.
pub fn rmsnorm<T: Scalar>(x: &[T], gain: &[T], eps: T) -> Vec<T> {
    let r = inv_rms(x, eps);
    x.iter().zip(gain).map(|(&v, &g)| v * r * g).collect()
}

fn inv_rms<T: Scalar>(x: &[T], eps: T) -> T {
    let d = T::from_usize(x.len()).unwrap();
    let ms = x.iter().map(|&v| v * v).sum::<T>() / d;
    T::one() / (ms + eps).sqrt()
}

pub struct RmsCache<T> {
    pub x: Mat<T>,
    pub inv: Vec<T>,
}

/// Row-wise RMSNorm; keeps the input and inverse RMS for backward.
pub fn rmsnorm_rows<T: Scalar>(x: Mat<T>, gain: &[T], eps: T) -> (Mat<T>, RmsCache<T>) {
    let d = x.cols;
    let inv = par::map_range(x.rows, |i| inv_rms(x.row(i), eps));
    let mut y = Mat::zeros(x.rows, d);
    par::for_each_row(&mut y.data, d, |i, out| {
        let r = inv[i];
        for ((o, &v), &g) in out.iter_mut().zip(x.row(i)).zip(gain) {
            *o = v * r * g;
        }
    });
    (y, RmsCache { x, inv })
}

/// Returns the input gradient and accumulates the gain gradient.
pub fn rmsnorm_rows_backward<T: Scalar>(cache: &RmsCache<T>, gain: &[T], gy: &Mat<T>, ggain: &mut [T]) -> Mat<T> {
    let d = gy.cols;
    let dt = T::from_usize(d).unwrap();
    let mut gx = Mat::zeros(gy.rows, d);
    par::for_each_row(&mut gx.data, d, |i, out| {
        let x = cache.x.row(i);
        let g = gy.row(i);
        let r = cache.inv[i];
        let dot: T = (0..d).map(|k| g[k] * gain[k] * x[k]).sum();
        let coef = r * r * r * dot / dt;
        for k in 0..d {
            out[k] = r * gain[k] * g[k] - x[k] * coef;
        }
    });
    for i in 0..gy.rows {
        let r = cache.inv[i];
        for ((gg, &g), &x) in ggain.iter_mut().zip(gy.row(i)).zip(cache.x.row(i)) {
            *gg += g * x * r;
        }
    }
    gx
}

/// Exact GeLU: `x * Phi(x)`.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    half * x * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = T::of(0.5);
    let cdf = half * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

pub fn relu<T: Scalar>(x: &Mat<T>) -> Mat<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU, given the pre-activation.
pub fn relu_backward<T: Scalar>(pre: &Mat<T>, gy: &Mat<T>) -> Mat<T> {
    let data = pre
        .data
        .iter()
        .zip(&gy.data)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Mat::from_vec(gy.rows, gy.cols, data)
}

pub fn apply_linear<T: Scalar>(x: &Mat<T>, p: &[T], idx: &LinearIdx) -> Mat<T> {
    linear(x, &p[idx.w.clone()], &p[idx.b.clone()])
}

/// Accumulates parameter gradients of a linear layer and returns its input
/// gradient.
pub fn linear_backward<T: Scalar>(x: &Mat<T>, p: &[T], idx: &LinearIdx, gy: &Mat<T>, grads: &mut [T]) -> Mat<T> {
    {
        let (gw, gb) = split_two(grads, &idx.w, &idx.b);
        linear_backward_params(x, gy, gw, gb);
    }
    linear_backward_input(gy, &p[idx.w.clone()], idx.n_in)
}

/// Two disjoint mutable windows into one buffer (`a` must precede `b`).
fn split_two<'a, T>(
    buf: &'a mut [T],
    a: &std::ops::Range<usize>,
    b: &std::ops::Range<usize>,
) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(a.end <= b.start);
    let (head, tail) = buf.split_at_mut(b.start);
    (&mut head[a.clone()], &mut tail[..b.len()])
}

pub struct MlpCache<T> {
    pub input: Mat<T>,
    pub left: Mat<T>,
    pub right: Mat<T>,
    pub prod: Mat<T>,
}

/// `W_f (GeLU(W_l z + b_l) * (W_r z + b_r)) + b_f`, row by row.
pub fn gated_mlp<T: Scalar>(z: Mat<T>, p: &[T], l: &LinearIdx, r: &LinearIdx, f: &LinearIdx) -> (Mat<T>, MlpCache<T>) {
    let left = apply_linear(&z, p, l);
    let right = apply_linear(&z, p, r);
    let prod = Mat::from_vec(
        left.rows,
        left.cols,
        left.data.iter().zip(&right.data).map(|(&a, &b)| gelu(a) * b).collect(),
    );
    let out = apply_linear(&prod, p, f);
    (out, MlpCache { input: z, left, right, prod })
}

pub fn gated_mlp_backward<T: Scalar>(
    cache: &MlpCache<T>,
    p: &[T],
    l: &LinearIdx,
    r: &LinearIdx,
    f: &LinearIdx,
    gy: &Mat<T>,
    grads: &mut [T],
) -> Mat<T> {
    let gprod = linear_backward(&cache.prod, p, f, gy, grads);
    let n = gprod.data.len();
    let mut gl = Vec::with_capacity(n);
    let mut gr = Vec::with_capacity(n);
    for k in 0..n {
        let a = cache.left.data[k];
        let g = gprod.data[k];
        gl.push(g * cache.right.data[k] * gelu_grad(a));
        gr.push(g * gelu(a));
    }
    let gl = Mat::from_vec(gprod.rows, gprod.cols, gl);
    let gr = Mat::from_vec(gprod.rows, gprod.cols, gr);
    let mut gz = linear_backward(&cache.input, p, l, &gl, grads);
    gz.add_assign(&linear_backward(&cache.input, p, r, &gr, grads));
    gz
}
