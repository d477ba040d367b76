//! Adjacency-masked multi-head attention.
//!
//! With [`MaskMode::PostSoftmax`] each row is softmax-normalized over every
//! node and only then multiplied by the adjacency mask, so only the masked
//! entries of the probability matrix are ever materialized. The softmax
//! partition function still spans all nodes; it is accumulated one row at a
//! time without storing the dense score matrix.

use super::layers::{apply_linear, linear_backward};
use super::params::BlockIdx;
use super::MaskMode;
use crate::meshkit::Adjacency;
use crate::par;
use crate::tensor::{Mat, Scalar};

pub struct AttentionCache<T> {
    pub input: Mat<T>,
    pub q: Mat<T>,
    pub k: Mat<T>,
    pub v: Mat<T>,
    /// Transpose of Q (`d x n`), so all-node sweeps run over contiguous
    /// memory.
    qt: Vec<T>,
    /// Log partition function, head-major: `lse[h * n + i]`.
    lse: Vec<T>,
    /// Probability-weighted mean key per node over the normalization set,
    /// laid out like K.
    kbar: Vec<T>,
    /// Masked probabilities per (directed edge, head).
    pub probs: Vec<T>,
    pub heads: Mat<T>,
}

fn transpose<T: Scalar>(m: &Mat<T>) -> Vec<T> {
    let mut out = vec![T::zero(); m.data.len()];
    for i in 0..m.rows {
        for (c, &x) in m.row(i).iter().enumerate() {
            out[c * m.rows + i] = x;
        }
    }
    out
}

const LANES: usize = 8;

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Dot product with independent partial sums so long rows vectorize.
#[inline]
fn dot_wide<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail = dot(ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc.iter().fold(tail, |s, &x| s + x)
}

#[inline]
fn sum_wide<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let tail = ca.remainder().iter().fold(T::zero(), |s, &x| s + x);
    for x in ca {
        for l in 0..LANES {
            acc[l] += x[l];
        }
    }
    acc.iter().fold(tail, |s, &x| s + x)
}

#[inline]
fn max_wide<T: Scalar>(a: &[T]) -> T {
    let mut acc = [T::neg_infinity(); LANES];
    let ca = a.chunks_exact(LANES);
    let tail = ca.remainder().iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    for x in ca {
        for l in 0..LANES {
            acc[l] = acc[l].max(x[l]);
        }
    }
    acc.iter().fold(tail, |m, &x| m.max(x))
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

struct RowOut<T> {
    lse: Vec<T>,
    kbar: Vec<T>,
    probs: Vec<T>,
    heads: Vec<T>,
}

/// Forward pass of the masked attention sublayer (projections included).
/// Without `for_backward` the cache lacks the terms only backward reads.
pub fn attention_forward<T: Scalar>(
    z: Mat<T>,
    adj: &Adjacency,
    p: &[T],
    b: &BlockIdx,
    heads: usize,
    mode: MaskMode,
    for_backward: bool,
) -> (Mat<T>, AttentionCache<T>) {
    let n = z.rows;
    let d = z.cols;
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let q = apply_linear(&z, p, &b.q);
    let k = apply_linear(&z, p, &b.k);
    let v = apply_linear(&z, p, &b.v);
    let qt = if for_backward { transpose(&q) } else { Vec::new() };
    let kt = transpose(&k);

    let rows: Vec<RowOut<T>> = par::map_range(n, |i| {
        let nbrs = adj.neighbors(i);
        let deg = nbrs.len();
        let mut out = RowOut {
            lse: vec![T::zero(); heads],
            kbar: vec![T::zero(); d],
            probs: vec![T::zero(); deg * heads],
            heads: vec![T::zero(); d],
        };
        let mut w = Vec::new();
        for h in 0..heads {
            let qi = &q.row(i)[h * dh..(h + 1) * dh];
            // scores over the normalization set: every node, or the neighbors
            w.clear();
            match mode {
                MaskMode::PostSoftmax => {
                    w.resize(n, T::zero());
                    for c in 0..dh {
                        axpy(&mut w, scale * qi[c], &kt[(h * dh + c) * n..(h * dh + c + 1) * n]);
                    }
                }
                MaskMode::PreSoftmax => {
                    w.extend(nbrs.iter().map(|&j| scale * dot(qi, &k.row(j as usize)[h * dh..(h + 1) * dh])));
                }
            }
            let m = max_wide(&w);
            w.iter_mut().for_each(|s| *s = (*s - m).exp_bulk());
            let zsum = sum_wide(&w);
            out.lse[h] = m + zsum.ln();
            let kb = &mut out.kbar[h * dh..(h + 1) * dh];
            match mode {
                _ if !for_backward => {}
                MaskMode::PostSoftmax => {
                    for c in 0..dh {
                        kb[c] = dot_wide(&w, &kt[(h * dh + c) * n..(h * dh + c + 1) * n]) / zsum;
                    }
                }
                MaskMode::PreSoftmax => {
                    for (t, &j) in nbrs.iter().enumerate() {
                        axpy(kb, w[t] / zsum, &k.row(j as usize)[h * dh..(h + 1) * dh]);
                    }
                }
            }
            let oh = &mut out.heads[h * dh..(h + 1) * dh];
            for (t, &j) in nbrs.iter().enumerate() {
                let j = j as usize;
                let pij = match mode {
                    MaskMode::PostSoftmax => w[j],
                    MaskMode::PreSoftmax => w[t],
                } / zsum;
                out.probs[t * heads + h] = pij;
                axpy(oh, pij, &v.row(j)[h * dh..(h + 1) * dh]);
            }
        }
        out
    });

    let mut lse = vec![T::zero(); n * heads];
    let mut kbar = Vec::with_capacity(n * d);
    let mut probs = Vec::with_capacity(adj.directed_edge_count() * heads);
    let mut hd = Vec::with_capacity(n * d);
    for (i, r) in rows.into_iter().enumerate() {
        for (h, x) in r.lse.into_iter().enumerate() {
            lse[h * n + i] = x;
        }
        kbar.extend(r.kbar);
        probs.extend(r.probs);
        hd.extend(r.heads);
    }
    let heads_mat = Mat::from_vec(n, d, hd);
    let out = apply_linear(&heads_mat, p, &b.o);
    (out, AttentionCache { input: z, q, k, v, qt, lse, kbar, probs, heads: heads_mat })
}

/// Backward pass; accumulates projection gradients and returns the input
/// gradient.
pub fn attention_backward<T: Scalar>(
    cache: &AttentionCache<T>,
    adj: &Adjacency,
    p: &[T],
    b: &BlockIdx,
    heads: usize,
    mode: MaskMode,
    gy: &Mat<T>,
    grads: &mut [T],
) -> Mat<T> {
    let n = gy.rows;
    let d = gy.cols;
    let dh = d / heads;
    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let g_heads = linear_backward(&cache.heads, p, &b.o, gy, grads);
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let probs = &cache.probs;

    // per-edge a_ij = g_i . v_j, per-row r_i = sum_j p_ij a_ij, and dQ
    let pass_a: Vec<(Vec<T>, Vec<T>, Vec<T>)> = par::map_range(n, |i| {
        let range = adj.edge_range(i);
        let deg = range.len();
        let mut a = vec![T::zero(); deg * heads];
        let mut r = vec![T::zero(); heads];
        let mut dq = vec![T::zero(); d];
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            let gi = &g_heads.row(i)[hs.clone()];
            let dqh = &mut dq[hs.clone()];
            let mut rh = T::zero();
            for (t, e) in range.clone().enumerate() {
                let j = adj.indices()[e] as usize;
                let aij = dot(gi, &v.row(j)[hs.clone()]);
                let pij = probs[e * heads + h];
                a[t * heads + h] = aij;
                rh += pij * aij;
                axpy(dqh, pij * aij, &k.row(j)[hs.clone()]);
            }
            r[h] = rh;
            let kb = &cache.kbar[i * d + h * dh..i * d + (h + 1) * dh];
            for (o, &x) in dqh.iter_mut().zip(kb) {
                *o = scale * (*o - rh * x);
            }
        }
        (a, r, dq)
    });
    let mut a_all = Vec::with_capacity(probs.len());
    let mut r_all = vec![T::zero(); n * heads];
    let mut dq = Vec::with_capacity(n * d);
    for (i, (a, r, q)) in pass_a.into_iter().enumerate() {
        a_all.extend(a);
        for (h, x) in r.into_iter().enumerate() {
            r_all[h * n + i] = x;
        }
        dq.extend(q);
    }

    // dK and dV gathered per key node through mirrored edges
    let pass_b: Vec<(Vec<T>, Vec<T>)> = par::map_range(n, |j| {
        let mut dk = vec![T::zero(); d];
        let mut dv = vec![T::zero(); d];
        let mut w = Vec::new();
        for h in 0..heads {
            let hs = h * dh..(h + 1) * dh;
            let dkh = &mut dk[hs.clone()];
            let dvh = &mut dv[hs.clone()];
            let kj = &k.row(j)[hs.clone()];
            for e_rev in adj.edge_range(j) {
                let i = adj.indices()[e_rev] as usize;
                let e = adj.reverse_edge(e_rev);
                let pij = probs[e * heads + h];
                let mut wij = pij * a_all[e * heads + h];
                if mode == MaskMode::PreSoftmax {
                    wij -= r_all[h * n + i] * pij;
                }
                axpy(dvh, pij, &g_heads.row(i)[hs.clone()]);
                axpy(dkh, wij, &q.row(i)[hs.clone()]);
            }
            if mode == MaskMode::PostSoftmax {
                // the partition function couples key j to every query
                w.clear();
                w.resize(n, T::zero());
                for c in 0..dh {
                    axpy(&mut w, scale * kj[c], &cache.qt[(h * dh + c) * n..(h * dh + c + 1) * n]);
                }
                let lse = &cache.lse[h * n..(h + 1) * n];
                let r = &r_all[h * n..(h + 1) * n];
                for ((s, &l), &ri) in w.iter_mut().zip(lse).zip(r) {
                    *s = ri * (*s - l).exp_bulk();
                }
                for c in 0..dh {
                    dkh[c] -= dot_wide(&w, &cache.qt[(h * dh + c) * n..(h * dh + c + 1) * n]);
                }
            }
            dkh.iter_mut().for_each(|x| *x = *x * scale);
        }
        (dk, dv)
    });
    let mut dk = Vec::with_capacity(n * d);
    let mut dv = Vec::with_capacity(n * d);
    for (k, v) in pass_b {
        dk.extend(k);
        dv.extend(v);
    }
    let dq = Mat::from_vec(n, d, dq);
    let dk = Mat::from_vec(n, d, dk);
    let dv = Mat::from_vec(n, d, dv);
    let mut gz = linear_backward(&cache.input, p, &b.q, &dq, grads);
    gz.add_assign(&linear_backward(&cache.input, p, &b.k, &dk, grads));
    gz.add_assign(&linear_backward(&cache.input, p, &b.v, &dv, grads));
    gz
}
