//! Independent dense reference implementations shared by the integration
//! tests. Everything here is written with plain nested loops over `Vec<f64>`
//! and reads weights by tensor name only.
#![allow(dead_code)]

use gridcourse::meshkit::Adjacency;
use gridcourse::model::{MaskMode, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn tensor<'a>(p: &'a ModelParams<f64>, name: &str) -> &'a [f64] {
    p.tensor(name).unwrap_or_else(|| panic!("no tensor {name}"))
}

/// `y = x W + b`, `W` stored `in x out`.
pub fn lin(x: &Rows, w: &[f64], b: &[f64]) -> Rows {
    let n_out = b.len();
    x.iter()
        .map(|row| {
            (0..n_out)
                .map(|j| b[j] + row.iter().enumerate().map(|(i, v)| v * w[i * n_out + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn rms(x: &Rows, gain: &[f64], eps: f64) -> Rows {
    x.iter()
        .map(|row| {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
            let r = 1.0 / (ms + eps).sqrt();
            row.iter().zip(gain).map(|(v, g)| v * r * g).collect()
        })
        .collect()
}

pub fn relu(x: &Rows) -> Rows {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn add(a: &Rows, b: &Rows) -> Rows {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

/// Dense `n x n` 0/1 mask.
pub fn dense_mask(adj: &Adjacency) -> Vec<Vec<bool>> {
    let n = adj.num_nodes();
    (0..n).map(|i| (0..n).map(|j| adj.contains(i, j)).collect()).collect()
}

/// Full probability matrix of one head, before masking (post-softmax) or
/// with non-neighbors excluded (pre-softmax).
pub fn head_probs(q: &Rows, k: &Rows, h: usize, dh: usize, mask: &[Vec<bool>], mode: MaskMode) -> Rows {
    let n = q.len();
    let scale = 1.0 / (dh as f64).sqrt();
    (0..n)
        .map(|i| {
            let s: Vec<f64> = (0..n)
                .map(|j| {
                    let dot: f64 = (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum();
                    match mode {
                        MaskMode::PreSoftmax if !mask[i][j] => f64::NEG_INFINITY,
                        _ => scale * dot,
                    }
                })
                .collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect()
}

/// Dense masked multi-head attention of block `layer`:
/// `O = concat_h((softmax(Q_h K_h^T / sqrt(dh)) * A) V_h) W_o + b_o`.
pub fn dense_attention(p: &ModelParams<f64>, layer: usize, z: &Rows, mask: &[Vec<bool>]) -> Rows {
    let c = &p.config;
    let pre = format!("blocks.{layer}");
    let t = |s: &str| tensor(p, &format!("{pre}.{s}"));
    let q = lin(z, t("wq"), t("bq"));
    let k = lin(z, t("wk"), t("bk"));
    let v = lin(z, t("wv"), t("bv"));
    let n = z.len();
    let d = c.width;
    let dh = c.head_width();
    let mut heads = vec![vec![0.0; d]; n];
    for h in 0..c.heads {
        let probs = head_probs(&q, &k, h, dh, mask, c.mask_mode);
        for i in 0..n {
            for j in 0..n {
                if mask[i][j] {
                    for ch in 0..dh {
                        heads[i][h * dh + ch] += probs[i][j] * v[j][h * dh + ch];
                    }
                }
            }
        }
    }
    lin(&heads, t("wo"), t("bo"))
}

fn gated(p: &ModelParams<f64>, layer: usize, z: &Rows) -> Rows {
    let pre = format!("blocks.{layer}");
    let t = |s: &str| tensor(p, &format!("{pre}.{s}"));
    let l = lin(z, t("wl"), t("bl"));
    let r = lin(z, t("wr"), t("br"));
    let prod: Rows = l.iter().zip(&r).map(|(a, b)| a.iter().zip(b).map(|(x, y)| gelu(*x) * y).collect()).collect();
    lin(&prod, t("wf"), t("bf"))
}

/// Whole encode-process-decode model, densely.
pub fn dense_model(p: &ModelParams<f64>, x: &Rows, mask: &[Vec<bool>]) -> Rows {
    let eps = p.config.rms_eps;
    let t = |s: &str| tensor(p, s);
    let h = relu(&lin(x, t("enc.w1"), t("enc.b1")));
    let mut z = rms(&lin(&h, t("enc.w2"), t("enc.b2")), t("enc.norm"), eps);
    for l in 0..p.config.layers {
        let u = add(&dense_attention(p, l, &z, mask), &z);
        let z1 = rms(&u, t(&format!("blocks.{l}.norm1")), eps);
        let w = add(&gated(p, l, &z1), &z1);
        z = rms(&w, t(&format!("blocks.{l}.norm2")), eps);
    }
    let h = relu(&rms(&lin(&z, t("dec.w1"), t("dec.b1")), t("dec.norm"), eps));
    lin(&h, t("dec.w2"), t("dec.b2"))
}

/// Random symmetric graph with self-loops, edge probability `density`.
pub fn random_graph(n: usize, density: f64, rng: &mut impl Rng) -> Adjacency {
    let mut lists = vec![Vec::new(); n];
    for i in 0..n {
        lists[i].push(i as u32);
        for j in i + 1..n {
            if rng.random_bool(density) {
                lists[i].push(j as u32);
                lists[j].push(i as u32);
            }
        }
    }
    lists.iter_mut().for_each(|l| l.sort_unstable());
    Adjacency::from_neighbor_lists(lists, true).unwrap()
}

/// Parameters with every tensor randomized (biases and gains included).
pub fn random_params(config: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for e in p.layout.entries.clone() {
        let slot = &mut p.values[e.range()];
        match e.kind {
            gridcourse::model::TensorKind::Matrix => {}
            gridcourse::model::TensorKind::Bias => slot.iter_mut().for_each(|x| *x = rng.random_range(-0.2..0.2)),
            gridcourse::model::TensorKind::Gain => slot.iter_mut().for_each(|x| *x = rng.random_range(0.7..1.3)),
        }
    }
    p
}

pub fn random_rows(n: usize, d: usize, rng: &mut impl Rng) -> Rows {
    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

/// Central difference of `f` with respect to every entry of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`, worst case over the slices.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor)).fold(0.0, f64::max)
}
