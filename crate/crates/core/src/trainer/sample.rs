use rand::RngCore;
use rand_distr::{Distribution, Normal};

use super::{Normalizer, TrainError};
use crate::meshkit::{Mesh, NodeType};
use crate::store::Trajectory;
use crate::tensor::{Mat, Scalar};

/// Input layout: `[velocity, acceleration, position, one-hot node type]`,
/// target: next-step velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub dim: usize,
    /// Std of the Gaussian noise added to normalized velocity inputs.
    pub noise_std: f64,
}

impl SampleSpec {
    pub fn in_features(&self) -> usize {
        3 * self.dim + NodeType::ALL.len()
    }

    pub fn out_features(&self) -> usize {
        self.dim
    }
}

/// Normalized model inputs for one state. Wall velocities are taken as
/// exactly zero. With `noise`, `N(0, sigma^2)` is added to the normalized
/// velocity channels of every non-Wall node, in node order.
pub fn build_features<T: Scalar>(
    mesh: &Mesh,
    prev: &[f32],
    cur: &[f32],
    norm: &Normalizer,
    noise: Option<(&mut dyn RngCore, f64)>,
) -> Mat<T> {
    let dim = mesh.dim();
    let width = 3 * dim + NodeType::ALL.len();
    let n = mesh.num_nodes();
    let mut out = Mat::zeros(n, width);
    let dist = noise.as_ref().filter(|(_, s)| *s > 0.0).map(|(_, s)| Normal::new(0.0, *s).expect("finite noise std"));
    let mut rng = noise.map(|(r, _)| r);
    for i in 0..n {
        let wall = mesh.node_type(i) == NodeType::Wall;
        let p = mesh.position(i);
        let row = out.row_mut(i);
        for c in 0..dim {
            let k = i * dim + c;
            let (v, a) = if wall { (0.0, 0.0) } else { (cur[k] as f64, cur[k] as f64 - prev[k] as f64) };
            let mut vn = norm.input(c, v);
            if let (false, Some(d), Some(r)) = (wall, dist.as_ref(), rng.as_deref_mut()) {
                vn += d.sample(r);
            }
            row[c] = T::of(vn);
            row[dim + c] = T::of(norm.input(dim + c, a));
            row[2 * dim + c] = T::of(norm.input(2 * dim + c, p[c]));
        }
        row[3 * dim + mesh.node_type(i) as usize] = T::one();
    }
    out
}

/// Features at step `t` and the normalized noise-free target `v_{t+1}`.
pub fn make_sample<T: Scalar>(
    traj: &Trajectory,
    t: usize,
    norm: &Normalizer,
    noise: Option<(&mut dyn RngCore, f64)>,
) -> Result<(Mat<T>, Mat<T>), TrainError> {
    let steps = traj.num_steps();
    if t < 1 || t + 1 >= steps {
        return Err(TrainError::Data(format!("sample step {t} outside 1..{}", steps.saturating_sub(1))));
    }
    let features = build_features(&traj.mesh, &traj.frames[t - 1], &traj.frames[t], norm, noise);
    let dim = traj.dim();
    let next = &traj.frames[t + 1];
    let target = Mat::from_vec(
        traj.num_nodes(),
        dim,
        next.iter().enumerate().map(|(k, &v)| T::of(norm.target(k % dim, v as f64))).collect(),
    );
    Ok((features, target))
}

/// Mean squared error over nodes and components, and its gradient
/// `2 (pred - target) / (N * F_out)`.
pub fn step_loss<T: Scalar>(pred: &Mat<T>, target: &Mat<T>) -> (f64, Mat<T>) {
    assert_eq!((pred.rows, pred.cols), (target.rows, target.cols), "prediction and target shapes");
    let count = (pred.rows * pred.cols).max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(pred.rows, pred.cols);
    let scale = T::of(2.0 / count);
    for ((g, &p), &y) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = p - y;
        let df = d.to_f64().unwrap_or(f64::NAN);
        loss += df * df;
        *g = scale * d;
    }
    (loss / count, grad)
}
