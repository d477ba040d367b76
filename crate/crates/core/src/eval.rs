//! Autoregressive rollouts and the All-Rollout RMSE.

use serde::{Deserialize, Serialize};

use crate::meshkit::{build_adjacency, Adjacency, Mesh, NodeType};
use crate::model::{forward, ModelError, ModelParams};
use crate::par;
use crate::store::Trajectory;
use crate::trainer::{build_features, Normalizer};

/// Rollouts flag divergence once any component exceeds this multiple of the
/// dataset's largest velocity.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("trajectory {id} has {steps} steps; a rollout needs at least 3")]
    TooShort { id: u32, steps: usize },
    #[error("no rollouts to aggregate")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Anything that maps the two latest velocity states (physical units, flat
/// `N * dim`) to the next one.
pub trait Surrogate: Sync {
    fn next_velocity(&self, mesh: &Mesh, adj: &Adjacency, prev: &[f32], cur: &[f32]) -> Result<Vec<f32>, ModelError>;
}

/// The graph transformer plus the normalizer it was trained with.
pub struct ModelSurrogate<'a> {
    pub params: &'a ModelParams<f32>,
    pub normalizer: &'a Normalizer,
}

impl Surrogate for ModelSurrogate<'_> {
    fn next_velocity(&self, mesh: &Mesh, adj: &Adjacency, prev: &[f32], cur: &[f32]) -> Result<Vec<f32>, ModelError> {
        let x = build_features::<f32>(mesh, prev, cur, self.normalizer, None);
        let y = forward(self.params, &x, adj)?;
        let dim = self.normalizer.dim();
        Ok(y.data.iter().enumerate().map(|(k, &v)| self.normalizer.target_inverse(k % dim, v as f64) as f32).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub id: u32,
    /// Predicted states for steps `2..steps`.
    pub predictions: Vec<Vec<f32>>,
    /// Per-step RMSE against the true state.
    pub step_rmse: Vec<f64>,
    pub sq_error: f64,
    pub count: u64,
    /// First predicted step (index into `predictions`) that was non-finite
    /// or exceeded the divergence limit.
    pub diverged_at: Option<usize>,
}

impl RolloutResult {
    pub fn rmse(&self) -> f64 {
        (self.sq_error / self.count.max(1) as f64).sqrt()
    }
}

/// Largest velocity component over a set of trajectories times
/// [`DIVERGENCE_FACTOR`].
pub fn divergence_limit<'a>(trajectories: impl IntoIterator<Item = &'a Trajectory>) -> f64 {
    let m = trajectories.into_iter().fold(0.0f32, |m, t| m.max(t.max_abs_velocity()));
    DIVERGENCE_FACTOR * m as f64
}

fn run(
    model: &dyn Surrogate,
    id: u32,
    traj: &Trajectory,
    adj: &Adjacency,
    limit: f64,
    teacher_forced: bool,
) -> Result<RolloutResult, EvalError> {
    let steps = traj.num_steps();
    if steps < 3 {
        return Err(EvalError::TooShort { id, steps });
    }
    let mesh = &traj.mesh;
    let dim = mesh.dim();
    let walls: Vec<usize> = (0..mesh.num_nodes()).filter(|&i| mesh.node_type(i) == NodeType::Wall).collect();
    let mut prev = traj.frames[0].clone();
    let mut cur = traj.frames[1].clone();
    let mut out = RolloutResult {
        id,
        predictions: Vec::with_capacity(steps - 2),
        step_rmse: Vec::with_capacity(steps - 2),
        sq_error: 0.0,
        count: 0,
        diverged_at: None,
    };
    for t in 1..steps - 1 {
        let mut next = match model.next_velocity(mesh, adj, &prev, &cur) {
            Ok(v) => v,
            Err(ModelError::NonFinite { .. }) => vec![f32::NAN; cur.len()],
            Err(e) => return Err(e.into()),
        };
        for &i in &walls {
            next[i * dim..(i + 1) * dim].iter_mut().for_each(|v| *v = 0.0);
        }
        if out.diverged_at.is_none() && next.iter().any(|v| !v.is_finite() || (v.abs() as f64) > limit) {
            out.diverged_at = Some(t - 1);
        }
        let truth = &traj.frames[t + 1];
        let sq: f64 = next.iter().zip(truth).map(|(&p, &y)| (p as f64 - y as f64).powi(2)).sum();
        out.sq_error += sq;
        out.count += next.len() as u64;
        out.step_rmse.push((sq / next.len().max(1) as f64).sqrt());
        if teacher_forced {
            prev = cur;
            cur = truth.clone();
        } else {
            prev = std::mem::replace(&mut cur, next.clone());
        }
        out.predictions.push(next);
    }
    Ok(out)
}

/// Full autoregressive rollout seeded with the true states 0 and 1; every
/// later input is the model's own prediction with Wall nodes zeroed.
pub fn rollout(
    model: &dyn Surrogate,
    id: u32,
    traj: &Trajectory,
    adj: &Adjacency,
    limit: f64,
) -> Result<RolloutResult, EvalError> {
    run(model, id, traj, adj, limit, false)
}

/// One-step predictions from true inputs at every step.
pub fn rollout_teacher_forced(
    model: &dyn Surrogate,
    id: u32,
    traj: &Trajectory,
    adj: &Adjacency,
    limit: f64,
) -> Result<RolloutResult, EvalError> {
    run(model, id, traj, adj, limit, true)
}

/// Rolls out every trajectory (concurrently) with self-looped mesh
/// adjacency.
pub fn rollout_all(model: &dyn Surrogate, trajectories: &[(u32, Trajectory)]) -> Result<Vec<RolloutResult>, EvalError> {
    let limit = divergence_limit(trajectories.iter().map(|(_, t)| t));
    par::map_slice(trajectories, |(id, t)| rollout(model, *id, t, &build_adjacency(&t.mesh, true), limit))
        .into_iter()
        .collect()
}

/// `sqrt` of the mean squared error over all trajectories, steps, nodes and
/// components.
pub fn all_rollout_rmse(results: &[RolloutResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    let (sq, n) = results.iter().fold((0.0, 0u64), |(s, n), r| (s + r.sq_error, n + r.count));
    Ok((sq / n.max(1) as f64).sqrt())
}
