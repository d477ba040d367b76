use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::store::Trajectory;

/// Lower bound on every per-channel standard deviation.
pub const STD_FLOOR: f64 = 1e-8;

/// Streaming per-channel mean and variance (Welford).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { count: 0, mean: vec![0.0; channels], m2: vec![0.0; channels] }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mean.clone()
    }

    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub fn std(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.m2.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect()
    }
}

/// Zero-mean, unit-variance scaling for the continuous input channels
/// (velocity, acceleration, position) and the target velocity. Node-type
/// one-hot channels pass through unscaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalizer {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(inputs: usize, targets: usize) -> Self {
        Self {
            input_mean: vec![0.0; inputs],
            input_std: vec![1.0; inputs],
            target_mean: vec![0.0; targets],
            target_std: vec![1.0; targets],
        }
    }

    pub fn input(&self, c: usize, x: f64) -> f64 {
        (x - self.input_mean[c]) / self.input_std[c]
    }

    pub fn input_inverse(&self, c: usize, x: f64) -> f64 {
        x * self.input_std[c] + self.input_mean[c]
    }

    pub fn target(&self, c: usize, x: f64) -> f64 {
        (x - self.target_mean[c]) / self.target_std[c]
    }

    pub fn target_inverse(&self, c: usize, x: f64) -> f64 {
        x * self.target_std[c] + self.target_mean[c]
    }

    /// Velocity dimension this normalizer was built for.
    pub fn dim(&self) -> usize {
        self.target_mean.len()
    }
}

/// Statistics over every node of every usable sample `(trajectory, t)`,
/// `1 <= t <= steps - 2`, in trajectory order.
pub fn compute_normalizer(trajectories: &[&Trajectory]) -> Result<Normalizer, TrainError> {
    let first = trajectories.first().ok_or_else(|| TrainError::Data("empty training split".into()))?;
    let dim = first.dim();
    let mut inputs = RunningStats::new(3 * dim);
    let mut targets = RunningStats::new(dim);
    let mut row = vec![0.0; 3 * dim];
    for traj in trajectories {
        if traj.dim() != dim {
            return Err(TrainError::Data("trajectories differ in dimension".into()));
        }
        for t in 1..traj.num_steps().saturating_sub(1) {
            let (prev, cur, next) = (&traj.frames[t - 1], &traj.frames[t], &traj.frames[t + 1]);
            for i in 0..traj.num_nodes() {
                let p = traj.mesh.position(i);
                for c in 0..dim {
                    let k = i * dim + c;
                    row[c] = cur[k] as f64;
                    row[dim + c] = cur[k] as f64 - prev[k] as f64;
                    row[2 * dim + c] = p[c];
                }
                inputs.push(&row);
                let tgt: Vec<f64> = (0..dim).map(|c| next[i * dim + c] as f64).collect();
                targets.push(&tgt);
            }
        }
    }
    if inputs.count() == 0 {
        return Err(TrainError::Data("no usable samples (trajectories need at least 3 steps)".into()));
    }
    Ok(Normalizer {
        input_mean: inputs.mean(),
        input_std: inputs.std(),
        target_mean: targets.mean(),
        target_std: targets.std(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.0, 7.5, 3.25];
        let mut s = RunningStats::new(1);
        for x in xs {
            s.push(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        assert!((s.mean()[0] - mean).abs() < 1e-12);
        assert!((s.std()[0] - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_is_floored() {
        let mut s = RunningStats::new(1);
        for _ in 0..10 {
            s.push(&[3.0]);
        }
        assert_eq!(s.std(), vec![STD_FLOOR]);
        let n = Normalizer { input_mean: s.mean(), input_std: s.std(), target_mean: vec![], target_std: vec![] };
        assert_eq!(n.input(0, 3.0), 0.0);
    }

    #[test]
    fn standard_normal_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = RunningStats::new(1);
        for _ in 0..100_000 {
            let x: f64 = StandardNormal.sample(&mut rng);
            s.push(&[x]);
        }
        assert!(s.mean()[0].abs() < 0.02);
        assert!((s.std()[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn round_trip_is_lossless() {
        let n = Normalizer {
            input_mean: vec![0.3],
            input_std: vec![2.5e-3],
            target_mean: vec![-1.0],
            target_std: vec![4.0],
        };
        for x in [0.0f32, 0.31, -7.0, 1e3] {
            let back = n.input_inverse(0, n.input(0, x as f64)) as f32;
            assert!((back - x).abs() <= 1e-6 * x.abs().max(1.0));
            let back = n.target_inverse(0, n.target(0, x as f64)) as f32;
            assert!((back - x).abs() <= 1e-6 * x.abs().max(1.0));
        }
    }
}
