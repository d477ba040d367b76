//! AdamW with decoupled weight decay and a linear-warmup + cosine schedule.

use serde::{Deserialize, Serialize};

use crate::tensor::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient at parameter {index} ({value})")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4 }
    }
}

/// Moments and step counter. Moments are kept in f64 regardless of the
/// parameter precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState {
    pub hyper: AdamWConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// True where weight decay applies.
    pub decay_mask: Vec<bool>,
}

impl AdamWState {
    pub fn new(hyper: AdamWConfig, decay_mask: Vec<bool>) -> Self {
        let n = decay_mask.len();
        Self { hyper, step: 0, m: vec![0.0; n], v: vec![0.0; n], decay_mask }
    }

    /// One AdamW update:
    /// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
    /// `theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + lambda theta)`.
    ///
    /// A non-finite gradient rejects the whole step and leaves parameters
    /// and state untouched.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<(), OptimError> {
        let n = self.m.len();
        if params.len() != n || grads.len() != n {
            return Err(OptimError::Shape(format!(
                "state has {n} slots, params {}, grads {}",
                params.len(),
                grads.len()
            )));
        }
        if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient { index, value: grads[index].to_f64().unwrap_or(f64::NAN) });
        }
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.hyper;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..n {
            let g = grads[i].to_f64().unwrap();
            let m = beta1 * self.m[i] + (1.0 - beta1) * g;
            let v = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            self.m[i] = m;
            self.v[i] = v;
            let theta = params[i].to_f64().unwrap();
            let decay = if self.decay_mask[i] { weight_decay * theta } else { 0.0 };
            let update = (m / bc1) / ((v / bc2).sqrt() + eps) + decay;
            params[i] = T::of(theta - lr * update);
        }
        Ok(())
    }
}

/// Linear warmup then cosine decay, anchored at global step `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_lr: f64,
    pub offset: u64,
}

/// Default warmup length: `min(1000, ceil(5% of steps))`, kept below `steps`.
pub fn default_warmup(steps: u64) -> u64 {
    let w = (steps as f64 * 0.05).ceil() as u64;
    w.min(1000).min(steps.saturating_sub(1))
}

impl LrSchedule {
    pub fn new(base_lr: f64, min_lr: f64, warmup_steps: u64, total_steps: u64, offset: u64) -> Result<Self, OptimError> {
        if total_steps == 0 || warmup_steps >= total_steps {
            return Err(OptimError::Schedule(format!(
                "need 0 <= warmup ({warmup_steps}) < total ({total_steps})"
            )));
        }
        if !(min_lr <= base_lr) || min_lr < 0.0 {
            return Err(OptimError::Schedule(format!("need 0 <= min_lr ({min_lr}) <= base_lr ({base_lr})")));
        }
        Ok(Self { base_lr, warmup_steps, total_steps, min_lr, offset })
    }

    pub fn with_default_warmup(base_lr: f64, min_lr: f64, total_steps: u64, offset: u64) -> Result<Self, OptimError> {
        Self::new(base_lr, min_lr, default_warmup(total_steps), total_steps, offset)
    }

    /// Learning rate at `global_step` (steps before `offset` are treated as
    /// the schedule start; steps past the end clamp to `min_lr`).
    pub fn lr_at(&self, global_step: u64) -> f64 {
        let s = global_step.saturating_sub(self.offset);
        let w = self.warmup_steps;
        if s < w {
            return self.base_lr * (s + 1) as f64 / w as f64;
        }
        if s >= self.total_steps {
            return self.min_lr;
        }
        let progress = (s - w) as f64 / (self.total_steps - w) as f64;
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// Global step one past this schedule's last step.
    pub fn end(&self) -> u64 {
        self.offset + self.total_steps
    }
}

/// What happens to the learning-rate schedule when the curriculum moves to
/// the next dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrMode {
    /// Keep following the original schedule.
    #[default]
    Continue,
    /// Start a fresh warmup + cosine schedule over the remaining steps.
    Reset,
}

pub fn switch_strategy(schedule: &LrSchedule, mode: LrMode, global_step: u64, remaining_steps: u64) -> LrSchedule {
    assert!(remaining_steps > 0, "switch with no remaining steps");
    match mode {
        LrMode::Continue => schedule.clone(),
        LrMode::Reset => LrSchedule {
            base_lr: schedule.base_lr,
            warmup_steps: default_warmup(remaining_steps),
            total_steps: remaining_steps,
            min_lr: schedule.min_lr,
            offset: global_step,
        },
    }
}
