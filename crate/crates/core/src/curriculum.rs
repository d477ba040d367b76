//! Curriculum plans over dataset levels and training-cost accounting.
//!
//! A plan string lists phases as `LEVEL:FRACTION[:MODE]`, comma separated,
//! e.g. `C3:0.5:reset,D:0.5`. `MODE` (`reset` or `continue`, default
//! `continue`) says what happens to the learning-rate schedule when the
//! phase ends.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::optim::LrMode;
use crate::store::level_index;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlanError {
    #[error("malformed plan phase {0:?}")]
    Malformed(String),
    #[error("unknown level {0}")]
    UnknownLevel(String),
    #[error("phase fractions sum to {0}, expected 1")]
    FractionSum(f64),
    #[error("last phase level {last} is not the finest level in the plan ({finest})")]
    NotFinestLast { last: String, finest: String },
    #[error("phase {phase} gets no steps out of {total}")]
    EmptyPhase { phase: usize, total: u64 },
    #[error("no statistics for level {0}")]
    MissingStats(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub level: String,
    pub fraction: f64,
    pub lr_mode: LrMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub phases: Vec<Phase>,
    pub total_steps: u64,
}

/// Parses a plan string. `known_levels`, when given, restricts the labels
/// that may appear.
pub fn parse_plan(text: &str, known_levels: Option<&[String]>) -> Result<CurriculumPlan, PlanError> {
    let mut phases = Vec::new();
    for part in text.split(',').map(str::trim) {
        let fields: Vec<&str> = part.split(':').map(str::trim).collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(PlanError::Malformed(part.to_string()));
        }
        let level = fields[0].to_string();
        if level_index(&level).is_none() {
            return Err(PlanError::UnknownLevel(level));
        }
        if let Some(known) = known_levels {
            if !known.contains(&level) {
                return Err(PlanError::UnknownLevel(level));
            }
        }
        let fraction: f64 = fields[1].parse().map_err(|_| PlanError::Malformed(part.to_string()))?;
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(PlanError::Malformed(part.to_string()));
        }
        let lr_mode = match fields.get(2) {
            None | Some(&"continue") => LrMode::Continue,
            Some(&"reset") => LrMode::Reset,
            Some(_) => return Err(PlanError::Malformed(part.to_string())),
        };
        phases.push(Phase { level, fraction, lr_mode });
    }
    let sum: f64 = phases.iter().map(|p| p.fraction).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PlanError::FractionSum(sum));
    }
    let finest = phases.iter().min_by_key(|p| level_index(&p.level).unwrap()).unwrap();
    let last = phases.last().unwrap();
    if level_index(&last.level) != level_index(&finest.level) {
        return Err(PlanError::NotFinestLast { last: last.level.clone(), finest: finest.level.clone() });
    }
    Ok(CurriculumPlan { phases, total_steps: 0 })
}

impl CurriculumPlan {
    /// Binds the plan to a step budget; every phase must get at least one
    /// step.
    pub fn with_total_steps(mut self, total: u64) -> Result<Self, PlanError> {
        self.total_steps = total;
        let b = self.boundaries();
        for p in 0..self.phases.len() {
            if b[p + 1] <= b[p] {
                return Err(PlanError::EmptyPhase { phase: p, total });
            }
        }
        Ok(self)
    }

    /// Phase start steps followed by `total_steps`:
    /// `floor(cumulative_fraction * total)`.
    pub fn boundaries(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.phases.len() + 1);
        out.push(0);
        let mut cum = 0.0;
        for (i, p) in self.phases.iter().enumerate() {
            cum += p.fraction;
            let b = if i + 1 == self.phases.len() {
                self.total_steps
            } else {
                ((cum * self.total_steps as f64 + 1e-9).floor() as u64).min(self.total_steps)
            };
            out.push(b);
        }
        out
    }

    /// Phase containing `global_step`, and whether that step is the first
    /// of a later phase (a switch).
    pub fn phase_at(&self, global_step: u64) -> (usize, bool) {
        let b = self.boundaries();
        let mut phase = 0;
        for p in 0..self.phases.len() {
            if global_step >= b[p] {
                phase = p;
            }
        }
        (phase, phase > 0 && global_step == b[phase])
    }

    pub fn phase_steps(&self, phase: usize) -> u64 {
        let b = self.boundaries();
        b[phase + 1] - b[phase]
    }

    /// Distinct level labels used by the plan, in phase order.
    pub fn levels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.phases {
            if !out.contains(&p.level) {
                out.push(p.level.clone());
            }
        }
        out
    }

    pub fn to_spec_string(&self) -> String {
        self.phases
            .iter()
            .map(|p| match p.lr_mode {
                LrMode::Reset => format!("{}:{}:reset", p.level, p.fraction),
                LrMode::Continue => format!("{}:{}", p.level, p.fraction),
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// Average graph size of one dataset level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub nodes: f64,
    /// Directed edges including one self-loop per node.
    pub directed_edges: f64,
}

/// Closed-form FLOP estimate for training the model on each level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopModel {
    pub levels: BTreeMap<String, LevelStats>,
    pub config: ModelConfig,
    /// Backward pass cost as a multiple of the forward pass.
    pub backward_multiplier: f64,
}

impl FlopModel {
    pub fn new(config: ModelConfig, levels: BTreeMap<String, LevelStats>) -> Self {
        Self { levels, config, backward_multiplier: 2.0 }
    }

    /// Forward FLOPs for one graph:
    /// `2Nd(F_in+d) + L(8Nd^2 + 4E'd_h H + 6Nmd^2) + 2Nd(d+F_out)`.
    pub fn forward_flops(&self, s: &LevelStats) -> f64 {
        let c = &self.config;
        let (n, e) = (s.nodes, s.directed_edges);
        let d = c.width as f64;
        let dh = c.head_width() as f64;
        let h = c.heads as f64;
        let m = c.mlp_mult as f64;
        let encoder = 2.0 * n * d * (c.in_features as f64 + d);
        let block = 8.0 * n * d * d + 4.0 * e * dh * h + 6.0 * n * m * d * d;
        let decoder = 2.0 * n * d * (d + c.out_features as f64);
        encoder + c.layers as f64 * block + decoder
    }

    pub fn step_flops(&self, level: &str) -> Result<f64, PlanError> {
        let s = self.levels.get(level).ok_or_else(|| PlanError::MissingStats(level.to_string()))?;
        Ok(self.forward_flops(s) * (1.0 + self.backward_multiplier))
    }

    pub fn estimate_flops(&self, level: &str, steps: u64) -> Result<f64, PlanError> {
        Ok(self.step_flops(level)? * steps as f64)
    }

    /// Per-phase FLOPs and the cumulative total at the end of each phase.
    pub fn plan_flops(&self, plan: &CurriculumPlan) -> Result<Vec<(f64, f64)>, PlanError> {
        let mut cum = 0.0;
        let mut out = Vec::with_capacity(plan.phases.len());
        for (i, p) in plan.phases.iter().enumerate() {
            let f = self.estimate_flops(&p.level, plan.phase_steps(i))?;
            cum += f;
            out.push((f, cum));
        }
        Ok(out)
    }

    pub fn total_flops(&self, plan: &CurriculumPlan) -> Result<f64, PlanError> {
        Ok(self.plan_flops(plan)?.last().map(|x| x.1).unwrap_or(0.0))
    }
}

/// Level statistics for an aneurysm-scale family: 3e5 fine nodes with ~12
/// directed neighbors per node, each coarser level roughly halving the node
/// count.
pub fn aneurysm_like_stats() -> BTreeMap<String, LevelStats> {
    [("D", 300_000.0), ("C1", 150_000.0), ("C2", 70_000.0), ("C3", 30_000.0), ("C4", 12_000.0)]
        .into_iter()
        .map(|(l, n)| (l.to_string(), LevelStats { nodes: n, directed_edges: 13.0 * n }))
        .collect()
}

/// Level statistics for a cylinder-scale 2D family: ~2,000 nodes and
/// ~4,000 undirected edges on the fine level.
pub fn cylinder_like_stats() -> BTreeMap<String, LevelStats> {
    [("D", 2_000.0), ("C1", 1_000.0), ("C2", 500.0)]
        .into_iter()
        .map(|(l, n)| (l.to_string(), LevelStats { nodes: n, directed_edges: 2.0 * (2.0 * n) + n }))
        .collect()
}
