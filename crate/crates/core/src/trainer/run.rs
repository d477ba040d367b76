use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compute_normalizer, make_sample, step_loss, EvalRecord, Normalizer, SampleSpec, StepRecord, SwitchEvent,
    TrainError, TrainReport,
};
use crate::curriculum::{parse_plan, CurriculumPlan, FlopModel, LevelStats};
use crate::eval::{all_rollout_rmse, divergence_limit, rollout, ModelSurrogate};
use crate::meshkit::{build_adjacency, Adjacency};
use crate::model::{backward_from_cache, forward_with_cache, ModelConfig, ModelError, ModelParams};
use crate::optim::{default_warmup, switch_strategy, AdamWConfig, AdamWState, LrSchedule, OptimError};
use crate::par;
use crate::store::{
    write_checkpoint, Checkpoint, CurriculumPosition, FamilyIndex, RngState, Split, StoreError, Trajectory,
};

// ChaCha stream ids; the init stream is the default stream 0
const NOISE_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub adamw: AdamWConfig,
    pub lr: f64,
    pub min_lr: f64,
    /// Defaults to `min(1000, 5%)` of the run.
    pub warmup_steps: Option<u64>,
    pub plan: String,
    pub total_steps: u64,
    pub noise_std: f64,
    pub seed: u64,
    /// Graphs averaged per optimizer step.
    pub grad_accum: usize,
    /// Roll out the finest level's test split every this many steps (0: never).
    pub eval_every: u64,
    /// Cap on test trajectories per evaluation (0: all).
    pub eval_trajectories: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            adamw: AdamWConfig::default(),
            lr: 1e-3,
            min_lr: 1e-6,
            warmup_steps: None,
            plan: "D:1.0".into(),
            total_steps: 1000,
            noise_std: 0.01,
            seed: 0,
            grad_accum: 1,
            eval_every: 0,
            eval_trajectories: 0,
        }
    }
}

impl TrainConfig {
    /// Settings a resumed run must share with its checkpoint.
    pub fn resume_key(&self) -> serde_json::Value {
        serde_json::json!({
            "adamw": self.adamw,
            "lr": self.lr,
            "min_lr": self.min_lr,
            "warmup_steps": self.warmup_steps,
            "plan": self.plan,
            "total_steps": self.total_steps,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "grad_accum": self.grad_accum,
        })
    }
}

/// Trajectories of one level with their graphs.
#[derive(Debug, Clone)]
pub struct LevelData {
    pub label: String,
    pub train: Vec<(u32, Trajectory)>,
    pub test: Vec<(u32, Trajectory)>,
    train_adj: Vec<Adjacency>,
    test_adj: Vec<Adjacency>,
}

impl LevelData {
    pub fn new(label: &str, train: Vec<(u32, Trajectory)>, test: Vec<(u32, Trajectory)>) -> Self {
        let train_adj = par::map_slice(&train, |(_, t)| build_adjacency(&t.mesh, true));
        let test_adj = par::map_slice(&test, |(_, t)| build_adjacency(&t.mesh, true));
        Self { label: label.to_string(), train, test, train_adj, test_adj }
    }

    /// Every usable `(train index, t)` pair in storage order.
    pub fn samples(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, (_, t)) in self.train.iter().enumerate() {
            out.extend((1..t.num_steps().saturating_sub(1)).map(|s| (i, s)));
        }
        out
    }

    /// Mean graph size over the training split.
    pub fn stats(&self) -> LevelStats {
        let n = self.train.len().max(1) as f64;
        LevelStats {
            nodes: self.train.iter().map(|(_, t)| t.num_nodes() as f64).sum::<f64>() / n,
            directed_edges: self.train_adj.iter().map(|a| a.directed_edge_count() as f64).sum::<f64>() / n,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.train.first().or(self.test.first()).map(|(_, t)| t.dim())
    }
}

/// All levels a run may draw from, keyed by label.
#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub levels: BTreeMap<String, LevelData>,
}

impl TrainData {
    pub fn from_levels(levels: Vec<LevelData>) -> Self {
        Self { levels: levels.into_iter().map(|l| (l.label.clone(), l)).collect() }
    }

    /// Loads the named levels of the family stored under `root`.
    pub fn load(root: &Path, labels: &[String]) -> Result<Self, TrainError> {
        let index = FamilyIndex::open(root)?;
        let mut levels = Vec::new();
        for label in labels {
            let ds = index.level(root, label)?;
            levels.push(LevelData::new(label, ds.load_split(Split::Train)?, ds.load_split(Split::Test)?));
        }
        Ok(Self::from_levels(levels))
    }

    pub fn labels(&self) -> Vec<String> {
        self.levels.keys().cloned().collect()
    }

    fn level(&self, label: &str) -> Result<&LevelData, TrainError> {
        self.levels.get(label).ok_or_else(|| TrainError::Store(StoreError::MissingLevel(label.to_string())))
    }
}

/// Optimizer steps covering `epochs` passes over a level's samples.
pub fn steps_for_epochs(epochs: f64, level: &LevelData) -> u64 {
    (epochs * level.samples().len() as f64).ceil() as u64
}

#[derive(Debug, Default)]
pub struct RunOptions {
    pub resume: Option<Checkpoint>,
    /// Stop before executing this global step.
    pub stop_at: Option<u64>,
    /// Directory for the last-good checkpoint written on a numeric abort.
    pub out_dir: Option<PathBuf>,
    /// Print a progress line every this many steps (0: silent).
    pub progress_every: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint: Checkpoint,
    pub params: ModelParams<f32>,
    pub normalizer: Normalizer,
}

struct State {
    params: ModelParams<f32>,
    opt: AdamWState,
    schedule: LrSchedule,
    step: u64,
    noise: ChaCha8Rng,
    normalizer: Normalizer,
    cum_flops: f64,
}

impl State {
    fn checkpoint(&self, config: &TrainConfig, plan: &CurriculumPlan) -> Checkpoint {
        let last = plan.total_steps.saturating_sub(1);
        Checkpoint {
            model: config.model.clone(),
            run: config.resume_key(),
            optimizer: self.opt.hyper.clone(),
            optimizer_step: self.opt.step,
            schedule: self.schedule.clone(),
            position: CurriculumPosition {
                plan: config.plan.clone(),
                total_steps: plan.total_steps,
                phase: plan.phase_at(self.step.min(last)).0,
                global_step: self.step,
                cum_flops: self.cum_flops,
            },
            noise_rng: RngState {
                seed: config.seed,
                stream: self.noise.get_stream(),
                word_pos: self.noise.get_word_pos() as u64,
            },
            normalizer: self.normalizer.clone(),
            weights: self.params.values.clone(),
            adam_m: self.opt.m.clone(),
            adam_v: self.opt.v.clone(),
        }
    }
}

fn fresh_state(config: &TrainConfig, plan: &CurriculumPlan, data: &TrainData) -> Result<State, TrainError> {
    let first = data.level(&plan.phases[0].level)?;
    let refs: Vec<&Trajectory> = first.train.iter().map(|(_, t)| t).collect();
    let normalizer = compute_normalizer(&refs)?;
    let params = ModelParams::<f32>::init(&config.model, config.seed)?;
    let opt = AdamWState::new(config.adamw.clone(), params.layout.decay_mask());
    let warmup = config.warmup_steps.unwrap_or_else(|| default_warmup(plan.total_steps));
    let schedule = LrSchedule::new(config.lr, config.min_lr, warmup, plan.total_steps, 0)?;
    let mut noise = ChaCha8Rng::seed_from_u64(config.seed);
    noise.set_stream(NOISE_STREAM);
    Ok(State { params, opt, schedule, step: 0, noise, normalizer, cum_flops: 0.0 })
}

fn resumed_state(config: &TrainConfig, ck: Checkpoint) -> Result<State, TrainError> {
    ck.check_resume(&config.model, &config.resume_key())?;
    let params = ModelParams::from_values(&config.model, ck.weights)?;
    let n = params.len();
    if ck.adam_m.len() != n || ck.adam_v.len() != n {
        return Err(TrainError::Store(StoreError::Invalid("optimizer moments do not match weights".into())));
    }
    let mut opt = AdamWState::new(ck.optimizer, params.layout.decay_mask());
    opt.step = ck.optimizer_step;
    opt.m = ck.adam_m;
    opt.v = ck.adam_v;
    let mut noise = ChaCha8Rng::seed_from_u64(ck.noise_rng.seed);
    noise.set_stream(ck.noise_rng.stream);
    noise.set_word_pos(ck.noise_rng.word_pos as u128);
    Ok(State {
        params,
        opt,
        schedule: ck.schedule,
        step: ck.position.global_step,
        noise,
        normalizer: ck.normalizer,
        cum_flops: ck.position.cum_flops,
    })
}

fn shuffled(level: &LevelData, seed: u64, phase: usize, epoch: u64) -> Vec<(usize, usize)> {
    let mut s = level.samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM + ((phase as u64) << 40) + (epoch << 1));
    s.shuffle(&mut rng);
    s
}

fn abort(state: &State, config: &TrainConfig, plan: &CurriculumPlan, opts: &RunOptions, detail: String) -> TrainError {
    let checkpoint = opts.out_dir.as_ref().and_then(|dir| {
        let path = dir.join("last_good.gcck");
        write_checkpoint(&path, &state.checkpoint(config, plan)).ok().map(|_| path)
    });
    TrainError::NonFinite { step: state.step, detail, checkpoint }
}

/// Evaluates the finest plan level's test split.
fn evaluate(state: &State, config: &TrainConfig, level: &LevelData) -> Result<EvalRecord, TrainError> {
    let cap = if config.eval_trajectories == 0 { level.test.len() } else { config.eval_trajectories };
    let cases: Vec<usize> = (0..level.test.len().min(cap)).collect();
    let model = ModelSurrogate { params: &state.params, normalizer: &state.normalizer };
    let limit = divergence_limit(level.test.iter().map(|(_, t)| t));
    let results = par::map_slice(&cases, |&i| rollout(&model, level.test[i].0, &level.test[i].1, &level.test_adj[i], limit))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalRecord {
        step: state.step,
        level: level.label.clone(),
        rmse: all_rollout_rmse(&results)?,
        diverged: results.iter().filter(|r| r.diverged_at.is_some()).count(),
    })
}

/// Runs (or resumes) a curriculum training run. One graph per sample,
/// `grad_accum` samples per optimizer step; samples of each phase are
/// reshuffled every epoch from the run seed.
pub fn train_run(config: &TrainConfig, data: &TrainData, opts: RunOptions) -> Result<TrainOutcome, TrainError> {
    config.model.validate()?;
    if config.grad_accum == 0 {
        return Err(TrainError::Config("grad_accum must be at least 1".into()));
    }
    if !(config.noise_std >= 0.0) {
        return Err(TrainError::Config(format!("noise_std must be >= 0, got {}", config.noise_std)));
    }
    let plan = parse_plan(&config.plan, Some(&data.labels()))?.with_total_steps(config.total_steps)?;
    let levels: Vec<&LevelData> = plan.phases.iter().map(|p| data.level(&p.level)).collect::<Result<_, _>>()?;
    for l in &levels {
        if l.train.is_empty() || l.samples().is_empty() {
            return Err(TrainError::Data(format!("level {} has no usable training samples", l.label)));
        }
    }
    let dim = levels[0].dim().unwrap();
    let spec = SampleSpec { dim, noise_std: config.noise_std };
    if config.model.in_features != spec.in_features() || config.model.out_features != spec.out_features() {
        return Err(TrainError::Config(format!(
            "model in/out features {}/{} do not match {dim}D samples ({}/{})",
            config.model.in_features,
            config.model.out_features,
            spec.in_features(),
            spec.out_features()
        )));
    }
    let flop_model = FlopModel::new(config.model.clone(), levels.iter().map(|l| (l.label.clone(), l.stats())).collect());
    let phase_flops: Vec<f64> = plan
        .phases
        .iter()
        .map(|p| flop_model.step_flops(&p.level).map(|f| f * config.grad_accum as f64))
        .collect::<Result<_, _>>()?;
    let finest = *levels.last().unwrap();

    let mut state = match opts.resume.clone() {
        Some(ck) => resumed_state(config, ck)?,
        None => fresh_state(config, &plan, data)?,
    };
    let total = plan.total_steps;
    let end = opts.stop_at.unwrap_or(total).min(total);
    let bounds = plan.boundaries();
    let mut report = TrainReport::default();
    let mut perm: Option<(usize, u64, Vec<(usize, usize)>)> = None;
    let started = Instant::now();
    let accum = config.grad_accum as u64;

    while state.step < end {
        let step = state.step;
        let (phase, switch) = plan.phase_at(step);
        if switch {
            let prev = &plan.phases[phase - 1];
            state.schedule = switch_strategy(&state.schedule, prev.lr_mode, step, total - step);
            report.switches.push(SwitchEvent {
                step,
                from: prev.level.clone(),
                to: plan.phases[phase].level.clone(),
                lr_mode: prev.lr_mode,
            });
        }
        let level = levels[phase];
        let per_epoch = level.samples().len() as u64;
        let local = step - bounds[phase];
        let mut grads = vec![0f32; state.params.len()];
        let mut loss = 0.0;
        for a in 0..accum {
            let j = local * accum + a;
            let epoch = j / per_epoch;
            if !matches!(&perm, Some((p, e, _)) if *p == phase && *e == epoch) {
                perm = Some((phase, epoch, shuffled(level, config.seed, phase, epoch)));
            }
            let (ti, t) = perm.as_ref().unwrap().2[(j % per_epoch) as usize];
            let traj = &level.train[ti].1;
            let adj = &level.train_adj[ti];
            let (x, y) = make_sample::<f32>(traj, t, &state.normalizer, Some((&mut state.noise, config.noise_std)))?;
            let (pred, cache) = match forward_with_cache(&state.params, &x, adj) {
                Ok(v) => v,
                Err(ModelError::NonFinite { layer, node }) => {
                    return Err(abort(&state, config, &plan, &opts, format!("activation in {layer}, node {node}")))
                }
                Err(e) => return Err(e.into()),
            };
            let (l, g) = step_loss(&pred, &y);
            if !l.is_finite() {
                return Err(abort(&state, config, &plan, &opts, format!("loss {l}")));
            }
            loss += l;
            let gr = backward_from_cache(&state.params, &cache, adj, &g)?;
            for (acc, v) in grads.iter_mut().zip(&gr.params) {
                *acc += *v;
            }
        }
        if accum > 1 {
            let s = 1.0 / accum as f32;
            grads.iter_mut().for_each(|g| *g *= s);
            loss /= accum as f64;
        }
        let lr = state.schedule.lr_at(step);
        match state.opt.step(&mut state.params.values, &grads, lr) {
            Ok(()) => {}
            Err(OptimError::NonFiniteGradient { index, value }) => {
                return Err(abort(&state, config, &plan, &opts, format!("gradient {value} at parameter {index}")))
            }
            Err(e) => return Err(e.into()),
        }
        state.cum_flops += phase_flops[phase];
        let rec = StepRecord {
            step,
            phase,
            level: level.label.clone(),
            lr,
            loss,
            cum_flops: state.cum_flops,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if opts.progress_every > 0 && (step + 1) % opts.progress_every == 0 {
            eprintln!(
                "step {:>7}/{total}  phase {phase} ({})  lr {lr:.3e}  loss {loss:.5e}  flops {:.3e}",
                step + 1,
                rec.level,
                rec.cum_flops
            );
        }
        report.steps.push(rec);
        state.step += 1;
        if config.eval_every > 0 && state.step % config.eval_every == 0 && !finest.test.is_empty() {
            report.evals.push(evaluate(&state, config, finest)?);
        }
    }

    Ok(TrainOutcome {
        report,
        checkpoint: state.checkpoint(config, &plan),
        params: state.params,
        normalizer: state.normalizer,
    })
}
