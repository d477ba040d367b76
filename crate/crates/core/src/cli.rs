//! The `gridcourse` command line: datagen, coarsen, train, eval, flops.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::coarsen::{build_levels, CoarsenError, CoarsenTarget};
use crate::curriculum::{aneurysm_like_stats, cylinder_like_stats, parse_plan, FlopModel, PlanError};
use crate::eval::{all_rollout_rmse, rollout_all, EvalError, ModelSurrogate};
use crate::model::{MaskMode, ModelConfig, ModelError, ModelParams};
use crate::optim::AdamWConfig;
use crate::store::{
    format_versions, level_label, read_checkpoint, write_checkpoint, Dataset, FamilyIndex, Provenance, Split,
    StoreError, Trajectory, MANIFEST_VERSION,
};
use crate::synth::FamilySpec;
use crate::trainer::{steps_for_epochs, train_run, RunOptions, TrainConfig, TrainData, TrainError};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

/// Error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn config_err(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_CONFIG, message: message.into() }
}

fn data_err(message: impl Into<String>) -> CliError {
    CliError { code: EXIT_DATA, message: message.into() }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::ConfigMismatch(_) | StoreError::MissingLevel(_) => config_err(e.to_string()),
            _ => data_err(e.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        config_err(format!("curriculum.plan: {e}"))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite { .. } => CliError { code: EXIT_NUMERIC, message: e.to_string() },
            _ => config_err(format!("model: {e}")),
        }
    }
}

impl From<CoarsenError> for CliError {
    fn from(e: CoarsenError) -> Self {
        match e {
            CoarsenError::InvalidTarget(_) | CoarsenError::TargetOrder(_) => config_err(e.to_string()),
            _ => data_err(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            _ => data_err(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Optim(_) => config_err(e.to_string()),
            TrainError::Plan(p) => p.into(),
            TrainError::Store(s) => s.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Eval(v) => v.into(),
            TrainError::Data(_) => data_err(e.to_string()),
            TrainError::NonFinite { ref checkpoint, .. } => {
                let saved = checkpoint.as_ref().map(|p| format!(" (last good state in {})", p.display()));
                CliError { code: EXIT_NUMERIC, message: format!("{e}{}", saved.unwrap_or_default()) }
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        data_err(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset family root (contains `family.json`).
    pub family: PathBuf,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { family: PathBuf::from("data/synth") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_mult: usize,
    pub rms_eps: f64,
    pub mask_mode: MaskMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            layers: m.layers,
            width: m.width,
            heads: m.heads,
            mlp_mult: m.mlp_mult,
            rms_eps: m.rms_eps,
            mask_mode: m.mask_mode,
        }
    }
}

impl ModelSection {
    /// Full model config for `dim`-dimensional data.
    pub fn config(&self, dim: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            width: self.width,
            heads: self.heads,
            mlp_mult: self.mlp_mult,
            in_features: 3 * dim + 4,
            out_features: dim,
            rms_eps: self.rms_eps,
            mask_mode: self.mask_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_steps: Option<u64>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_accum: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        let a = AdamWConfig::default();
        Self {
            lr: 1e-3,
            min_lr: 1e-6,
            warmup_steps: None,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            grad_accum: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSection {
    pub plan: String,
}

impl Default for CurriculumSection {
    fn default() -> Self {
        Self { plan: "D:1.0".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Passes over the finest plan level's training samples.
    pub epochs: f64,
    /// Explicit step budget; overrides `epochs` when nonzero.
    pub steps: u64,
    pub noise_std: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub progress_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { epochs: 2.0, steps: 0, noise_std: 0.01, seed: 0, out: PathBuf::from("runs/default"), progress_every: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Rollout evaluation cadence in steps (0: only at the end).
    pub every: u64,
    /// Test trajectories per evaluation (0: all).
    pub trajectories: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { every: 0, trajectories: 0 }
    }
}

/// Run configuration file (TOML).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    pub curriculum: CurriculumSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(format!("config: {}", e.message().trim())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Trainer settings for `dim`-dimensional data and a resolved step budget.
    pub fn train_config(&self, dim: usize, total_steps: u64) -> TrainConfig {
        TrainConfig {
            model: self.model.config(dim),
            adamw: AdamWConfig {
                beta1: self.optim.beta1,
                beta2: self.optim.beta2,
                eps: self.optim.eps,
                weight_decay: self.optim.weight_decay,
            },
            lr: self.optim.lr,
            min_lr: self.optim.min_lr,
            warmup_steps: self.optim.warmup_steps,
            plan: self.curriculum.plan.clone(),
            total_steps,
            noise_std: self.train.noise_std,
            seed: self.train.seed,
            grad_accum: self.optim.grad_accum,
            eval_every: self.eval.every,
            eval_trajectories: self.eval.trajectories,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gridcourse", about = "Coarse-to-fine curriculum training for mesh flow surrogates")]
#[command(version = env!("CARGO_PKG_VERSION"), long_version = long_version())]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn long_version() -> &'static str {
    Box::leak(format!("{} ({})", env!("CARGO_PKG_VERSION"), format_versions()).into_boxed_str())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-level dataset family.
    Datagen(DatagenArgs),
    /// Add edge-collapse coarse levels to a family, transferring fields from D.
    Coarsen(CoarsenArgs),
    /// Train a model under a curriculum plan.
    Train(TrainArgs),
    /// Roll out a checkpoint on a family's test splits.
    Eval(EvalArgs),
    /// Print per-phase and cumulative FLOPs for a plan.
    Flops(FlopsArgs),
    /// Print format versions.
    Versions,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub fine_n: usize,
    /// Number of levels, the finest included; each halves the grid resolution.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 100)]
    pub trajectories: usize,
    #[arg(long, default_value_t = 60)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub jitter: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CoarsenArgs {
    /// Family root whose `D` level is coarsened.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Comma-separated targets: `0.25`, `f0.25` (node fraction) or `len:0.3`.
    #[arg(long, default_value = "0.25,0.25")]
    pub targets: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    #[arg(long)]
    pub family: Option<PathBuf>,
    #[arg(long)]
    pub plan: Option<String>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset family root.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Levels to evaluate (default: all levels of the family).
    #[arg(long)]
    pub level: Vec<String>,
    /// Cap on test trajectories per level (0: all).
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub plan: Option<String>,
    /// Level statistics: `aneurysm`, `cylinder`, or a family root.
    #[arg(long, default_value = "aneurysm")]
    pub stats: String,
    #[arg(long)]
    pub steps: Option<u64>,
}

fn print_versions() {
    println!("{}", format_versions());
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Datagen(a) => cmd_datagen(&a),
        Command::Coarsen(a) => cmd_coarsen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Flops(a) => cmd_flops(&a).map(|_| ()),
        Command::Versions => {
            print_versions();
            Ok(())
        }
    }
}

pub fn cmd_datagen(a: &DatagenArgs) -> Result<(), CliError> {
    if a.levels == 0 {
        return Err(config_err("--levels must be at least 1"));
    }
    let resolutions: Vec<usize> = (0..a.levels).map(|k| a.fine_n >> k).collect();
    if let Some(&n) = resolutions.iter().find(|&&n| n < 4) {
        return Err(config_err(format!("--fine-n {} with --levels {} gives grid resolution {n} < 4", a.fine_n, a.levels)));
    }
    if !(0.0..=0.3).contains(&a.jitter) {
        return Err(config_err(format!("--jitter {} outside [0, 0.3]", a.jitter)));
    }
    if a.steps < 3 || a.trajectories == 0 {
        return Err(config_err("need at least one trajectory of at least 3 steps"));
    }
    if a.out.exists() && std::fs::read_dir(&a.out)?.next().is_some() {
        if !a.force {
            return Err(data_err(format!("{} exists and is not empty (use --force)", a.out.display())));
        }
        std::fs::remove_dir_all(&a.out)?;
    }
    let spec = FamilySpec {
        resolutions,
        trajectories: a.trajectories,
        steps: a.steps,
        dt: 0.01,
        jitter: a.jitter,
        test_fraction: a.test_fraction,
        seed: a.seed,
    };
    let mut labels = Vec::new();
    for (level, &n) in spec.resolutions.iter().enumerate() {
        let label = level_label(level);
        let trajs: Vec<Trajectory> = crate::par::map_range(spec.trajectories, |i| spec.trajectory(level, i));
        let refs: Vec<(u32, Split, &Trajectory)> = trajs
            .iter()
            .enumerate()
            .map(|(i, t)| (i as u32, if spec.is_test(i) { Split::Test } else { Split::Train }, t))
            .collect();
        let provenance = Provenance {
            source_level: None,
            generator: format!("synth vortex grid n={n} jitter={}", spec.jitter),
            targets: Vec::new(),
            seed: spec.seed,
        };
        Dataset::create(&a.out.join(&label), "synth", &label, &refs, provenance)?;
        println!("{label}: {} trajectories, {} nodes each", trajs.len(), trajs[0].num_nodes());
        labels.push(label);
    }
    FamilyIndex { version: MANIFEST_VERSION, name: "synth".into(), levels: labels }.save(&a.out)?;
    Ok(())
}

pub fn cmd_coarsen(a: &CoarsenArgs) -> Result<(), CliError> {
    let targets = a
        .targets
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(CoarsenTarget::parse)
        .collect::<Result<Vec<_>, _>>()?;
    let index = FamilyIndex::open(&a.input)?;
    let fine = index.level(&a.input, "D")?;
    let out = build_levels(&fine, &a.input, &targets, a.seed)?;
    for ds in &out {
        println!("{}: mean {:.1} nodes", ds.manifest.level, ds.mean_nodes());
    }
    Ok(())
}

fn effective_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(f) = &a.family {
        cfg.data.family = f.clone();
    }
    if let Some(p) = &a.plan {
        cfg.curriculum.plan = p.clone();
    }
    if let Some(s) = a.steps {
        cfg.train.steps = s;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.train.out = o.clone();
    }
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = effective_config(a)?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let index = FamilyIndex::open(&cfg.data.family)?;
    let plan = parse_plan(&cfg.curriculum.plan, Some(&index.levels))?;
    let data = TrainData::load(&cfg.data.family, &plan.levels())?;
    let finest = &data.levels[&plan.phases.last().unwrap().level];
    let dim = finest.dim().ok_or_else(|| data_err("finest level has no trajectories"))?;
    let total = if cfg.train.steps > 0 {
        cfg.train.steps
    } else {
        if !(cfg.train.epochs > 0.0) {
            return Err(config_err(format!("train.epochs: must be positive, got {}", cfg.train.epochs)));
        }
        steps_for_epochs(cfg.train.epochs, finest)
    };
    let tc = cfg.train_config(dim, total);
    std::fs::create_dir_all(&cfg.train.out)?;
    std::fs::write(cfg.train.out.join("config.toml"), cfg.to_toml())?;
    let resume = a.resume.as_ref().map(|p| read_checkpoint(p)).transpose()?;
    let opts = RunOptions {
        resume,
        stop_at: None,
        out_dir: Some(cfg.train.out.clone()),
        progress_every: cfg.train.progress_every,
    };
    let outcome = train_run(&tc, &data, opts)?;
    outcome.report.write_jsonl(&cfg.train.out.join("report.jsonl"))?;
    write_checkpoint(&cfg.train.out.join("final.gcck"), &outcome.checkpoint)?;

    let model = ModelSurrogate { params: &outcome.params, normalizer: &outcome.normalizer };
    let results = rollout_all(&model, &finest.test)?;
    if !results.is_empty() {
        println!("{}: all-rollout RMSE {:.6e}", finest.label, all_rollout_rmse(&results)?);
    }
    println!(
        "trained {} steps, cumulative {:.4e} FLOPs, final loss {:.5e}",
        outcome.report.steps.len(),
        outcome.report.final_flops(),
        outcome.report.steps.last().map(|s| s.loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let ck = read_checkpoint(&a.checkpoint)?;
    let params = ModelParams::from_values(&ck.model, ck.weights.clone())?;
    let model = ModelSurrogate { params: &params, normalizer: &ck.normalizer };
    let index = FamilyIndex::open(&a.dataset)?;
    let levels = if a.level.is_empty() { index.levels.clone() } else { a.level.clone() };
    for label in &levels {
        let ds = index.level(&a.dataset, label)?;
        let mut test = ds.load_split(Split::Test)?;
        if test.is_empty() {
            test = ds.load_split(Split::Train)?;
        }
        if a.limit > 0 {
            test.truncate(a.limit);
        }
        let results = rollout_all(&model, &test)?;
        let diverged = results.iter().filter(|r| r.diverged_at.is_some()).count();
        println!(
            "{label}: all-rollout RMSE {:.6e} over {} trajectories ({diverged} diverged)",
            all_rollout_rmse(&results)?,
            results.len()
        );
    }
    Ok(())
}

/// Per-phase rows `(level, steps, phase FLOPs, cumulative FLOPs)` and the
/// ratio of the plan's total to the single-phase `D:1.0` baseline.
pub struct FlopTable {
    pub rows: Vec<(String, u64, f64, f64)>,
    pub baseline: f64,
    pub ratio: f64,
}

pub fn cmd_flops(a: &FlopsArgs) -> Result<FlopTable, CliError> {
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let plan_text = a.plan.clone().unwrap_or(cfg.curriculum.plan.clone());
    let (stats, dim) = match a.stats.as_str() {
        "aneurysm" => (aneurysm_like_stats(), 3),
        "cylinder" => (cylinder_like_stats(), 2),
        root => {
            let root = Path::new(root);
            let index = FamilyIndex::open(root)?;
            let data = TrainData::load(root, &index.levels)?;
            let dim = data.levels.values().find_map(|l| l.dim()).unwrap_or(2);
            (data.levels.iter().map(|(k, l)| (k.clone(), l.stats())).collect(), dim)
        }
    };
    let known: Vec<String> = stats.keys().cloned().collect();
    let steps = a.steps.unwrap_or(if cfg.train.steps > 0 { cfg.train.steps } else { 10_000 });
    let plan = parse_plan(&plan_text, Some(&known))?.with_total_steps(steps)?;
    let fm = FlopModel::new(cfg.model.config(dim), stats);
    let per_phase = fm.plan_flops(&plan)?;
    let baseline = fm.estimate_flops("D", steps)?;
    let mut rows = Vec::new();
    println!("plan {} over {steps} steps", plan.to_spec_string());
    for (i, (p, (f, cum))) in plan.phases.iter().zip(&per_phase).enumerate() {
        let s = plan.phase_steps(i);
        println!("  phase {i} {:>3} {s:>8} steps  {f:.4e} FLOPs  cumulative {cum:.4e}", p.level);
        rows.push((p.level.clone(), s, *f, *cum));
    }
    let total = per_phase.last().map(|x| x.1).unwrap_or(0.0);
    let ratio = total / baseline;
    println!("baseline D:1.0 {baseline:.4e} FLOPs, ratio {ratio:.4}");
    Ok(FlopTable { rows, baseline, ratio })
}
