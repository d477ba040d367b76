//! End-to-end acceptance checks. Runs as a plain binary so that every check
//! prints one verdict line; pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --release --test acceptance -- 1 2 5`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use gridcourse::cli::{cmd_flops, FlopsArgs};
use gridcourse::coarsen::{coarsen_mesh, transfer_field, CoarsenTarget};
use gridcourse::eval::{all_rollout_rmse, rollout_all, ModelSurrogate};
use gridcourse::meshkit::{build_adjacency, Adjacency, Mesh};
use gridcourse::model::{backward, forward, masked_attention, param_count, MaskMode, ModelConfig, ModelParams};
use gridcourse::store::{read_checkpoint, write_checkpoint};
use gridcourse::synth::{generate_mesh, FamilySpec};
use gridcourse::tensor::Mat;
use gridcourse::trainer::{
    make_sample, step_loss, train_run, LevelData, RunOptions, TrainConfig, TrainData, TrainOutcome,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn to_mat(rows: &Rows) -> Mat<f64> {
    Mat::from_vec(rows.len(), rows[0].len(), rows.concat())
}

fn level(spec: &FamilySpec, lvl: usize, label: &str) -> LevelData {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for i in 0..spec.trajectories {
        let t = (i as u32, spec.trajectory(lvl, i));
        if spec.is_test(i) {
            test.push(t)
        } else {
            train.push(t)
        }
    }
    LevelData::new(label, train, test)
}

fn family(spec: &FamilySpec) -> TrainData {
    let labels = ["D", "C1", "C2", "C3"];
    TrainData::from_levels((0..spec.resolutions.len()).map(|l| level(spec, l, labels[l])).collect())
}

fn tiny_family() -> TrainData {
    family(&FamilySpec { resolutions: vec![8, 6, 4], trajectories: 4, steps: 8, test_fraction: 0.25, ..Default::default() })
}

fn tiny_config(plan: &str, steps: u64) -> TrainConfig {
    TrainConfig {
        model: ModelConfig { layers: 1, width: 8, heads: 2, mlp_mult: 2, in_features: 10, out_features: 2, ..Default::default() },
        plan: plan.into(),
        total_steps: steps,
        ..Default::default()
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 6;
    let mut worst: f64 = 0.0;
    for mode in [MaskMode::PostSoftmax, MaskMode::PreSoftmax] {
        let cfg = ModelConfig {
            layers: 2,
            width: 8,
            heads: 2,
            mlp_mult: 2,
            in_features: 10,
            out_features: 2,
            mask_mode: mode,
            ..Default::default()
        };
        let adj = random_graph(n, 0.4, &mut rng);
        let p = random_params(&cfg, 3);
        let x = to_mat(&random_rows(n, 10, &mut rng));
        let up = to_mat(&random_rows(n, 2, &mut rng));
        let g = backward(&p, &x, &adj, &up).unwrap();
        let loss = |values: &[f64]| {
            let q = ModelParams::from_values(&cfg, values.to_vec()).unwrap();
            let y = forward(&q, &x, &adj).unwrap();
            y.data.iter().zip(&up.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let fd = central_diff(&p.values, 1e-5, loss);
        worst = worst.max(max_rel_err(&g.params, &fd, 1e-6));
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4 && secs < 60.0, format!("max relative error {worst:.2e} over all parameters, {secs:.1}s"))
}

fn attention_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let n = rng.random_range(1..=64);
        let density = rng.random_range(0.02..0.6);
        let heads = [1, 2, 4][trial % 3];
        let mode = if trial % 4 == 3 { MaskMode::PreSoftmax } else { MaskMode::PostSoftmax };
        let cfg = ModelConfig { layers: 1, width: 16, heads, in_features: 4, out_features: 2, mask_mode: mode, ..Default::default() };
        let p64 = random_params(&cfg, trial as u64).cast::<f32>().cast::<f64>();
        let adj = random_graph(n, density, &mut rng);
        let z = random_rows(n, 16, &mut rng);
        let z32 = Mat::from_vec(n, 16, z.concat().iter().map(|&v| v as f32).collect());
        let z = z32.data.chunks(16).map(|r| r.iter().map(|&v| v as f64).collect()).collect::<Rows>();
        let got = masked_attention(&p64.cast::<f32>(), 0, &z32, &adj).unwrap();
        let want = dense_attention(&p64, 0, &z, &dense_mask(&adj)).concat();
        for (g, w) in got.data.iter().zip(&want) {
            worst = worst.max((*g as f64 - w).abs() / w.abs().max(1.0));
        }
    }

    // identity mask: post-softmax keeps only P_ii v_i, pre-softmax keeps v_i
    let n = 10;
    let mut identity_gap: f64 = 0.0;
    let mut post_shrinks = true;
    for mode in [MaskMode::PostSoftmax, MaskMode::PreSoftmax] {
        let cfg = ModelConfig { layers: 1, width: 8, heads: 2, in_features: 4, out_features: 2, mask_mode: mode, ..Default::default() };
        let mut p = random_params(&cfg, 99).cast::<f32>().cast::<f64>();
        let wo = p.tensor_mut("blocks.0.wo").unwrap();
        wo.iter_mut().enumerate().for_each(|(k, w)| *w = if k / 8 == k % 8 { 1.0 } else { 0.0 });
        p.tensor_mut("blocks.0.bo").unwrap().iter_mut().for_each(|b| *b = 0.0);
        let z = random_rows(n, 8, &mut rng);
        let z = z.iter().map(|r| r.iter().map(|&v| v as f32 as f64).collect()).collect::<Rows>();
        let got = masked_attention(&p.cast::<f32>(), 0, &Mat::from_vec(n, 8, z.concat().iter().map(|&v| v as f32).collect()), &Adjacency::identity(n)).unwrap();
        let v = lin(&z, tensor(&p, "blocks.0.wv"), tensor(&p, "blocks.0.bv"));
        let q = lin(&z, tensor(&p, "blocks.0.wq"), tensor(&p, "blocks.0.bq"));
        let k = lin(&z, tensor(&p, "blocks.0.wk"), tensor(&p, "blocks.0.bk"));
        let all = vec![vec![true; n]; n];
        for h in 0..2 {
            let probs = head_probs(&q, &k, h, 4, &all, MaskMode::PostSoftmax);
            for i in 0..n {
                let weight = if mode == MaskMode::PostSoftmax { probs[i][i] } else { 1.0 };
                post_shrinks &= mode == MaskMode::PreSoftmax || weight < 1.0 - 1e-3;
                for c in 0..4 {
                    let want = weight * v[i][h * 4 + c];
                    identity_gap = identity_gap.max((got.data[i * 8 + h * 4 + c] as f64 - want).abs());
                }
            }
        }
    }
    check(
        worst < 1e-6 && identity_gap < 1e-6 && post_shrinks,
        format!("200 graphs: max error {worst:.2e} (relative above 1); identity mask: max error {identity_gap:.2e}, P_ii < 1: {post_shrinks}"),
    )
}

fn parameter_count() -> Outcome {
    let cfg = ModelConfig { layers: 10, width: 64, heads: 4, mlp_mult: 3, in_features: 9, out_features: 3, ..Default::default() };
    let counted = param_count(&cfg).unwrap();
    let p = ModelParams::<f32>::zeros(&cfg).unwrap();
    let enumerated: usize = p.layout.entries.iter().map(|e| e.rows * e.cols).sum();
    // encoder 9->64->64 + norm, ten blocks (4 square projections, gated MLP 64->192->64, 2 norms), decoder 64->64->3 + norm
    let enc = 9 * 64 + 64 + 64 * 64 + 64 + 64;
    let block = 4 * (64 * 64 + 64) + 2 * (64 * 192 + 192) + 192 * 64 + 64 + 2 * 64;
    let dec = 64 * 64 + 64 + 64 + 64 * 3 + 3;
    let by_hand = enc + 10 * block + dec;
    let off = (counted as f64 / 5e5 - 1.0).abs();
    check(
        counted == enumerated && counted == by_hand && p.len() == counted && off <= 0.15,
        format!("{counted} parameters (enumerated {enumerated}, by hand {by_hand}), {:.1}% from 500k", 100.0 * off),
    )
}

fn rms_error(source: &Mesh, target: &Mesh, f: impl Fn(&[f64]) -> f64) -> f64 {
    let field: Vec<f64> = (0..source.num_nodes()).map(|i| f(source.position(i))).collect();
    let out = transfer_field(source, &field, 1, target).unwrap();
    let sq: f64 = (0..target.num_nodes()).map(|i| (out[i] - f(target.position(i))).powi(2)).sum();
    (sq / target.num_nodes() as f64).sqrt()
}

fn interpolation() -> Outcome {
    let fine = generate_mesh(16, 0.25, 4);
    let collapsed = coarsen_mesh(&fine, &CoarsenTarget::fraction(0.3), 4).unwrap();
    let other_grid = generate_mesh(7, 0.3, 5);
    let mut worst: f64 = 0.0;
    for target in [&collapsed, &other_grid] {
        let fields: [Box<dyn Fn(&[f64]) -> [f64; 2]>; 2] =
            [Box::new(|_| [2.5, -1.0]), Box::new(|p| [1.5 * p[0] - 0.7 * p[1] + 0.3, -2.0 * p[1] + 4.0])];
        for f in &fields {
            let field: Vec<f64> = (0..fine.num_nodes()).flat_map(|i| f(fine.position(i))).collect();
            let out = transfer_field(&fine, &field, 2, target).unwrap();
            for i in 0..target.num_nodes() {
                let want = f(target.position(i));
                for k in 0..2 {
                    worst = worst.max((out[2 * i + k] - want[k]).abs() / want[k].abs().max(1.0));
                }
            }
        }
    }
    let probe = generate_mesh(64, 0.1, 6);
    let quad = |p: &[f64]| p[0] * p[0] - 0.5 * p[0] * p[1] + 0.8 * p[1] * p[1];
    let errors: Vec<f64> = [4, 8, 16, 32].iter().map(|&n| rms_error(&generate_mesh(n, 0.1, n as u64), &probe, quad)).collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[0] / w[1]).collect();
    let ok = worst <= 1e-9 && ratios.iter().all(|&r| r > 2.5);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    check(ok, format!("constant/linear max relative error {worst:.1e}; quadratic error ratios per halving [{}]", shown.join(", ")))
}

/// A phase slice of an lr trace must rise to `peak` during warmup and then
/// follow a cosine from `peak` that reaches `floor` `end` steps after the
/// slice starts.
fn cosine_segment(lrs: &[f64], end: usize, peak: f64, floor: f64) -> Result<(), String> {
    let top = lrs.iter().cloned().fold(f64::MIN, f64::max);
    // the last warmup step and the first cosine step both sit at the peak
    let first = lrs.iter().position(|&x| x == top).unwrap();
    let w = lrs.iter().rposition(|&x| x == top).unwrap();
    if (top - peak).abs() > 1e-15 {
        return Err(format!("peak {top:e} instead of {peak:e}"));
    }
    if w > first + 1 || lrs[..=first].windows(2).any(|p| p[1] <= p[0]) {
        return Err("warmup not increasing".into());
    }
    let rest = &lrs[w..];
    let span = (end - w) as f64;
    for (s, &lr) in rest.iter().enumerate() {
        let want = floor + 0.5 * (peak - floor) * (1.0 + (std::f64::consts::PI * s as f64 / span).cos());
        if (lr - want).abs() > 1e-12 * peak {
            return Err(format!("step {s} after the peak: {lr:e} vs cosine {want:e}"));
        }
    }
    Ok(())
}

fn scheduler() -> Outcome {
    let data = tiny_family();
    let total = 200;
    let run = |plan: &str| train_run(&tiny_config(plan, total), &data, RunOptions::default()).unwrap().report.lrs();
    let reset = run("C2:0.5:reset,D:0.5");
    let cfg = tiny_config("", total);
    let (a, b) = reset.split_at(100);
    // the first schedule spans the whole run, the reset one only the remainder
    cosine_segment(a, 200, cfg.lr, cfg.min_lr).map_err(|e| format!("first phase: {e}"))?;
    cosine_segment(b, 100, cfg.lr, cfg.min_lr).map_err(|e| format!("second phase: {e}"))?;
    let continued = run("C2:0.5:continue,D:0.5");
    let plain = run("D:1.0");
    let same = continued.iter().zip(&plain).all(|(x, y)| x.to_bits() == y.to_bits()) && continued.len() == plain.len();
    check(same, format!("reset: two peaks at {:e} with cosine decay; continue equals D:1.0 pointwise: {same}", cfg.lr))
}

/// Noise-free one-step loss on a fixed subset of training samples.
fn held_train_loss(out: &TrainOutcome, level: &LevelData) -> f64 {
    let (mut sum, mut count) = (0.0, 0);
    for (_, traj) in level.train.iter().step_by(6) {
        let adj = build_adjacency(&traj.mesh, true);
        for t in (1..traj.num_steps() - 1).step_by(7) {
            let (x, y) = make_sample::<f32>(traj, t, &out.normalizer, None).unwrap();
            let pred = forward(&out.params, &x, &adj).unwrap();
            sum += step_loss(&pred, &y).0;
            count += 1;
        }
    }
    sum / count as f64
}

const REPLICATION_STEPS: u64 = 1000;
const SEEDS: [u64; 3] = [0, 1, 2];

struct SeedResult {
    flops: [f64; 2],
    rmse: [f64; 2],
    loss_reset: f64,
    loss_continue: f64,
}

fn replication_runs() -> Vec<SeedResult> {
    let data = family(&FamilySpec::default());
    let fine = &data.levels["D"];
    SEEDS
        .iter()
        .map(|&seed| {
            let cfg = |plan: &str| TrainConfig {
                model: ModelConfig { layers: 2, width: 16, heads: 2, mlp_mult: 2, in_features: 10, out_features: 2, ..Default::default() },
                plan: plan.into(),
                total_steps: REPLICATION_STEPS,
                seed,
                ..Default::default()
            };
            let run = |plan: &str| train_run(&cfg(plan), &data, RunOptions::default()).unwrap();
            let score = |o: &TrainOutcome| {
                let m = ModelSurrogate { params: &o.params, normalizer: &o.normalizer };
                all_rollout_rmse(&rollout_all(&m, &fine.test).unwrap()).unwrap()
            };
            let base = run("D:1.0");
            let reset = run("C2:0.5:reset,D:0.5");
            let cont = run("C2:0.5:continue,D:0.5");
            SeedResult {
                flops: [base.report.final_flops(), reset.report.final_flops()],
                rmse: [score(&base), score(&reset)],
                loss_reset: held_train_loss(&reset, fine),
                loss_continue: held_train_loss(&cont, fine),
            }
        })
        .collect()
}

fn replication(results: &[SeedResult]) -> Outcome {
    let mean = |f: &dyn Fn(&SeedResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    let flop_ratio = mean(&|r| r.flops[1]) / mean(&|r| r.flops[0]);
    let rmse_ratio = mean(&|r| r.rmse[1]) / mean(&|r| r.rmse[0]);
    let per_seed: Vec<String> = results.iter().map(|r| format!("{:.4}/{:.4}", r.rmse[0], r.rmse[1])).collect();
    check(
        flop_ratio <= 0.7 && rmse_ratio <= 1.10,
        format!(
            "FLOPs ratio {flop_ratio:.3}, RMSE ratio {rmse_ratio:.3} (baseline/curriculum per seed: {})",
            per_seed.join(", ")
        ),
    )
}

fn reset_ablation(results: &[SeedResult]) -> Outcome {
    let wins = results.iter().filter(|r| r.loss_reset <= r.loss_continue).count();
    let per_seed: Vec<String> = results.iter().map(|r| format!("{:.3e}/{:.3e}", r.loss_reset, r.loss_continue)).collect();
    check(wins >= 2, format!("reset <= continue on {wins} of 3 seeds (reset/continue: {})", per_seed.join(", ")))
}

fn determinism() -> Outcome {
    let data = tiny_family();
    let mut cfg = tiny_config("C2:0.3:reset,C1:0.3,D:0.4", 60);
    cfg.grad_accum = 2;
    let a = train_run(&cfg, &data, RunOptions::default()).unwrap();
    let b = train_run(&cfg, &data, RunOptions::default()).unwrap();
    let identical = a.report == b.report && a.checkpoint.weights == b.checkpoint.weights;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.gcck");
    let first = train_run(&cfg, &data, RunOptions { stop_at: Some(25), ..Default::default() }).unwrap();
    write_checkpoint(&path, &first.checkpoint).unwrap();
    let rest = train_run(&cfg, &data, RunOptions { resume: Some(read_checkpoint(&path).unwrap()), ..Default::default() }).unwrap();
    let mut joined = first.report.losses();
    joined.extend(rest.report.losses());
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let resumed = bits(&joined) == bits(&a.report.losses()) && rest.checkpoint.weights == a.checkpoint.weights;
    check(identical && resumed, format!("identical reruns: {identical}; resume at step 25 reproduces losses and weights: {resumed}"))
}

fn flop_accounting() -> Outcome {
    let steps = 10_000;
    let mut lines = Vec::new();
    for f in [0.25, 0.5, 0.75] {
        let at_switch = |plan: String| {
            let t = cmd_flops(&FlopsArgs { config: None, plan: Some(plan), stats: "aneurysm".into(), steps: Some(steps) }).unwrap();
            (t.rows[0].3, t.rows.last().unwrap().3, t.baseline)
        };
        let runs: Vec<(f64, f64, f64)> = (1..=3).rev().map(|k| at_switch(format!("C{k}:{f},D:{}", 1.0 - f))).collect();
        let fine_at_switch = runs[0].2 * f;
        let mut seq: Vec<f64> = runs.iter().map(|r| r.0).collect();
        seq.push(fine_at_switch);
        let mut ends: Vec<f64> = runs.iter().map(|r| r.1).collect();
        ends.push(runs[0].2);
        let ordered = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !ordered(&seq) || !ordered(&ends) {
            return Err(format!("switch at {f}: cumulative {seq:?}, totals {ends:?}"));
        }
        lines.push(format!("{f}: C3/D {:.3}", seq[0] / seq[3]));
    }
    Ok(format!("C3 < C2 < C1 < D at every switch point and at the end ({})", lines.join(", ")))
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let run_it = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut failures = 0;
    let mut report = |n: usize, name: &str, f: &dyn Fn() -> Outcome| {
        if !run_it(n) {
            return;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {n} {name} ... PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failures += 1;
                println!("criterion {n} {name} ... FAIL ({secs:.1}s) {d}")
            }
        }
    };
    report(1, "gradient correctness", &gradients);
    report(2, "attention semantics", &attention_semantics);
    report(3, "parameter count", &parameter_count);
    report(4, "interpolation exactness", &interpolation);
    report(5, "scheduler shape", &scheduler);
    if run_it(6) || run_it(7) {
        let start = Instant::now();
        let results = catch_unwind(replication_runs);
        println!("replication runs: {:.0}s", start.elapsed().as_secs_f64());
        let shared = |f: fn(&[SeedResult]) -> Outcome| match &results {
            Ok(r) => f(r),
            Err(_) => Err("training panicked".into()),
        };
        report(6, "curriculum replication", &|| shared(replication));
        report(7, "lr reset ablation", &|| shared(reset_ablation));
    }
    report(8, "determinism", &determinism);
    report(9, "flop accounting", &flop_accounting);
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
