use std::collections::BTreeSet;

use gridcourse::coarsen::{coarsen_mesh, transfer_field, CoarsenTarget};
use gridcourse::curriculum::parse_plan;
use gridcourse::eval::{all_rollout_rmse, rollout, Surrogate};
use gridcourse::meshkit::{build_adjacency, signed_measure, Adjacency, Mesh, NodeType, PointLocator};
use gridcourse::model::ModelError;
use gridcourse::optim::LrSchedule;
use gridcourse::store::Trajectory;
use gridcourse::synth::{generate_mesh, generate_trajectory, FlowSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 48, ..ProptestConfig::default() }
}

/// Persistence model: next state equals the current one.
struct Persist;

impl Surrogate for Persist {
    fn next_velocity(&self, _: &Mesh, _: &Adjacency, _: &[f32], cur: &[f32]) -> Result<Vec<f32>, ModelError> {
        Ok(cur.to_vec())
    }
}

fn total_area(m: &Mesh) -> f64 {
    (0..m.num_elements()).map(|e| m.element_measure(e)).sum()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn adjacency_is_symmetric_and_matches_shared_elements(n in 4usize..9, jitter in 0.0..0.3f64, seed in any::<u64>()) {
        let m = generate_mesh(n, jitter, seed);
        let adj = build_adjacency(&m, false);
        let mut want = BTreeSet::new();
        for e in 0..m.num_elements() {
            for &a in m.element(e) {
                for &b in m.element(e) {
                    if a != b {
                        want.insert((a as usize, b as usize));
                    }
                }
            }
        }
        let mut got = BTreeSet::new();
        for i in 0..m.num_nodes() {
            for &j in adj.neighbors(i) {
                prop_assert!(adj.contains(j as usize, i));
                got.insert((i, j as usize));
            }
        }
        prop_assert_eq!(got, want);
        let looped = build_adjacency(&m, true);
        prop_assert_eq!(looped.directed_edge_count(), adj.directed_edge_count() + m.num_nodes());
    }

    #[test]
    fn linear_fields_transfer_exactly(
        a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64,
        fine_seed in any::<u64>(), coarse_seed in any::<u64>(), n in 8usize..16,
    ) {
        let fine = generate_mesh(n, 0.25, fine_seed);
        let coarse = generate_mesh(n / 2, 0.25, coarse_seed);
        let f = |p: &[f64]| [a * p[0] + b * p[1] + c, c - a * p[1]];
        let field: Vec<f64> = (0..fine.num_nodes()).flat_map(|i| f(fine.position(i))).collect();
        let out = transfer_field(&fine, &field, 2, &coarse).unwrap();
        for i in 0..coarse.num_nodes() {
            let want = f(coarse.position(i));
            for k in 0..2 {
                let got = out[2 * i + k];
                prop_assert!((got - want[k]).abs() <= 1e-9 * want[k].abs().max(1.0), "{got} vs {}", want[k]);
            }
        }
    }

    #[test]
    fn lr_warms_up_then_decays(total in 2u64..3000, warm_frac in 0.0..0.5f64, base in 1e-5..1e-1f64, ratio in 0.0..1.0f64) {
        let warmup = ((total as f64 * warm_frac) as u64).min(total - 1);
        let min = base * ratio;
        let s = LrSchedule::new(base, min, warmup, total, 0).unwrap();
        let lrs: Vec<f64> = (0..total).map(|t| s.lr_at(t)).collect();
        for t in 1..total as usize {
            if (t as u64) < warmup {
                prop_assert!(lrs[t] > lrs[t - 1]);
            } else if t as u64 > warmup {
                prop_assert!(lrs[t] <= lrs[t - 1] + 1e-18);
            }
        }
        prop_assert!(lrs.iter().all(|&x| x > 0.0 && x <= base * (1.0 + 1e-12)));
        prop_assert!(lrs[warmup as usize..].iter().all(|&x| x >= min * (1.0 - 1e-12)));
        prop_assert!((lrs[warmup as usize] - base).abs() <= 1e-12 * base || warmup == 0);
    }

    #[test]
    fn phases_cover_every_step(weights in prop::collection::vec(1u32..10, 1..5), total in 8u64..5000, modes in any::<u8>()) {
        let sum: u32 = weights.iter().sum();
        let k = weights.len();
        let mut fractions: Vec<f64> = weights.iter().map(|&w| w as f64 / sum as f64).collect();
        let head: f64 = fractions[..k - 1].iter().sum();
        fractions[k - 1] = 1.0 - head;
        let text = fractions
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let label = if i + 1 == k { "D".to_string() } else { format!("C{}", k - 1 - i) };
                let mode = if modes >> i & 1 == 1 { ":reset" } else { "" };
                format!("{label}:{f}{mode}")
            })
            .collect::<Vec<_>>()
            .join(",");
        let plan = match parse_plan(&text, None).and_then(|p| p.with_total_steps(total)) {
            Ok(p) => p,
            // some phase rounds to zero steps at this budget
            Err(_) => return Ok(()),
        };
        let b = plan.boundaries();
        prop_assert_eq!(b[0], 0);
        prop_assert_eq!(*b.last().unwrap(), total);
        let mut counts = vec![0u64; k];
        let mut last = 0;
        for t in 0..total {
            let (p, switch) = plan.phase_at(t);
            prop_assert!(p >= last);
            prop_assert_eq!(switch, p > 0 && t == b[p]);
            counts[p] += 1;
            last = p;
        }
        for p in 0..k {
            prop_assert_eq!(counts[p], plan.phase_steps(p));
            prop_assert!(counts[p] > 0);
        }
        let again = parse_plan(&plan.to_spec_string(), None).unwrap().with_total_steps(total).unwrap();
        prop_assert_eq!(again, plan);
    }

    #[test]
    fn rmse_ignores_node_order_and_scales_linearly(seed in any::<u64>(), scale in 0.1..10.0f64) {
        let mesh = generate_mesh(5, 0.2, seed);
        let flow = FlowSpec::sample(seed, 0, 0.02, 8);
        let traj = generate_trajectory(&mesh, &flow);
        let adj = build_adjacency(&mesh, true);
        let base = rollout(&Persist, 0, &traj, &adj, f64::INFINITY).unwrap();

        let n = mesh.num_nodes();
        let perm: Vec<usize> = (0..n).rev().collect();
        let pmesh = mesh.permuted(&perm).unwrap();
        let pframes = traj.frames.iter().map(|f| perm.iter().flat_map(|&o| [f[2 * o], f[2 * o + 1]]).collect()).collect();
        let ptraj = Trajectory::new(pmesh.clone(), traj.dt, pframes).unwrap();
        let permuted = rollout(&Persist, 0, &ptraj, &build_adjacency(&pmesh, true), f64::INFINITY).unwrap();
        prop_assert!((permuted.rmse() - base.rmse()).abs() <= 1e-12 * base.rmse().max(1e-30));

        let sframes = traj.frames.iter().map(|f| f.iter().map(|&v| (v as f64 * scale) as f32).collect()).collect();
        let straj = Trajectory::new(mesh.clone(), traj.dt, sframes).unwrap();
        let scaled = rollout(&Persist, 0, &straj, &adj, f64::INFINITY).unwrap();
        prop_assert!((scaled.rmse() - scale * base.rmse()).abs() <= 1e-5 * scale * base.rmse());

        let pooled = all_rollout_rmse(&[base.clone(), scaled.clone()]).unwrap();
        let swapped = all_rollout_rmse(&[scaled, base]).unwrap();
        prop_assert!((pooled - swapped).abs() <= 1e-12 * pooled);
    }

    #[test]
    fn trajectory_bytes_round_trip(seed in any::<u64>(), n in 4usize..8, steps in 1usize..6) {
        let mesh = generate_mesh(n, 0.3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..steps).map(|_| (0..mesh.num_nodes() * 2).map(|_| rng.random_range(-5.0..5.0f32)).collect()).collect();
        let t = Trajectory::new(mesh, 0.01, frames).unwrap();
        let bytes = t.to_bytes();
        prop_assert_eq!(bytes.len() as u64, t.encoded_len());
        prop_assert_eq!(Trajectory::from_bytes(&bytes).unwrap(), t);
    }

    #[test]
    fn coarsening_keeps_a_valid_mesh_on_the_same_domain(seed in any::<u64>(), fraction in 0.2..0.8f64, jitter in 0.0..0.3f64) {
        let m = generate_mesh(12, jitter, seed);
        let out = match coarsen_mesh(&m, &CoarsenTarget::fraction(fraction), seed) {
            Ok(c) => c,
            Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
        };
        prop_assert!(out.num_nodes() <= m.num_nodes());
        prop_assert!((total_area(&out) - total_area(&m)).abs() < 1e-9);
        for e in 0..out.num_elements() {
            prop_assert!(signed_measure(2, out.positions(), out.element(e)) > 0.0);
        }
        let (lo, hi) = m.bounds();
        for i in 0..out.num_nodes() {
            let p = out.position(i);
            let on_box = (0..2).any(|k| (p[k] - lo[k]).abs() < 1e-12 || (p[k] - hi[k]).abs() < 1e-12);
            prop_assert_eq!(out.node_type(i) == NodeType::Wall, on_box);
        }
    }
}

#[test]
fn walk_agrees_with_exhaustive_scan_on_fuzzed_points() {
    let mesh = generate_mesh(20, 0.3, 77);
    let loc = PointLocator::new(&mesh);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pi = std::f64::consts::PI;
    for _ in 0..1000 {
        let p = [rng.random_range(0.0..pi), rng.random_range(0.0..pi)];
        let walked = loc.locate(&p).unwrap();
        let scanned = loc.locate_exhaustive(&p).unwrap();
        // both stencils must reproduce the query point
        for l in [&walked, &scanned] {
            let el = mesh.element(l.element);
            let mut q = [0.0; 2];
            for (k, &v) in el.iter().enumerate() {
                q[0] += l.bary[k] * mesh.position(v as usize)[0];
                q[1] += l.bary[k] * mesh.position(v as usize)[1];
            }
            assert!((q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12);
        }
        if walked.element != scanned.element {
            // only allowed on a shared facet: some coordinate vanishes
            assert!(walked.bary.iter().any(|&b| b < 1e-9), "{p:?}");
        }
    }
    assert!(loc.locate(&[4.0, 1.0]).is_err());
}
