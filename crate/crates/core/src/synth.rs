//! Analytic decaying-vortex datasets on jittered grid meshes.
//!
//! The stream function on `[0, pi]^2` is
//! `psi = a sin^2(x) sin^2(y) exp(-t/tau) + b sin^2(2x) sin^2(2y) cos(omega t)`
//! and the velocity is `(d psi/dy, -d psi/dx)`: divergence-free, and zero on
//! the box boundary.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::meshkit::{Mesh, NodeType};
use crate::store::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    /// Primary vortex amplitude (m^2/s).
    pub amplitude: f64,
    /// Decay time (s).
    pub tau: f64,
    /// Optional oscillating four-cell mode: (amplitude, angular frequency).
    pub secondary: Option<(f64, f64)>,
    pub dt: f64,
    pub steps: usize,
}

impl FlowSpec {
    /// Velocity at `(x, y)` and time `t`.
    pub fn velocity(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let decay = self.amplitude * (-t / self.tau).exp();
        let (sx, sy) = (x.sin(), y.sin());
        let mut u = decay * sx * sx * (2.0 * y).sin();
        let mut v = -decay * (2.0 * x).sin() * sy * sy;
        if let Some((b, omega)) = self.secondary {
            let osc = b * (omega * t).cos();
            let (s2x, s2y) = ((2.0 * x).sin(), (2.0 * y).sin());
            u += 2.0 * osc * s2x * s2x * (4.0 * y).sin();
            v -= 2.0 * osc * (4.0 * x).sin() * s2y * s2y;
        }
        [u, v]
    }

    /// Randomized spec for trajectory number `index` of a family.
    pub fn sample(seed: u64, index: u64, dt: f64, steps: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index + 1);
        let amplitude = rng.random_range(0.5..1.5);
        let tau = rng.random_range(0.2..1.0);
        let b = rng.random_range(0.05..0.3);
        let omega = rng.random_range(2.0 * PI * 0.5..2.0 * PI * 2.0);
        Self { amplitude, tau, secondary: Some((b, omega)), dt, steps }
    }
}

/// `(n+1)^2` nodes on `[0, pi]^2`, interior nodes displaced by up to
/// `jitter * h / 2` per coordinate, `2 n^2` triangles. Boundary nodes are
/// `Wall`, interior nodes `Fluid`.
pub fn generate_mesh(n: usize, jitter: f64, seed: u64) -> Mesh {
    assert!(n >= 4, "grid resolution must be at least 4");
    assert!((0.0..=0.3).contains(&jitter), "jitter must lie in [0, 0.3]");
    let h = PI / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = Vec::with_capacity((n + 1) * (n + 1) * 2);
    let mut types = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            let boundary = i == 0 || j == 0 || i == n || j == n;
            let (mut x, mut y) = (i as f64 * h, j as f64 * h);
            if i == n {
                x = PI;
            }
            if j == n {
                y = PI;
            }
            if !boundary && jitter > 0.0 {
                let a = 0.5 * jitter * h;
                x += rng.random_range(-a..=a);
                y += rng.random_range(-a..=a);
            }
            positions.push(x);
            positions.push(y);
            types.push(if boundary { NodeType::Wall } else { NodeType::Fluid });
        }
    }
    let id = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    let mut elements = Vec::with_capacity(6 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            // alternate the diagonal so the grid has no preferred direction
            if (i + j) % 2 == 0 {
                elements.extend_from_slice(&[a, b, c, a, c, d]);
            } else {
                elements.extend_from_slice(&[a, b, d, b, c, d]);
            }
        }
    }
    Mesh::new(2, positions, elements, types).expect("jittered grid is valid")
}

/// Samples the analytic velocity at every node and step; Wall nodes are
/// exactly zero.
pub fn generate_trajectory(mesh: &Mesh, flow: &FlowSpec) -> Trajectory {
    assert_eq!(mesh.dim(), 2, "synthetic flows are two-dimensional");
    let frames = (0..flow.steps)
        .map(|k| {
            let t = k as f64 * flow.dt;
            let mut f = Vec::with_capacity(mesh.num_nodes() * 2);
            for i in 0..mesh.num_nodes() {
                if mesh.node_type(i) == NodeType::Wall {
                    f.extend_from_slice(&[0.0, 0.0]);
                } else {
                    let p = mesh.position(i);
                    let v = flow.velocity(p[0], p[1], t);
                    f.push(v[0] as f32);
                    f.push(v[1] as f32);
                }
            }
            f
        })
        .collect();
    Trajectory::new(mesh.clone(), flow.dt, frames).expect("generated trajectory is consistent")
}

/// Parameters of a generated multi-level family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    /// Grid resolution per level, finest first.
    pub resolutions: Vec<usize>,
    pub trajectories: usize,
    pub steps: usize,
    pub dt: f64,
    pub jitter: f64,
    /// Fraction of trajectories (taken from the end) held out for testing.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        Self {
            resolutions: vec![32, 16, 8],
            trajectories: 100,
            steps: 60,
            dt: 0.01,
            jitter: 0.2,
            test_fraction: 0.1,
            seed: 0,
        }
    }
}

impl FamilySpec {
    pub fn num_test(&self) -> usize {
        ((self.trajectories as f64 * self.test_fraction).round() as usize).min(self.trajectories)
    }

    pub fn is_test(&self, index: usize) -> bool {
        index >= self.trajectories - self.num_test()
    }

    /// Mesh of trajectory `index` at resolution level `level`.
    pub fn mesh(&self, level: usize, index: usize) -> Mesh {
        let mesh_seed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((level as u64) << 32 | index as u64);
        generate_mesh(self.resolutions[level], self.jitter, mesh_seed)
    }

    pub fn flow(&self, index: usize) -> FlowSpec {
        FlowSpec::sample(self.seed, index as u64, self.dt, self.steps)
    }

    /// Trajectory `index` sampled on level `level`. The flow is shared
    /// across levels; only the mesh differs.
    pub fn trajectory(&self, level: usize, index: usize) -> Trajectory {
        generate_trajectory(&self.mesh(level, index), &self.flow(index))
    }
}
