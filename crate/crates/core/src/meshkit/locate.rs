use std::collections::HashMap;

use super::mesh::{distance, simplex_measure_2d, simplex_measure_3d};
use super::{Mesh, MeshError};

/// Inside test tolerance on barycentric coordinates; points on faces count
/// as inside.
pub const BARY_TOL: f64 = -1e-9;

/// Element containing a query point and the point's barycentric coordinates
/// with respect to that element's vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub element: usize,
    pub bary: Vec<f64>,
}

/// What to do when a query point lies outside every element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fallback {
    #[default]
    None,
    NearestNode,
}

/// Barycentric coordinates of `p` in element `e` (unclamped).
pub fn barycentric(mesh: &Mesh, e: usize, p: &[f64]) -> Vec<f64> {
    let el = mesh.element(e);
    let pos = |k: usize| mesh.position(el[k] as usize);
    match mesh.dim() {
        2 => {
            let total = simplex_measure_2d(pos(0), pos(1), pos(2));
            vec![
                simplex_measure_2d(p, pos(1), pos(2)) / total,
                simplex_measure_2d(pos(0), p, pos(2)) / total,
                simplex_measure_2d(pos(0), pos(1), p) / total,
            ]
        }
        _ => {
            let total = simplex_measure_3d(pos(0), pos(1), pos(2), pos(3));
            vec![
                simplex_measure_3d(p, pos(1), pos(2), pos(3)) / total,
                simplex_measure_3d(pos(0), p, pos(2), pos(3)) / total,
                simplex_measure_3d(pos(0), pos(1), p, pos(3)) / total,
                simplex_measure_3d(pos(0), pos(1), pos(2), p) / total,
            ]
        }
    }
}

fn finalize(element: usize, mut bary: Vec<f64>) -> Location {
    for b in bary.iter_mut() {
        if *b < 0.0 {
            *b = 0.0;
        }
    }
    let s: f64 = bary.iter().sum();
    bary.iter_mut().for_each(|b| *b /= s);
    Location { element, bary }
}

fn inside(bary: &[f64]) -> bool {
    bary.iter().all(|&b| b >= BARY_TOL)
}

/// Point-location structure over a fixed mesh: a uniform node hash for
/// seeding, facet neighbors for walking, and an exhaustive scan fallback.
#[derive(Debug, Clone)]
pub struct PointLocator<'m> {
    mesh: &'m Mesh,
    facet_neighbors: Vec<Option<u32>>,
    node_element: Vec<u32>,
    grid: NodeGrid,
}

impl<'m> PointLocator<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let k = mesh.element_arity();
        let ne = mesh.num_elements();
        let mut facets: HashMap<[u32; 3], (u32, u8)> = HashMap::with_capacity(ne * k);
        let mut facet_neighbors = vec![None; ne * k];
        for e in 0..ne {
            let el = mesh.element(e);
            for skip in 0..k {
                let mut key = [u32::MAX; 3];
                let mut w = 0;
                for (i, &v) in el.iter().enumerate() {
                    if i != skip {
                        key[w] = v;
                        w += 1;
                    }
                }
                key[..w].sort_unstable();
                if let Some(&(other, other_skip)) = facets.get(&key) {
                    facet_neighbors[e * k + skip] = Some(other);
                    facet_neighbors[other as usize * k + other_skip as usize] = Some(e as u32);
                } else {
                    facets.insert(key, (e as u32, skip as u8));
                }
            }
        }
        let mut node_element = vec![u32::MAX; mesh.num_nodes()];
        for e in 0..ne {
            for &v in mesh.element(e) {
                if node_element[v as usize] == u32::MAX {
                    node_element[v as usize] = e as u32;
                }
            }
        }
        Self { mesh, facet_neighbors, node_element, grid: NodeGrid::new(mesh) }
    }

    pub fn mesh(&self) -> &Mesh {
        self.mesh
    }

    /// Walks from a hash-seeded element toward `p`; falls back to an
    /// exhaustive scan when the walk leaves the domain or cycles.
    pub fn locate(&self, p: &[f64]) -> Result<Location, MeshError> {
        let mesh = self.mesh;
        if p.len() != mesh.dim() {
            return Err(MeshError::Shape(format!("query has {} coordinates, mesh dim {}", p.len(), mesh.dim())));
        }
        if mesh.num_elements() == 0 {
            return Err(MeshError::NotFound);
        }
        let k = mesh.element_arity();
        let seed_node = self.grid.nearest(mesh, p);
        let mut e = match seed_node.map(|s| self.node_element[s]) {
            Some(x) if x != u32::MAX => x as usize,
            _ => 0,
        };
        let max_steps = 8 * (mesh.num_elements() as f64).sqrt() as usize + 64;
        let mut prev = usize::MAX;
        for _ in 0..max_steps {
            let bary = barycentric(mesh, e, p);
            if inside(&bary) {
                return Ok(finalize(e, bary));
            }
            // step through the facet opposite the most negative coordinate,
            // never straight back to where we came from
            let mut order: Vec<usize> = (0..k).filter(|&i| bary[i] < BARY_TOL).collect();
            order.sort_by(|&a, &b| bary[a].total_cmp(&bary[b]));
            let next = order
                .iter()
                .filter_map(|&i| self.facet_neighbors[e * k + i].map(|x| x as usize))
                .find(|&x| x != prev);
            match next {
                Some(x) => {
                    prev = e;
                    e = x;
                }
                None => break,
            }
        }
        self.locate_exhaustive(p)
    }

    /// First element in index order whose inside test passes.
    pub fn locate_exhaustive(&self, p: &[f64]) -> Result<Location, MeshError> {
        for e in 0..self.mesh.num_elements() {
            let bary = barycentric(self.mesh, e, p);
            if inside(&bary) {
                return Ok(finalize(e, bary));
            }
        }
        Err(MeshError::NotFound)
    }

    /// Closest node by Euclidean distance; lowest index on ties.
    pub fn nearest_node(&self, p: &[f64]) -> Option<usize> {
        self.grid.nearest(self.mesh, p)
    }

    /// Barycentric interpolation of a per-node field with `channels`
    /// components per node.
    pub fn interpolate(
        &self,
        field: &[f64],
        channels: usize,
        p: &[f64],
        fallback: Fallback,
    ) -> Result<Vec<f64>, MeshError> {
        let n = self.mesh.num_nodes();
        if field.len() != n * channels {
            return Err(MeshError::Shape(format!("field length {} for {n} nodes x {channels}", field.len())));
        }
        match self.stencil(p, fallback)? {
            Stencil::Element { nodes, weights } => {
                let mut out = vec![0.0; channels];
                for (&v, &w) in nodes.iter().zip(&weights) {
                    for c in 0..channels {
                        out[c] += w * field[v as usize * channels + c];
                    }
                }
                Ok(out)
            }
            Stencil::Node(v) => Ok(field[v * channels..(v + 1) * channels].to_vec()),
        }
    }

    /// Interpolation weights for `p`, reusable across many fields.
    pub fn stencil(&self, p: &[f64], fallback: Fallback) -> Result<Stencil, MeshError> {
        match self.locate(p) {
            Ok(loc) => Ok(Stencil::Element {
                nodes: self.mesh.element(loc.element).to_vec(),
                weights: loc.bary,
            }),
            Err(MeshError::NotFound) if fallback == Fallback::NearestNode => {
                self.nearest_node(p).map(Stencil::Node).ok_or(MeshError::NotFound)
            }
            Err(e) => Err(e),
        }
    }
}

/// Interpolation stencil of a single query point.
#[derive(Debug, Clone, PartialEq)]
pub enum Stencil {
    Element { nodes: Vec<u32>, weights: Vec<f64> },
    Node(usize),
}

impl Stencil {
    pub fn apply(&self, field: &[f64], channels: usize, out: &mut [f64]) {
        match self {
            Stencil::Element { nodes, weights } => {
                out.iter_mut().for_each(|x| *x = 0.0);
                for (&v, &w) in nodes.iter().zip(weights) {
                    for c in 0..channels {
                        out[c] += w * field[v as usize * channels + c];
                    }
                }
            }
            Stencil::Node(v) => out.copy_from_slice(&field[v * channels..(v + 1) * channels]),
        }
    }
}

/// One-off point location (builds a locator internally).
pub fn locate_point(mesh: &Mesh, p: &[f64]) -> Result<Location, MeshError> {
    PointLocator::new(mesh).locate(p)
}

/// One-off field interpolation (builds a locator internally).
pub fn interpolate_field(
    mesh: &Mesh,
    field: &[f64],
    channels: usize,
    p: &[f64],
    fallback: Fallback,
) -> Result<Vec<f64>, MeshError> {
    PointLocator::new(mesh).interpolate(field, channels, p, fallback)
}

#[derive(Debug, Clone)]
struct NodeGrid {
    lo: Vec<f64>,
    cell: f64,
    dims: Vec<usize>,
    cells: Vec<Vec<u32>>,
}

impl NodeGrid {
    fn new(mesh: &Mesh) -> Self {
        let dim = mesh.dim();
        let n = mesh.num_nodes().max(1);
        let (lo, hi) = mesh.bounds();
        let extent: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| (b - a).max(1e-12)).collect();
        let volume: f64 = extent.iter().product();
        let cell = (volume / n as f64).powf(1.0 / dim as f64).max(1e-12);
        let dims: Vec<usize> = extent.iter().map(|e| ((e / cell).ceil() as usize).clamp(1, 1 << 12)).collect();
        let total: usize = dims.iter().product();
        let mut grid = Self { lo, cell, dims, cells: vec![Vec::new(); total] };
        for i in 0..mesh.num_nodes() {
            let c = grid.cell_of(mesh.position(i));
            let idx = grid.flat(&c);
            grid.cells[idx].push(i as u32);
        }
        grid
    }

    fn cell_of(&self, p: &[f64]) -> Vec<usize> {
        p.iter()
            .enumerate()
            .map(|(d, &x)| {
                let c = ((x - self.lo[d]) / self.cell).floor();
                if c.is_nan() || c < 0.0 {
                    0
                } else {
                    (c as usize).min(self.dims[d] - 1)
                }
            })
            .collect()
    }

    fn flat(&self, c: &[usize]) -> usize {
        let mut idx = 0;
        for d in (0..c.len()).rev() {
            idx = idx * self.dims[d] + c[d];
        }
        idx
    }

    fn nearest(&self, mesh: &Mesh, p: &[f64]) -> Option<usize> {
        if mesh.num_nodes() == 0 {
            return None;
        }
        let center = self.cell_of(p);
        let max_ring = *self.dims.iter().max().unwrap();
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..=max_ring {
            self.visit_ring(&center, ring, &mut |idx| {
                for &v in &self.cells[idx] {
                    let d = distance(mesh.position(v as usize), p);
                    let better = match best {
                        None => true,
                        Some((bd, bv)) => d < bd || (d == bd && (v as usize) < bv),
                    };
                    if better {
                        best = Some((d, v as usize));
                    }
                }
            });
            if let Some((bd, _)) = best {
                if bd <= ring as f64 * self.cell {
                    break;
                }
            }
        }
        best.map(|(_, v)| v)
    }

    /// Visits every in-bounds cell at Chebyshev distance exactly `ring`.
    fn visit_ring(&self, center: &[usize], ring: usize, f: &mut dyn FnMut(usize)) {
        let dim = center.len();
        let r = ring as i64;
        let mut offset = vec![-r; dim];
        loop {
            if offset.iter().any(|o| o.abs() == r) {
                let mut cell = Vec::with_capacity(dim);
                let mut ok = true;
                for d in 0..dim {
                    let c = center[d] as i64 + offset[d];
                    if c < 0 || c >= self.dims[d] as i64 {
                        ok = false;
                        break;
                    }
                    cell.push(c as usize);
                }
                if ok {
                    f(self.flat(&cell));
                }
            }
            let mut d = 0;
            loop {
                if d == dim {
                    return;
                }
                offset[d] += 1;
                if offset[d] <= r {
                    break;
                }
                offset[d] = -r;
                d += 1;
            }
        }
    }
}
