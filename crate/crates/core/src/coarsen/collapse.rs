use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use super::{CoarsenError, CoarsenMode, CoarsenTarget};
use crate::meshkit::{signed_measure, Mesh, NodeType, DEGENERACY_TOL};

/// Smallest admissible triangle angle after a collapse (degrees).
pub const MIN_ANGLE_DEG: f64 = 15.0;
/// Smallest admissible tetrahedron mean-ratio quality after a collapse.
pub const MIN_TET_QUALITY: f64 = 0.2;

/// Flatness tolerance on |n_i . n_j| for removable boundary nodes.
const FLAT_TOL: f64 = 1e-9;

type FacetKey = [u32; 3];

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Minimum interior angle in degrees (triangles) or mean-ratio quality
/// `6 sqrt(2) V / l_rms^3` (tetrahedra, 1 for the regular tet).
pub fn element_quality(dim: usize, pts: &[&[f64]]) -> f64 {
    if dim == 2 {
        let mut min_angle = f64::INFINITY;
        for i in 0..3 {
            let p = pts[i];
            let a = pts[(i + 1) % 3];
            let b = pts[(i + 2) % 3];
            let u = [a[0] - p[0], a[1] - p[1]];
            let v = [b[0] - p[0], b[1] - p[1]];
            let cross = u[0] * v[1] - u[1] * v[0];
            let dot = u[0] * v[0] + u[1] * v[1];
            min_angle = min_angle.min(cross.abs().atan2(dot).to_degrees());
        }
        min_angle
    } else {
        let vol = super::super::meshkit::signed_measure(3, &pts.iter().flat_map(|p| p.iter().copied()).collect::<Vec<_>>(), &[0, 1, 2, 3]);
        let mut sq = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                sq += (0..3).map(|d| (pts[i][d] - pts[j][d]).powi(2)).sum::<f64>();
            }
        }
        let l_rms = (sq / 6.0).sqrt();
        6.0 * 2f64.sqrt() * vol / (l_rms * l_rms * l_rms)
    }
}

fn quality_floor(dim: usize) -> f64 {
    if dim == 2 {
        MIN_ANGLE_DEG
    } else {
        MIN_TET_QUALITY
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    len: f64,
    tie: u64,
    a: u32,
    b: u32,
    stamp_a: u32,
    stamp_b: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    // reversed so BinaryHeap pops the shortest edge first
    fn cmp(&self, o: &Self) -> Ordering {
        o.len
            .total_cmp(&self.len)
            .then(o.tie.cmp(&self.tie))
            .then(o.a.cmp(&self.a))
            .then(o.b.cmp(&self.b))
    }
}

struct Plan {
    removed: usize,
    survivor: usize,
    position: Vec<f64>,
    node_type: NodeType,
}

struct Work {
    dim: usize,
    k: usize,
    seed: u64,
    preserve_types: bool,
    pos: Vec<f64>,
    types: Vec<NodeType>,
    alive: Vec<bool>,
    alive_count: usize,
    type_counts: [usize; 4],
    elems: Vec<[u32; 4]>,
    elem_alive: Vec<bool>,
    node_elems: Vec<Vec<u32>>,
    nbrs: Vec<BTreeSet<u32>>,
    facet_count: HashMap<FacetKey, u32>,
    stamp: Vec<u32>,
    edge_len_sum: f64,
    edge_count: usize,
}

impl Work {
    fn new(mesh: &Mesh, seed: u64, preserve_types: bool) -> Self {
        let dim = mesh.dim();
        let k = dim + 1;
        let n = mesh.num_nodes();
        let mut elems = Vec::with_capacity(mesh.num_elements());
        let mut node_elems = vec![Vec::new(); n];
        let mut nbrs = vec![BTreeSet::new(); n];
        for e in 0..mesh.num_elements() {
            let mut el = [u32::MAX; 4];
            el[..k].copy_from_slice(mesh.element(e));
            for &a in &el[..k] {
                node_elems[a as usize].push(e as u32);
                for &b in &el[..k] {
                    if a != b {
                        nbrs[a as usize].insert(b);
                    }
                }
            }
            elems.push(el);
        }
        let mut type_counts = [0usize; 4];
        for &t in mesh.node_types() {
            type_counts[t as usize] += 1;
        }
        let mut w = Self {
            dim,
            k,
            seed,
            preserve_types,
            pos: mesh.positions().to_vec(),
            types: mesh.node_types().to_vec(),
            alive: vec![true; n],
            alive_count: n,
            type_counts,
            elem_alive: vec![true; elems.len()],
            elems,
            node_elems,
            nbrs,
            facet_count: HashMap::new(),
            stamp: vec![0; n],
            edge_len_sum: 0.0,
            edge_count: 0,
        };
        for e in 0..w.elems.len() {
            for key in w.facets(e) {
                *w.facet_count.entry(key).or_insert(0) += 1;
            }
        }
        for a in 0..n {
            for &b in &w.nbrs[a] {
                if (b as usize) > a {
                    w.edge_len_sum += w.dist(a, b as usize);
                    w.edge_count += 1;
                }
            }
        }
        w
    }

    fn p(&self, i: usize) -> &[f64] {
        &self.pos[i * self.dim..(i + 1) * self.dim]
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        self.p(a).iter().zip(self.p(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    fn mean_edge(&self) -> f64 {
        if self.edge_count == 0 {
            0.0
        } else {
            self.edge_len_sum / self.edge_count as f64
        }
    }

    fn el(&self, e: usize) -> &[u32] {
        &self.elems[e][..self.k]
    }

    fn facets(&self, e: usize) -> Vec<FacetKey> {
        let el = self.el(e);
        (0..self.k)
            .map(|skip| {
                let mut key = [u32::MAX; 3];
                let mut w = 0;
                for (i, &v) in el.iter().enumerate() {
                    if i != skip {
                        key[w] = v;
                        w += 1;
                    }
                }
                key[..w].sort_unstable();
                key
            })
            .collect()
    }

    fn boundary_facets_of(&self, v: u32) -> Vec<FacetKey> {
        let mut out: Vec<FacetKey> = Vec::new();
        for &e in &self.node_elems[v as usize] {
            for key in self.facets(e as usize) {
                if key.contains(&v) && self.facet_count.get(&key) == Some(&1) && !out.contains(&key) {
                    out.push(key);
                }
            }
        }
        out
    }

    fn facet_normal(&self, key: &FacetKey) -> Vec<f64> {
        let a = self.p(key[0] as usize);
        let b = self.p(key[1] as usize);
        let n = if self.dim == 2 {
            vec![-(b[1] - a[1]), b[0] - a[0]]
        } else {
            let c = self.p(key[2] as usize);
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let w = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            vec![u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]]
        };
        let len = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        n.into_iter().map(|x| x / len).collect()
    }

    /// A boundary node whose boundary facets are all coplanar (collinear in
    /// 2D) can be removed without changing the domain shape.
    fn is_flat(&self, facets: &[FacetKey]) -> bool {
        let normals: Vec<Vec<f64>> = facets.iter().map(|f| self.facet_normal(f)).collect();
        normals.iter().enumerate().all(|(i, a)| {
            normals[i + 1..]
                .iter()
                .all(|b| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>().abs() >= 1.0 - FLAT_TOL)
        })
    }

    fn is_boundary_edge(&self, a: u32, b: u32) -> bool {
        self.boundary_facets_of(a).iter().any(|f| f.contains(&b))
    }

    fn plan(&self, a: usize, b: usize) -> Option<Plan> {
        let (ta, tb) = (self.types[a], self.types[b]);
        let fa = self.boundary_facets_of(a as u32);
        let fb = self.boundary_facets_of(b as u32);
        let (ga, gb) = (!fa.is_empty(), !fb.is_empty());
        let (removed, survivor, midpoint) = match (ga, gb) {
            (false, false) => {
                if ta == tb {
                    (b, a, true)
                } else if ta.severity() > tb.severity() {
                    (b, a, false)
                } else {
                    (a, b, false)
                }
            }
            (true, false) => (b, a, false),
            (false, true) => (a, b, false),
            (true, true) => {
                if !self.is_boundary_edge(a as u32, b as u32) {
                    return None;
                }
                let (flat_a, flat_b) = (self.is_flat(&fa), self.is_flat(&fb));
                match (flat_a, flat_b) {
                    (false, false) => return None,
                    (true, false) => (a, b, false),
                    (false, true) => (b, a, false),
                    (true, true) => {
                        if ta.severity() < tb.severity() || (ta == tb && a > b) {
                            (a, b, false)
                        } else {
                            (b, a, false)
                        }
                    }
                }
            }
        };
        let (tr, ts) = (self.types[removed], self.types[survivor]);
        let node_type = if self.preserve_types {
            if tr != NodeType::Fluid && tr != ts {
                return None;
            }
            ts
        } else {
            NodeType::most_severe(tr, ts)
        };
        if tr != NodeType::Fluid && tr != node_type && self.type_counts[tr as usize] == 1 {
            return None;
        }
        let position = if midpoint {
            self.p(a).iter().zip(self.p(b)).map(|(x, y)| 0.5 * (x + y)).collect()
        } else {
            self.p(survivor).to_vec()
        };
        Some(Plan { removed, survivor, position, node_type })
    }

    fn admissible(&self, plan: &Plan) -> bool {
        let (r, s) = (plan.removed as u32, plan.survivor as u32);
        // link condition: common neighbors are exactly the opposite vertices
        let mut opposite = BTreeSet::new();
        for &e in &self.node_elems[r as usize] {
            let el = self.el(e as usize);
            if el.contains(&s) {
                opposite.extend(el.iter().copied().filter(|&v| v != r && v != s));
            }
        }
        let common: BTreeSet<u32> = self.nbrs[r as usize].intersection(&self.nbrs[s as usize]).copied().collect();
        if common != opposite || opposite.is_empty() {
            return false;
        }
        let mut old_min = f64::INFINITY;
        let mut patch: Vec<u32> = self.node_elems[r as usize].clone();
        patch.extend(self.node_elems[s as usize].iter().copied().filter(|e| !self.el(*e as usize).contains(&r)));
        let mut new_elements = Vec::new();
        for &e in &patch {
            let el = self.el(e as usize);
            let pts: Vec<&[f64]> = el.iter().map(|&v| self.p(v as usize)).collect();
            old_min = old_min.min(element_quality(self.dim, &pts));
            if el.contains(&r) && el.contains(&s) {
                continue;
            }
            new_elements.push(e);
        }
        let floor = quality_floor(self.dim).min(old_min);
        let mut scratch = Vec::with_capacity(self.k * self.dim);
        for &e in &new_elements {
            scratch.clear();
            for &v in self.el(e as usize) {
                if v == r || v == s {
                    scratch.extend_from_slice(&plan.position);
                } else {
                    scratch.extend_from_slice(self.p(v as usize));
                }
            }
            let idx: Vec<u32> = (0..self.k as u32).collect();
            let m = signed_measure(self.dim, &scratch, &idx);
            if !(m > DEGENERACY_TOL) {
                return false;
            }
            let pts: Vec<&[f64]> = scratch.chunks(self.dim).collect();
            if element_quality(self.dim, &pts) < floor {
                return false;
            }
        }
        true
    }

    fn apply(&mut self, plan: Plan) {
        let (r, s) = (plan.removed, plan.survivor);
        let (r32, s32) = (r as u32, s as u32);
        // edge-length bookkeeping: remove old incident edges of r and s
        let mut before = 0.0;
        let mut before_count = 0;
        for &nb in &self.nbrs[r] {
            before += self.dist(r, nb as usize);
            before_count += 1;
        }
        for &nb in &self.nbrs[s] {
            if nb != r32 {
                before += self.dist(s, nb as usize);
                before_count += 1;
            }
        }

        for e in self.node_elems[r].clone() {
            let e = e as usize;
            for key in self.facets(e) {
                let c = self.facet_count.get_mut(&key).expect("facet registered");
                *c -= 1;
                if *c == 0 {
                    self.facet_count.remove(&key);
                }
            }
            if self.el(e).contains(&s32) {
                self.elem_alive[e] = false;
                for v in self.el(e).to_vec() {
                    self.node_elems[v as usize].retain(|&x| x as usize != e);
                }
            } else {
                for v in self.elems[e][..self.k].iter_mut() {
                    if *v == r32 {
                        *v = s32;
                    }
                }
                self.node_elems[s].push(e as u32);
                for key in self.facets(e) {
                    *self.facet_count.entry(key).or_insert(0) += 1;
                }
            }
        }
        self.node_elems[r].clear();

        let moved: Vec<u32> = std::mem::take(&mut self.nbrs[r]).into_iter().collect();
        for nb in moved {
            let nb = nb as usize;
            self.nbrs[nb].remove(&r32);
            if nb != s {
                self.nbrs[nb].insert(s32);
                self.nbrs[s].insert(nb as u32);
            }
        }
        self.nbrs[s].remove(&r32);

        self.pos[s * self.dim..(s + 1) * self.dim].copy_from_slice(&plan.position);
        self.type_counts[self.types[s] as usize] -= 1;
        self.type_counts[self.types[r] as usize] -= 1;
        self.types[s] = plan.node_type;
        self.type_counts[plan.node_type as usize] += 1;
        self.alive[r] = false;
        self.alive_count -= 1;
        self.stamp[s] += 1;
        self.stamp[r] += 1;

        let mut after = 0.0;
        for &nb in &self.nbrs[s] {
            after += self.dist(s, nb as usize);
        }
        self.edge_len_sum += after - before;
        self.edge_count = self.edge_count + self.nbrs[s].len() - before_count;
    }

    fn candidate(&self, a: usize, b: usize) -> Candidate {
        let (lo, hi) = (a.min(b) as u64, a.max(b) as u64);
        Candidate {
            len: self.dist(a, b),
            tie: splitmix(self.seed ^ (lo << 32 | hi)),
            a: a as u32,
            b: b as u32,
            stamp_a: self.stamp[a],
            stamp_b: self.stamp[b],
        }
    }

    fn is_current(&self, c: &Candidate) -> bool {
        let (a, b) = (c.a as usize, c.b as usize);
        self.alive[a] && self.alive[b] && self.stamp[a] == c.stamp_a && self.stamp[b] == c.stamp_b
    }

    fn finish(self) -> Result<Mesh, CoarsenError> {
        let mut remap = vec![u32::MAX; self.alive.len()];
        let mut positions = Vec::with_capacity(self.alive_count * self.dim);
        let mut types = Vec::with_capacity(self.alive_count);
        for (i, &a) in self.alive.iter().enumerate() {
            if a {
                remap[i] = types.len() as u32;
                positions.extend_from_slice(self.p(i));
                types.push(self.types[i]);
            }
        }
        let mut elements = Vec::new();
        for (e, el) in self.elems.iter().enumerate() {
            if self.elem_alive[e] {
                elements.extend(el[..self.k].iter().map(|&v| remap[v as usize]));
            }
        }
        Ok(Mesh::new(self.dim, positions, elements, types)?)
    }
}

/// Greedy shortest-edge-first decimation with link-condition, inversion and
/// quality gates. Boundary geometry is kept: boundary nodes keep their
/// position in mixed collapses, and only boundary nodes on straight
/// (planar) boundary stretches may be removed.
pub fn coarsen_mesh(mesh: &Mesh, target: &CoarsenTarget, seed: u64) -> Result<Mesh, CoarsenError> {
    target.validate()?;
    let n = mesh.num_nodes();
    let min_nodes = if mesh.dim() == 2 { 4 } else { 8 };
    let goal_nodes = match target.mode {
        CoarsenMode::TargetNodeFraction => {
            let goal = target.value * n as f64;
            if goal < min_nodes as f64 {
                return Err(CoarsenError::InvalidTarget(format!(
                    "fraction {} of {n} nodes is below the {min_nodes}-node minimum",
                    target.value
                )));
            }
            // already inside the +-10% band of the target
            if n as f64 <= 1.1 * goal {
                return Ok(mesh.clone());
            }
            goal.round() as usize
        }
        CoarsenMode::TargetEdgeLength => {
            if mesh.mean_edge_length() >= target.value {
                return Ok(mesh.clone());
            }
            min_nodes
        }
    };
    let mut w = Work::new(mesh, seed, target.preserve_boundary_types);
    let done = |w: &Work| match target.mode {
        CoarsenMode::TargetNodeFraction => w.alive_count <= goal_nodes,
        CoarsenMode::TargetEdgeLength => w.mean_edge() >= target.value,
    };
    let unreachable = |w: &Work| CoarsenError::UnreachableTarget {
        reached: w.alive_count,
        mean_edge: w.mean_edge(),
        target: format!("{:?} {}", target.mode, target.value),
    };
    while !done(&w) {
        let mut heap = BinaryHeap::new();
        for a in 0..n {
            if !w.alive[a] {
                continue;
            }
            for &b in &w.nbrs[a] {
                if (b as usize) > a {
                    heap.push(w.candidate(a, b as usize));
                }
            }
        }
        let mut progressed = false;
        while let Some(c) = heap.pop() {
            if done(&w) || w.alive_count <= min_nodes {
                break;
            }
            if !w.is_current(&c) {
                continue;
            }
            let Some(plan) = w.plan(c.a as usize, c.b as usize) else { continue };
            if !w.admissible(&plan) {
                continue;
            }
            let s = plan.survivor;
            w.apply(plan);
            progressed = true;
            let fresh: Vec<Candidate> = w.nbrs[s].iter().map(|&nb| w.candidate(s, nb as usize)).collect();
            heap.extend(fresh);
        }
        if done(&w) {
            break;
        }
        if !progressed || w.alive_count <= min_nodes {
            return Err(unreachable(&w));
        }
    }
    w.finish()
}
