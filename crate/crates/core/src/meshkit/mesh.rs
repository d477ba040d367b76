use serde::{Deserialize, Serialize};

use super::MeshError;

/// Smallest admissible |signed measure| of an element, in m^dim.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Boundary-condition label carried by every node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum NodeType {
    Fluid = 0,
    Wall = 1,
    Inlet = 2,
    Outlet = 3,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [NodeType::Fluid, NodeType::Wall, NodeType::Inlet, NodeType::Outlet];

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(NodeType::Fluid),
            1 => Some(NodeType::Wall),
            2 => Some(NodeType::Inlet),
            3 => Some(NodeType::Outlet),
            _ => None,
        }
    }

    /// Merge priority: Wall > Inlet > Outlet > Fluid.
    pub fn severity(self) -> u8 {
        match self {
            NodeType::Fluid => 0,
            NodeType::Outlet => 1,
            NodeType::Inlet => 2,
            NodeType::Wall => 3,
        }
    }

    pub fn most_severe(a: NodeType, b: NodeType) -> NodeType {
        if b.severity() > a.severity() {
            b
        } else {
            a
        }
    }
}

/// Unstructured simplicial mesh: triangles in 2D, tetrahedra in 3D.
///
/// Positions and element indices are stored flat. Construction validates the
/// mesh and flips negatively oriented elements so every element has positive
/// signed measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    positions: Vec<f64>,
    elements: Vec<u32>,
    node_types: Vec<NodeType>,
}

impl Mesh {
    pub fn new(
        dim: usize,
        positions: Vec<f64>,
        mut elements: Vec<u32>,
        node_types: Vec<NodeType>,
    ) -> Result<Self, MeshError> {
        if dim != 2 && dim != 3 {
            return Err(MeshError::BadDimension(dim));
        }
        if positions.len() % dim != 0 {
            return Err(MeshError::Shape(format!(
                "position buffer length {} is not a multiple of dim {dim}",
                positions.len()
            )));
        }
        let n = positions.len() / dim;
        if node_types.len() != n {
            return Err(MeshError::Shape(format!(
                "{} node types for {n} nodes",
                node_types.len()
            )));
        }
        let k = dim + 1;
        if elements.len() % k != 0 {
            return Err(MeshError::Shape(format!(
                "element buffer length {} is not a multiple of {k}",
                elements.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(MeshError::Shape("non-finite node position".into()));
        }
        for (e, el) in elements.chunks_mut(k).enumerate() {
            for &v in el.iter() {
                if v as usize >= n {
                    return Err(MeshError::IndexOutOfRange { element: e, index: v, nodes: n });
                }
            }
            let measure = signed_measure(dim, &positions, el);
            if !(measure.abs() > DEGENERACY_TOL) {
                return Err(MeshError::Degenerate { element: e, measure });
            }
            if measure < 0.0 {
                el.swap(0, 1);
            }
        }
        Ok(Self { dim, positions, elements, node_types })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.node_types.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    /// Vertices per element (3 or 4).
    pub fn element_arity(&self) -> usize {
        self.dim + 1
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn element(&self, e: usize) -> &[u32] {
        let k = self.dim + 1;
        &self.elements[e * k..(e + 1) * k]
    }

    pub fn elements(&self) -> &[u32] {
        &self.elements
    }

    pub fn node_type(&self, i: usize) -> NodeType {
        self.node_types[i]
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        signed_measure(self.dim, &self.positions, self.element(e))
    }

    /// Mean length over undirected mesh edges.
    pub fn mean_edge_length(&self) -> f64 {
        let adj = super::build_adjacency(self, false);
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..self.num_nodes() {
            for &j in adj.neighbors(i) {
                if (j as usize) > i {
                    sum += distance(self.position(i), self.position(j as usize));
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for p in self.positions.chunks(self.dim) {
            for d in 0..self.dim {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        (lo, hi)
    }

    pub fn centroid(&self, e: usize) -> Vec<f64> {
        let el = self.element(e);
        let mut c = vec![0.0; self.dim];
        for &v in el {
            for (d, x) in self.position(v as usize).iter().enumerate() {
                c[d] += x;
            }
        }
        let k = el.len() as f64;
        c.iter_mut().for_each(|x| *x /= k);
        c
    }

    /// Returns a copy with nodes relabeled: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Mesh, MeshError> {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n, "permutation length");
        let mut inverse = vec![0u32; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new as u32;
        }
        let mut positions = Vec::with_capacity(self.positions.len());
        let mut types = Vec::with_capacity(n);
        for &old in perm {
            positions.extend_from_slice(self.position(old));
            types.push(self.node_types[old]);
        }
        let elements = self.elements.iter().map(|&v| inverse[v as usize]).collect();
        Mesh::new(self.dim, positions, elements, types)
    }
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Signed area (2D) or volume (3D) of a simplex given by node indices.
pub fn signed_measure(dim: usize, positions: &[f64], el: &[u32]) -> f64 {
    let p = |i: usize| &positions[el[i] as usize * dim..el[i] as usize * dim + dim];
    if dim == 2 {
        simplex_measure_2d(p(0), p(1), p(2))
    } else {
        simplex_measure_3d(p(0), p(1), p(2), p(3))
    }
}

pub(crate) fn simplex_measure_2d(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

pub(crate) fn simplex_measure_3d(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
    (u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
        + u[2] * (v[0] * w[1] - v[1] * w[0]))
        / 6.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> Mesh {
        Mesh::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2], vec![NodeType::Fluid; 3]).unwrap()
    }

    #[test]
    fn clockwise_triangle_is_flipped() {
        let m = Mesh::new(2, vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0], vec![0, 1, 2], vec![NodeType::Fluid; 3]).unwrap();
        assert!(m.element_measure(0) > 0.0);
        assert_eq!(m.element_measure(0), 0.5);
    }

    #[test]
    fn degenerate_element_is_named() {
        let err = Mesh::new(
            2,
            vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 1.0],
            vec![0, 1, 3, 0, 1, 2],
            vec![NodeType::Fluid; 4],
        )
        .unwrap_err();
        assert!(matches!(err, MeshError::Degenerate { element: 1, .. }));
    }

    #[test]
    fn out_of_range_index_rejected() {
        let err = Mesh::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 3], vec![NodeType::Fluid; 3]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { index: 3, .. }));
    }

    #[test]
    fn node_type_count_must_match() {
        let err = Mesh::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2], vec![NodeType::Fluid; 2]).unwrap_err();
        assert!(matches!(err, MeshError::Shape(_)));
    }

    #[test]
    fn tetra_volume() {
        let m = Mesh::new(
            3,
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0, 2, 1, 3],
            vec![NodeType::Fluid; 4],
        )
        .unwrap();
        assert!((m.element_measure(0) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn severity_order() {
        assert_eq!(NodeType::most_severe(NodeType::Fluid, NodeType::Outlet), NodeType::Outlet);
        assert_eq!(NodeType::most_severe(NodeType::Inlet, NodeType::Outlet), NodeType::Inlet);
        assert_eq!(NodeType::most_severe(NodeType::Inlet, NodeType::Wall), NodeType::Wall);
    }

    #[test]
    fn mean_edge_length_of_unit_triangle() {
        let m = unit_triangle();
        let expected = (2.0 + 2f64.sqrt()) / 3.0;
        assert!((m.mean_edge_length() - expected).abs() < 1e-15);
    }
}
