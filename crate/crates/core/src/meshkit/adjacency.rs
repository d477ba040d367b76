use super::{Mesh, MeshError};

/// Symmetric node adjacency in compressed sparse row form.
///
/// Neighbor lists are sorted ascending without duplicates. `reverse[e]` is
/// the index of the mirrored directed edge, so per-edge values can be read
/// from either endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    indices: Vec<u32>,
    reverse: Vec<usize>,
    self_loops: bool,
}

impl Adjacency {
    /// Builds from explicit neighbor lists, checking symmetry, order and
    /// the self-loop flag.
    pub fn from_neighbor_lists(lists: Vec<Vec<u32>>, self_loops: bool) -> Result<Self, MeshError> {
        let n = lists.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for (i, list) in lists.iter().enumerate() {
            if list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(MeshError::Adjacency(format!("neighbors of {i} not strictly ascending")));
            }
            if list.iter().any(|&j| j as usize >= n) {
                return Err(MeshError::Adjacency(format!("neighbor of {i} out of range")));
            }
            let has_self = list.binary_search(&(i as u32)).is_ok();
            if has_self != self_loops {
                return Err(MeshError::Adjacency(format!("self-loop flag violated at node {i}")));
            }
            indices.extend_from_slice(list);
            offsets.push(indices.len());
        }
        let mut adj = Self { offsets, indices, reverse: Vec::new(), self_loops };
        adj.reverse = adj.compute_reverse()?;
        Ok(adj)
    }

    /// Only self-loops: every node attends to itself alone.
    pub fn identity(n: usize) -> Self {
        Self::from_neighbor_lists((0..n as u32).map(|i| vec![i]).collect(), true).expect("identity is valid")
    }

    fn compute_reverse(&self) -> Result<Vec<usize>, MeshError> {
        let mut reverse = vec![0usize; self.indices.len()];
        for i in 0..self.num_nodes() {
            for e in self.offsets[i]..self.offsets[i + 1] {
                let j = self.indices[e] as usize;
                let row = &self.indices[self.offsets[j]..self.offsets[j + 1]];
                match row.binary_search(&(i as u32)) {
                    Ok(k) => reverse[e] = self.offsets[j] + k,
                    Err(_) => {
                        return Err(MeshError::Adjacency(format!("edge {i}->{j} has no mirror")));
                    }
                }
            }
        }
        Ok(reverse)
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Range of directed-edge slots owned by node `i`.
    pub fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn reverse_edge(&self, e: usize) -> usize {
        self.reverse[e]
    }

    pub fn has_self_loops(&self) -> bool {
        self.self_loops
    }

    /// Directed edge count E', self-loops counted once each.
    pub fn directed_edge_count(&self) -> usize {
        self.indices.len()
    }

    /// Undirected edges excluding self-loops.
    pub fn undirected_edge_count(&self) -> usize {
        let loops = if self.self_loops { self.num_nodes() } else { 0 };
        (self.indices.len() - loops) / 2
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors(i).binary_search(&(j as u32)).is_ok()
    }

    /// Adjacency of the graph relabeled so new node `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.num_nodes();
        let mut inverse = vec![0u32; n];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new as u32;
        }
        let lists = perm
            .iter()
            .map(|&old| {
                let mut l: Vec<u32> = self.neighbors(old).iter().map(|&j| inverse[j as usize]).collect();
                l.sort_unstable();
                l
            })
            .collect();
        Self::from_neighbor_lists(lists, self.self_loops).expect("permutation preserves validity")
    }
}

/// Edge (i,j) exists iff i and j share an element; self-loops on request.
pub fn build_adjacency(mesh: &Mesh, self_loops: bool) -> Adjacency {
    let n = mesh.num_nodes();
    let mut lists: Vec<Vec<u32>> = vec![Vec::new(); n];
    for e in 0..mesh.num_elements() {
        let el = mesh.element(e);
        for &a in el {
            for &b in el {
                if a != b {
                    lists[a as usize].push(b);
                }
            }
        }
    }
    for (i, l) in lists.iter_mut().enumerate() {
        if self_loops {
            l.push(i as u32);
        }
        l.sort_unstable();
        l.dedup();
    }
    Adjacency::from_neighbor_lists(lists, self_loops).expect("element co-occurrence is symmetric")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshkit::NodeType;

    fn two_triangles() -> Mesh {
        // 0--1
        // | /|
        // |/ |
        // 2--3   shared edge 1-2
        Mesh::new(
            2,
            vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0],
            vec![0, 2, 1, 1, 2, 3],
            vec![NodeType::Fluid; 4],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_is_complete_with_loops() {
        let m = Mesh::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0], vec![0, 1, 2], vec![NodeType::Fluid; 3]).unwrap();
        let a = build_adjacency(&m, true);
        assert_eq!(a.neighbors(0), &[0, 1, 2]);
        assert_eq!(a.directed_edge_count(), 9);
        assert_eq!(a.undirected_edge_count(), 3);
    }

    #[test]
    fn two_triangles_edge_counts() {
        let a = build_adjacency(&two_triangles(), true);
        // shared-edge nodes 1,2: three neighbors + self; apexes 0,3: two + self
        assert_eq!(a.neighbors(1), &[0, 1, 2, 3]);
        assert_eq!(a.neighbors(2), &[0, 1, 2, 3]);
        assert_eq!(a.neighbors(0), &[0, 1, 2]);
        assert_eq!(a.neighbors(3), &[1, 2, 3]);
        assert_eq!(a.directed_edge_count(), 14);
        let b = build_adjacency(&two_triangles(), false);
        assert_eq!(b.directed_edge_count(), 10);
        assert!(!b.contains(0, 0));
    }

    #[test]
    fn reverse_edges_mirror() {
        let a = build_adjacency(&two_triangles(), true);
        for i in 0..a.num_nodes() {
            for e in a.edge_range(i) {
                let j = a.indices()[e] as usize;
                let r = a.reverse_edge(e);
                assert_eq!(a.indices()[r] as usize, i);
                assert!(a.edge_range(j).contains(&r));
            }
        }
    }

    #[test]
    fn asymmetric_lists_rejected() {
        let err = Adjacency::from_neighbor_lists(vec![vec![0, 1], vec![1]], true).unwrap_err();
        assert!(matches!(err, MeshError::Adjacency(_)));
    }

    #[test]
    fn permutation_relabels() {
        let a = build_adjacency(&two_triangles(), true);
        let perm = [3, 2, 1, 0];
        let p = a.permuted(&perm);
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (new_j, &old_j) in perm.iter().enumerate() {
                assert_eq!(p.contains(new_i, new_j), a.contains(old_i, old_j));
            }
        }
    }
}
