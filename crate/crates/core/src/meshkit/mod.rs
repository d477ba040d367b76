//! Mesh representation, element-connectivity graphs, point location and
//! barycentric interpolation.

mod adjacency;
mod locate;
mod mesh;

pub use adjacency::{build_adjacency, Adjacency};
pub use locate::{
    barycentric, interpolate_field, locate_point, Fallback, Location, PointLocator, Stencil, BARY_TOL,
};
pub use mesh::{signed_measure, Mesh, NodeType, DEGENERACY_TOL};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeshError {
    #[error("mesh dimension must be 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("malformed mesh: {0}")]
    Shape(String),
    #[error("element {element} references node {index} but mesh has {nodes} nodes")]
    IndexOutOfRange { element: usize, index: u32, nodes: usize },
    #[error("element {element} is degenerate (signed measure {measure:e})")]
    Degenerate { element: usize, measure: f64 },
    #[error("invalid adjacency: {0}")]
    Adjacency(String),
    #[error("point lies outside every element")]
    NotFound,
}
