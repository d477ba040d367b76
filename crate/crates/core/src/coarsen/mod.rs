//! Coarse mesh levels by edge-collapse decimation, and velocity transfer
//! from the fine mesh onto them.

mod collapse;
mod levels;
mod transfer;

use serde::{Deserialize, Serialize};

pub use collapse::{coarsen_mesh, element_quality, MIN_ANGLE_DEG, MIN_TET_QUALITY};
pub use levels::{build_levels, coarsen_levels, LevelSet};
pub use transfer::{transfer_field, transfer_trajectory};

use crate::meshkit::MeshError;
use crate::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarsenMode {
    /// Keep this fraction of the nodes.
    TargetNodeFraction,
    /// Collapse until the mean edge length reaches this value (meters).
    TargetEdgeLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarsenTarget {
    pub mode: CoarsenMode,
    pub value: f64,
    /// Non-Fluid nodes only merge into nodes of the same type.
    pub preserve_boundary_types: bool,
}

impl CoarsenTarget {
    pub fn fraction(value: f64) -> Self {
        Self { mode: CoarsenMode::TargetNodeFraction, value, preserve_boundary_types: true }
    }

    pub fn edge_length(value: f64) -> Self {
        Self { mode: CoarsenMode::TargetEdgeLength, value, preserve_boundary_types: true }
    }

    pub fn validate(&self) -> Result<(), CoarsenError> {
        match self.mode {
            CoarsenMode::TargetNodeFraction if !(self.value > 0.0 && self.value < 1.0) => {
                Err(CoarsenError::InvalidTarget(format!("node fraction {} outside (0, 1)", self.value)))
            }
            CoarsenMode::TargetEdgeLength if !(self.value > 0.0 && self.value.is_finite()) => {
                Err(CoarsenError::InvalidTarget(format!("edge length {} must be positive", self.value)))
            }
            _ => Ok(()),
        }
    }

    /// Parses `f0.25`, `fraction:0.25`, `len:0.3` or a bare fraction.
    pub fn parse(text: &str) -> Result<Self, CoarsenError> {
        let t = text.trim();
        let (mode, value) = if let Some(v) = t.strip_prefix("len:").or_else(|| t.strip_prefix("length:")) {
            (CoarsenMode::TargetEdgeLength, v)
        } else if let Some(v) = t.strip_prefix("fraction:").or_else(|| t.strip_prefix('f')) {
            (CoarsenMode::TargetNodeFraction, v)
        } else {
            (CoarsenMode::TargetNodeFraction, t)
        };
        let value: f64 = value.parse().map_err(|_| CoarsenError::InvalidTarget(text.to_string()))?;
        let target = Self { mode, value, preserve_boundary_types: true };
        target.validate()?;
        Ok(target)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CoarsenError {
    #[error("invalid coarsening target: {0}")]
    InvalidTarget(String),
    #[error("quality constraints stop coarsening at {reached} nodes (mean edge {mean_edge:.4e}) before target {target}")]
    UnreachableTarget { reached: usize, mean_edge: f64, target: String },
    #[error("dimension mismatch: fine mesh is {fine}D, coarse mesh is {coarse}D")]
    DimensionMismatch { fine: usize, coarse: usize },
    #[error("mesh error: {0}")]
    Mesh(#[from] MeshError),
    #[error("store error: {0}")]
    Store(#[from] StoreError),
    #[error("trajectory {id}: {source}")]
    Trajectory {
        id: u32,
        #[source]
        source: Box<CoarsenError>,
    },
    #[error("coarsening targets must strictly decrease resolution: {0}")]
    TargetOrder(String),
}
