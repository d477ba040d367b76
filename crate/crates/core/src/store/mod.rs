//! On-disk formats: trajectories, dataset manifests, checkpoints.
//!
//! All binary values are little-endian and every format carries a version.
//! Files are written to a temporary sibling and renamed into place.

mod checkpoint;
mod manifest;
mod trajectory;

use std::path::Path;

pub use checkpoint::{
    read_checkpoint, write_checkpoint, Checkpoint, CurriculumPosition, RngState, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use manifest::{
    level_index, level_label, Dataset, DatasetManifest, FamilyIndex, Provenance, Split, TrajectoryEntry,
    FAMILY_FILE, MANIFEST_FILE, MANIFEST_VERSION,
};
pub use trajectory::{
    read_trajectory, velocity_payload_bytes, write_trajectory, Trajectory, TRAJECTORY_MAGIC, TRAJECTORY_VERSION,
};

use crate::meshkit::MeshError;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("checksum mismatch in {block} block")]
    Checksum { block: &'static str },
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("level {0} not present in dataset family")]
    MissingLevel(String),
    #[error("invalid mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("malformed JSON document: {0}")]
    Json(#[from] serde_json::Error),
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Format versions, as printed by `gridcourse --version`.
pub fn format_versions() -> String {
    format!(
        "trajectory {} v{}, checkpoint {} v{}, manifest v{}",
        std::str::from_utf8(TRAJECTORY_MAGIC).unwrap(),
        TRAJECTORY_VERSION,
        std::str::from_utf8(CHECKPOINT_MAGIC).unwrap(),
        CHECKPOINT_VERSION,
        MANIFEST_VERSION
    )
}
