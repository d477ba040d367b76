use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_trajectory, write_atomic, write_trajectory, StoreError, Trajectory};
use crate::coarsen::CoarsenTarget;
use crate::trainer::Normalizer;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAMILY_FILE: &str = "family.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEntry {
    pub id: u32,
    pub file: String,
    pub steps: u64,
    pub nodes: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Level this one was derived from, if any.
    pub source_level: Option<String>,
    pub generator: String,
    #[serde(default)]
    pub targets: Vec<CoarsenTarget>,
    pub seed: u64,
}

/// Per-level dataset description, stored as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub name: String,
    pub level: String,
    pub dim: u32,
    pub dt: f64,
    pub trajectories: Vec<TrajectoryEntry>,
    pub stats: Option<Normalizer>,
    pub provenance: Provenance,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.version != MANIFEST_VERSION {
            return Err(StoreError::Version { found: self.version, supported: MANIFEST_VERSION });
        }
        if !(self.dt > 0.0) {
            return Err(StoreError::Invalid(format!("manifest dt {}", self.dt)));
        }
        let mut ids: Vec<u32> = self.trajectories.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(StoreError::Invalid("duplicate trajectory id".into()));
        }
        Ok(())
    }

    pub fn ids(&self, split: Split) -> Vec<u32> {
        self.trajectories.iter().filter(|t| t.split == split).map(|t| t.id).collect()
    }
}

/// A dataset level on disk: one manifest plus one file per trajectory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    /// Writes trajectories and the manifest. Trajectory `k` gets id `ids[k]`.
    pub fn create(
        dir: &Path,
        name: &str,
        level: &str,
        trajectories: &[(u32, Split, &Trajectory)],
        provenance: Provenance,
    ) -> Result<Self, StoreError> {
        let first = trajectories
            .first()
            .ok_or_else(|| StoreError::Invalid("dataset needs at least one trajectory".into()))?
            .2;
        std::fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(trajectories.len());
        for &(id, split, t) in trajectories {
            if t.dt != first.dt || t.dim() != first.dim() {
                return Err(StoreError::Invalid(format!("trajectory {id} differs in dt or dimension")));
            }
            let file = format!("traj_{id:05}.gcrs");
            write_trajectory(&dir.join(&file), t)?;
            entries.push(TrajectoryEntry {
                id,
                file,
                steps: t.num_steps() as u64,
                nodes: t.num_nodes() as u64,
                split,
            });
        }
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            name: name.to_string(),
            level: level.to_string(),
            dim: first.dim() as u32,
            dt: first.dt,
            trajectories: entries,
            stats: None,
            provenance,
        };
        manifest.validate()?;
        let ds = Self { dir: dir.to_path_buf(), manifest };
        ds.save_manifest()?;
        Ok(ds)
    }

    pub fn save_manifest(&self) -> Result<(), StoreError> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        write_atomic(&self.dir.join(MANIFEST_FILE), text.as_bytes())
    }

    pub fn load(&self, id: u32) -> Result<Trajectory, StoreError> {
        let entry = self
            .manifest
            .trajectories
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| StoreError::Invalid(format!("no trajectory {id} in level {}", self.manifest.level)))?;
        let t = read_trajectory(&self.dir.join(&entry.file))?;
        if t.dt != self.manifest.dt || t.dim() as u32 != self.manifest.dim {
            return Err(StoreError::Invalid(format!("trajectory {id} disagrees with its manifest")));
        }
        Ok(t)
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<(u32, Trajectory)>, StoreError> {
        self.manifest.ids(split).into_iter().map(|id| Ok((id, self.load(id)?))).collect()
    }

    pub fn load_all(&self) -> Result<Vec<(u32, Split, Trajectory)>, StoreError> {
        self.manifest
            .trajectories
            .iter()
            .map(|e| Ok((e.id, e.split, self.load(e.id)?)))
            .collect()
    }

    /// Mean node count over the trajectories.
    pub fn mean_nodes(&self) -> f64 {
        let t = &self.manifest.trajectories;
        t.iter().map(|e| e.nodes as f64).sum::<f64>() / t.len().max(1) as f64
    }
}

/// Index of a dataset family: level labels ordered from finest (`D`) to
/// coarsest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyIndex {
    pub version: u32,
    pub name: String,
    pub levels: Vec<String>,
}

impl FamilyIndex {
    pub fn open(root: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(root.join(FAMILY_FILE))?;
        let idx: FamilyIndex = serde_json::from_str(&text)?;
        idx.validate()?;
        Ok(idx)
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        let mut seen = std::collections::HashSet::new();
        for l in &self.levels {
            if !seen.insert(l) {
                return Err(StoreError::Invalid(format!("duplicate level label {l}")));
            }
        }
        Ok(())
    }

    pub fn save(&self, root: &Path) -> Result<(), StoreError> {
        self.validate()?;
        std::fs::create_dir_all(root)?;
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(&root.join(FAMILY_FILE), text.as_bytes())
    }

    pub fn level(&self, root: &Path, label: &str) -> Result<Dataset, StoreError> {
        if !self.levels.iter().any(|l| l == label) {
            return Err(StoreError::MissingLevel(label.to_string()));
        }
        Dataset::open(&root.join(label))
    }
}

/// Label of the coarsening level `n` (0 is the fine level `D`).
pub fn level_label(n: usize) -> String {
    if n == 0 {
        "D".to_string()
    } else {
        format!("C{n}")
    }
}

/// Inverse of [`level_label`].
pub fn level_index(label: &str) -> Option<usize> {
    if label == "D" {
        return Some(0);
    }
    label.strip_prefix('C')?.parse::<usize>().ok().filter(|&n| n > 0)
}
