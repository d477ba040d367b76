use std::path::Path;

use super::{coarsen_mesh, transfer_trajectory, CoarsenError, CoarsenTarget};
use crate::meshkit::Mesh;
use crate::par;
use crate::store::{level_label, Dataset, FamilyIndex, Provenance, Split, StoreError, Trajectory};

/// Meshes of one family, finest first, with the target that produced each
/// coarse level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub meshes: Vec<Mesh>,
    pub targets: Vec<CoarsenTarget>,
}

impl LevelSet {
    pub fn labels(&self) -> Vec<String> {
        (0..self.meshes.len()).map(level_label).collect()
    }

    pub fn node_counts(&self) -> Vec<usize> {
        self.meshes.iter().map(Mesh::num_nodes).collect()
    }
}

/// Applies each target to the previous level's output. Every level must
/// have strictly fewer nodes than the one before it.
pub fn coarsen_levels(mesh: &Mesh, targets: &[CoarsenTarget], seed: u64) -> Result<LevelSet, CoarsenError> {
    let mut meshes = vec![mesh.clone()];
    for (k, t) in targets.iter().enumerate() {
        let prev = meshes.last().unwrap();
        let next = coarsen_mesh(prev, t, seed.wrapping_add(k as u64))?;
        if next.num_nodes() >= prev.num_nodes() {
            return Err(CoarsenError::TargetOrder(format!(
                "target {} leaves {} nodes (previous level has {})",
                k + 1,
                next.num_nodes(),
                prev.num_nodes()
            )));
        }
        meshes.push(next);
    }
    Ok(LevelSet { meshes, targets: targets.to_vec() })
}

/// Writes coarse levels `C1..Ck` of `fine` under `family_root`, with every
/// trajectory's fields transferred from the fine level, and updates the
/// family index.
pub fn build_levels(
    fine: &Dataset,
    family_root: &Path,
    targets: &[CoarsenTarget],
    seed: u64,
) -> Result<Vec<Dataset>, CoarsenError> {
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    for t in targets {
        t.validate()?;
    }
    let entries = &fine.manifest.trajectories;
    let ids: Vec<u32> = entries.iter().map(|e| e.id).collect();
    let per_traj: Vec<Result<Vec<Trajectory>, CoarsenError>> = par::map_slice(&ids, |&id| {
        let wrap = |e: CoarsenError| CoarsenError::Trajectory { id, source: Box::new(e) };
        let traj = fine.load(id).map_err(|e| wrap(e.into()))?;
        let set = coarsen_levels(&traj.mesh, targets, seed).map_err(wrap)?;
        set.meshes[1..]
            .iter()
            .map(|m| transfer_trajectory(&traj, m).map_err(wrap))
            .collect()
    });
    let mut by_level: Vec<Vec<Trajectory>> = vec![Vec::with_capacity(ids.len()); targets.len()];
    for levels in per_traj {
        for (k, t) in levels?.into_iter().enumerate() {
            by_level[k].push(t);
        }
    }

    let mut out = Vec::with_capacity(targets.len());
    for k in 0..targets.len() {
        let label = level_label(k + 1);
        let refs: Vec<(u32, Split, &Trajectory)> =
            entries.iter().zip(&by_level[k]).map(|(e, t)| (e.id, e.split, t)).collect();
        let provenance = Provenance {
            source_level: Some(fine.manifest.level.clone()),
            generator: "edge-collapse".into(),
            targets: targets[..=k].to_vec(),
            seed,
        };
        let ds = Dataset::create(&family_root.join(&label), &fine.manifest.name, &label, &refs, provenance)?;
        out.push(ds);
    }

    let mut index = match FamilyIndex::open(family_root) {
        Ok(idx) => idx,
        Err(StoreError::Io(_)) => FamilyIndex {
            version: crate::store::MANIFEST_VERSION,
            name: fine.manifest.name.clone(),
            levels: vec![fine.manifest.level.clone()],
        },
        Err(e) => return Err(e.into()),
    };
    index.levels.truncate(1);
    index.levels.extend((1..=targets.len()).map(level_label));
    index.save(family_root)?;
    Ok(out)
}
