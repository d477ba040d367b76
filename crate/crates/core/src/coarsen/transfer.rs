use super::CoarsenError;
use crate::meshkit::{Fallback, Mesh, NodeType, PointLocator, Stencil};
use crate::par;
use crate::store::Trajectory;

fn check_dims(fine: &Mesh, coarse: &Mesh) -> Result<(), CoarsenError> {
    if fine.dim() != coarse.dim() {
        return Err(CoarsenError::DimensionMismatch { fine: fine.dim(), coarse: coarse.dim() });
    }
    Ok(())
}

fn stencils(fine: &Mesh, coarse: &Mesh) -> Result<Vec<Stencil>, CoarsenError> {
    let locator = PointLocator::new(fine);
    (0..coarse.num_nodes())
        .map(|i| Ok(locator.stencil(coarse.position(i), Fallback::NearestNode)?))
        .collect()
}

/// Interpolates a per-node field (`channels` values per node) from `fine`
/// onto the nodes of `coarse`, with nearest-node fallback outside the fine
/// domain. No boundary conditions are applied.
pub fn transfer_field(fine: &Mesh, field: &[f64], channels: usize, coarse: &Mesh) -> Result<Vec<f64>, CoarsenError> {
    check_dims(fine, coarse)?;
    if field.len() != fine.num_nodes() * channels {
        return Err(crate::meshkit::MeshError::Shape(format!(
            "field has {} values for {} nodes x {channels}",
            field.len(),
            fine.num_nodes()
        ))
        .into());
    }
    let st = stencils(fine, coarse)?;
    let mut out = vec![0.0; coarse.num_nodes() * channels];
    for (i, s) in st.iter().enumerate() {
        s.apply(field, channels, &mut out[i * channels..(i + 1) * channels]);
    }
    Ok(out)
}

/// Re-samples every frame of `fine` onto `coarse`. Stencils are computed once
/// and shared by all frames; coarse Wall nodes are pinned to zero.
pub fn transfer_trajectory(fine: &Trajectory, coarse: &Mesh) -> Result<Trajectory, CoarsenError> {
    check_dims(&fine.mesh, coarse)?;
    let dim = coarse.dim();
    let st = stencils(&fine.mesh, coarse)?;
    let frames = par::map_slice(&fine.frames, |frame| {
        let field: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
        let mut out = vec![0f32; coarse.num_nodes() * dim];
        let mut buf = vec![0.0; dim];
        for (i, s) in st.iter().enumerate() {
            if coarse.node_type(i) == NodeType::Wall {
                continue;
            }
            s.apply(&field, dim, &mut buf);
            for c in 0..dim {
                out[i * dim + c] = buf[c] as f32;
            }
        }
        out
    });
    Ok(Trajectory::new(coarse.clone(), fine.dt, frames)?)
}
