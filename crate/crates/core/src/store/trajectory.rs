use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{write_atomic, StoreError};
use crate::meshkit::{Mesh, NodeType};

pub const TRAJECTORY_MAGIC: &[u8; 5] = b"GCRS1";
pub const TRAJECTORY_VERSION: u32 = 1;

const HEADER_BYTES: u64 = 5 + 4 + 4 + 8 + 8;

/// A mesh plus a fixed-step time series of per-node velocity vectors.
///
/// Frames are stored flat (`num_nodes * dim` values per step) in f32, the
/// same precision used on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mesh: Mesh,
    pub dt: f64,
    pub frames: Vec<Vec<f32>>,
}

impl Trajectory {
    pub fn new(mesh: Mesh, dt: f64, frames: Vec<Vec<f32>>) -> Result<Self, StoreError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(StoreError::Invalid(format!("time step must be positive, got {dt}")));
        }
        let width = mesh.num_nodes() * mesh.dim();
        if let Some((t, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != width) {
            return Err(StoreError::Invalid(format!("frame {t} has {} values, expected {width}", f.len())));
        }
        Ok(Self { mesh, dt, frames })
    }

    pub fn num_steps(&self) -> usize {
        self.frames.len()
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn num_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    /// Largest velocity component magnitude over all frames.
    pub fn max_abs_velocity(&self) -> f32 {
        self.frames.iter().flatten().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Exact size of the serialized form in bytes.
    pub fn encoded_len(&self) -> u64 {
        encoded_len(
            self.dim() as u64,
            self.num_nodes() as u64,
            self.mesh.num_elements() as u64,
            self.num_steps() as u64,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len() as usize);
        self.encode(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    fn encode<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let m = &self.mesh;
        w.write_all(TRAJECTORY_MAGIC)?;
        w.write_u32::<LittleEndian>(TRAJECTORY_VERSION)?;
        w.write_u32::<LittleEndian>(m.dim() as u32)?;
        w.write_u64::<LittleEndian>(m.num_nodes() as u64)?;
        w.write_u64::<LittleEndian>(m.num_elements() as u64)?;
        for &x in m.positions() {
            w.write_f64::<LittleEndian>(x)?;
        }
        for &i in m.elements() {
            w.write_u32::<LittleEndian>(i)?;
        }
        for &t in m.node_types() {
            w.write_u8(t as u8)?;
        }
        w.write_u64::<LittleEndian>(self.frames.len() as u64)?;
        w.write_f64::<LittleEndian>(self.dt)?;
        for frame in &self.frames {
            for &v in frame {
                w.write_f32::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let actual = bytes.len() as u64;
        if actual < HEADER_BYTES {
            if actual >= 5 && &bytes[..5] != TRAJECTORY_MAGIC {
                return Err(StoreError::BadMagic { expected: "GCRS1", found: bytes[..5].to_vec() });
            }
            return Err(StoreError::Truncated { expected: HEADER_BYTES, actual });
        }
        if &bytes[..5] != TRAJECTORY_MAGIC {
            return Err(StoreError::BadMagic { expected: "GCRS1", found: bytes[..5].to_vec() });
        }
        let mut r = Cursor::new(&bytes[5..]);
        let version = r.read_u32::<LittleEndian>()?;
        if version != TRAJECTORY_VERSION {
            return Err(StoreError::Version { found: version, supported: TRAJECTORY_VERSION });
        }
        let dim = r.read_u32::<LittleEndian>()? as u64;
        let n = r.read_u64::<LittleEndian>()?;
        let ne = r.read_u64::<LittleEndian>()?;
        if dim != 2 && dim != 3 {
            return Err(StoreError::Invalid(format!("dimension {dim}")));
        }
        let before_steps = HEADER_BYTES + n * dim * 8 + ne * (dim + 1) * 4 + n;
        if actual < before_steps + 16 {
            return Err(StoreError::Truncated { expected: before_steps + 16, actual });
        }
        let mut positions = vec![0.0f64; (n * dim) as usize];
        r.read_f64_into::<LittleEndian>(&mut positions)?;
        let mut elements = vec![0u32; (ne * (dim + 1)) as usize];
        r.read_u32_into::<LittleEndian>(&mut elements)?;
        let mut raw_types = vec![0u8; n as usize];
        r.read_exact(&mut raw_types)?;
        let types = raw_types
            .iter()
            .map(|&t| NodeType::from_u8(t).ok_or_else(|| StoreError::Invalid(format!("node type code {t}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let steps = r.read_u64::<LittleEndian>()?;
        let dt = r.read_f64::<LittleEndian>()?;
        let expected = encoded_len(dim, n, ne, steps);
        if actual != expected {
            return if actual < expected {
                Err(StoreError::Truncated { expected, actual })
            } else {
                Err(StoreError::Invalid(format!("{} trailing bytes", actual - expected)))
            };
        }
        let width = (n * dim) as usize;
        let mut frames = Vec::with_capacity(steps as usize);
        for _ in 0..steps {
            let mut f = vec![0.0f32; width];
            r.read_f32_into::<LittleEndian>(&mut f)?;
            frames.push(f);
        }
        let mesh = Mesh::new(dim as usize, positions, elements, types)?;
        Trajectory::new(mesh, dt, frames)
    }
}

fn encoded_len(dim: u64, n: u64, ne: u64, steps: u64) -> u64 {
    HEADER_BYTES + n * dim * 8 + ne * (dim + 1) * 4 + n + 8 + 8 + steps * n * dim * 4
}

/// Byte count of the f32 velocity payload alone.
pub fn velocity_payload_bytes(steps: u64, nodes: u64, dim: u64) -> u64 {
    steps * nodes * dim * 4
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), StoreError> {
    write_atomic(path, &traj.to_bytes())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, StoreError> {
    let bytes = std::fs::read(path)?;
    Trajectory::from_bytes(&bytes)
}
