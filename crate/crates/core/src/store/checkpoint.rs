use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{write_atomic, StoreError};
use crate::model::ModelConfig;
use crate::optim::{AdamWConfig, LrSchedule};
use crate::trainer::Normalizer;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GCCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where in the curriculum the run stopped. `global_step` is the next step
/// to execute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumPosition {
    pub plan: String,
    pub total_steps: u64,
    pub phase: usize,
    pub global_step: u64,
    pub cum_flops: f64,
}

/// Position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    pub word_pos: u64,
}

/// Everything needed to continue a training run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Snapshot of the run settings a resume must match.
    pub run: serde_json::Value,
    pub optimizer: AdamWConfig,
    pub optimizer_step: u64,
    pub schedule: LrSchedule,
    pub position: CurriculumPosition,
    pub noise_rng: RngState,
    pub normalizer: Normalizer,
    pub weights: Vec<f32>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: ModelConfig,
    run: serde_json::Value,
    optimizer: AdamWConfig,
    optimizer_step: u64,
    schedule: LrSchedule,
    position: CurriculumPosition,
    noise_rng: RngState,
    normalizer: Normalizer,
}

impl Checkpoint {
    /// Fails with `ConfigMismatch` naming the first differing setting.
    pub fn check_resume(&self, model: &ModelConfig, run: &serde_json::Value) -> Result<(), StoreError> {
        if &self.model != model {
            return Err(StoreError::ConfigMismatch(format!(
                "model: checkpoint has {}, requested {}",
                serde_json::to_string(&self.model)?,
                serde_json::to_string(model)?
            )));
        }
        if let (Some(a), Some(b)) = (self.run.as_object(), run.as_object()) {
            for (k, v) in b {
                let have = a.get(k).unwrap_or(&serde_json::Value::Null);
                if have != v {
                    return Err(StoreError::ConfigMismatch(format!("{k}: checkpoint has {have}, requested {v}")));
                }
            }
            if let Some(k) = a.keys().find(|k| !b.contains_key(*k)) {
                return Err(StoreError::ConfigMismatch(format!("{k}: missing from requested config")));
            }
        } else if &self.run != run {
            return Err(StoreError::ConfigMismatch("run settings differ".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, StoreError> {
        let header = Header {
            model: self.model.clone(),
            run: self.run.clone(),
            optimizer: self.optimizer.clone(),
            optimizer_step: self.optimizer_step,
            schedule: self.schedule.clone(),
            position: self.position.clone(),
            noise_rng: self.noise_rng,
            normalizer: self.normalizer.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(64 + json.len() + 4 * self.weights.len() + 16 * self.adam_m.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u64::<LittleEndian>(json.len() as u64)?;
        out.extend_from_slice(&json);
        let mut block = |payload: Vec<u8>, count: usize| -> std::io::Result<()> {
            out.write_u64::<LittleEndian>(count as u64)?;
            out.extend_from_slice(&Sha256::digest(&payload));
            out.extend_from_slice(&payload);
            Ok(())
        };
        block(self.weights.iter().flat_map(|v| v.to_le_bytes()).collect(), self.weights.len())?;
        block(self.adam_m.iter().flat_map(|v| v.to_le_bytes()).collect(), self.adam_m.len())?;
        block(self.adam_v.iter().flat_map(|v| v.to_le_bytes()).collect(), self.adam_v.len())?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 5];
        read_exact(&mut cur, &mut magic, bytes.len())?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(StoreError::BadMagic { expected: "GCCK1", found: magic.to_vec() });
        }
        let version = cur.read_u32::<LittleEndian>().map_err(|_| truncated(13, bytes.len()))?;
        if version != CHECKPOINT_VERSION {
            return Err(StoreError::Version { found: version, supported: CHECKPOINT_VERSION });
        }
        let len = cur.read_u64::<LittleEndian>().map_err(|_| truncated(17, bytes.len()))? as usize;
        let mut json = vec![0u8; len.min(bytes.len())];
        read_exact(&mut cur, &mut json, bytes.len())?;
        if json.len() != len {
            return Err(truncated(17 + len as u64, bytes.len()));
        }
        let h: Header = serde_json::from_slice(&json)?;
        let weights = read_block(&mut cur, "weights", 4, bytes.len())?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut f64_block = |name| -> Result<Vec<f64>, StoreError> {
            Ok(read_block(&mut cur, name, 8, bytes.len())?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let adam_m = f64_block("adam_m")?;
        let adam_v = f64_block("adam_v")?;
        if (cur.position() as usize) != bytes.len() {
            return Err(StoreError::Invalid(format!("{} trailing bytes", bytes.len() - cur.position() as usize)));
        }
        Ok(Self {
            model: h.model,
            run: h.run,
            optimizer: h.optimizer,
            optimizer_step: h.optimizer_step,
            schedule: h.schedule,
            position: h.position,
            noise_rng: h.noise_rng,
            normalizer: h.normalizer,
            weights,
            adam_m,
            adam_v,
        })
    }
}

fn truncated(expected: u64, actual: usize) -> StoreError {
    StoreError::Truncated { expected, actual: actual as u64 }
}

fn read_exact(cur: &mut Cursor<&[u8]>, buf: &mut [u8], total: usize) -> Result<(), StoreError> {
    let need = cur.position() + buf.len() as u64;
    cur.read_exact(buf).map_err(|_| truncated(need, total))
}

fn read_block(cur: &mut Cursor<&[u8]>, name: &'static str, width: u64, total: usize) -> Result<Vec<u8>, StoreError> {
    let count = cur.read_u64::<LittleEndian>().map_err(|_| truncated(cur.position() + 8, total))?;
    let mut digest = [0u8; 32];
    read_exact(cur, &mut digest, total)?;
    let len = count.checked_mul(width).ok_or_else(|| StoreError::Invalid(format!("{name} block size")))?;
    let need = cur.position() + len;
    if need > total as u64 {
        return Err(truncated(need, total));
    }
    let mut payload = vec![0u8; len as usize];
    read_exact(cur, &mut payload, total)?;
    if Sha256::digest(&payload).as_slice() != digest {
        return Err(StoreError::Checksum { block: name });
    }
    Ok(payload)
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), StoreError> {
    write_atomic(path, &ck.to_bytes()?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, StoreError> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}
