use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorKind {
    Matrix,
    Bias,
    Gain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub kind: TensorKind,
}

impl TensorSpec {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearIdx {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockIdx {
    pub q: LinearIdx,
    pub k: LinearIdx,
    pub v: LinearIdx,
    pub o: LinearIdx,
    pub norm1: Range<usize>,
    pub l: LinearIdx,
    pub r: LinearIdx,
    pub f: LinearIdx,
    pub norm2: Range<usize>,
}

/// Offsets of every named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub enc1: LinearIdx,
    pub enc2: LinearIdx,
    pub enc_norm: Range<usize>,
    pub blocks: Vec<BlockIdx>,
    pub dec1: LinearIdx,
    pub dec_norm: Range<usize>,
    pub dec2: LinearIdx,
    pub entries: Vec<TensorSpec>,
    pub total: usize,
}

struct Builder {
    entries: Vec<TensorSpec>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: String, rows: usize, cols: usize, kind: TensorKind) -> Range<usize> {
        let r = self.offset..self.offset + rows * cols;
        self.entries.push(TensorSpec { name, offset: self.offset, rows, cols, kind });
        self.offset = r.end;
        r
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, n_in: usize, n_out: usize) -> LinearIdx {
        let w = self.push(format!("{prefix}.{w}"), n_in, n_out, TensorKind::Matrix);
        let b = self.push(format!("{prefix}.{b}"), 1, n_out, TensorKind::Bias);
        LinearIdx { w, b, n_in, n_out }
    }

    fn gain(&mut self, name: String, d: usize) -> Range<usize> {
        self.push(name, 1, d, TensorKind::Gain)
    }
}

impl ParamLayout {
    pub fn new(c: &ModelConfig) -> Self {
        let d = c.width;
        let md = c.hidden();
        let mut b = Builder { entries: Vec::new(), offset: 0 };
        let enc1 = b.linear("enc", "w1", "b1", c.in_features, d);
        let enc2 = b.linear("enc", "w2", "b2", d, d);
        let enc_norm = b.gain("enc.norm".into(), d);
        let blocks = (0..c.layers)
            .map(|l| {
                let p = format!("blocks.{l}");
                let q = b.linear(&p, "wq", "bq", d, d);
                let k = b.linear(&p, "wk", "bk", d, d);
                let v = b.linear(&p, "wv", "bv", d, d);
                let o = b.linear(&p, "wo", "bo", d, d);
                let norm1 = b.gain(format!("{p}.norm1"), d);
                let lb = b.linear(&p, "wl", "bl", d, md);
                let r = b.linear(&p, "wr", "br", d, md);
                let f = b.linear(&p, "wf", "bf", md, d);
                let norm2 = b.gain(format!("{p}.norm2"), d);
                BlockIdx { q, k, v, o, norm1, l: lb, r, f, norm2 }
            })
            .collect();
        let dec1 = b.linear("dec", "w1", "b1", d, d);
        let dec_norm = b.gain("dec.norm".into(), d);
        let dec2 = b.linear("dec", "w2", "b2", d, c.out_features);
        let total = b.offset;
        Self { enc1, enc2, enc_norm, blocks, dec1, dec_norm, dec2, entries: b.entries, total }
    }

    pub fn find(&self, name: &str) -> Option<&TensorSpec> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Per-parameter flag: true for matrix weights (subject to weight decay).
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for e in &self.entries {
            if e.kind == TensorKind::Matrix {
                mask[e.range()].iter_mut().for_each(|m| *m = true);
            }
        }
        mask
    }
}

/// All model weights in one flat buffer, addressed through a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub values: Vec<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let values = vec![T::zero(); layout.total];
        Ok(Self { config: config.clone(), layout, values })
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, zero biases, unit
    /// norm gains.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in p.layout.entries.clone() {
            let slot = &mut p.values[e.range()];
            match e.kind {
                TensorKind::Matrix => {
                    let bound = 1.0 / (e.rows as f64).sqrt();
                    for x in slot.iter_mut() {
                        *x = T::of(rng.random_range(-bound..bound));
                    }
                }
                TensorKind::Bias => slot.iter_mut().for_each(|x| *x = T::zero()),
                TensorKind::Gain => slot.iter_mut().for_each(|x| *x = T::one()),
            }
        }
        Ok(p)
    }

    pub fn from_values(config: &ModelConfig, values: Vec<T>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if values.len() != layout.total {
            return Err(ModelError::Shape(format!("{} values for {} parameters", values.len(), layout.total)));
        }
        Ok(Self { config: config.clone(), layout, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.find(name).map(|e| &self.values[e.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let r = self.layout.find(name)?.range();
        Some(&mut self.values[r])
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            values: self.values.iter().map(|x| U::of(x.to_f64().unwrap())).collect(),
        }
    }
}
