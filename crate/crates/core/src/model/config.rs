use serde::{Deserialize, Serialize};

use super::ModelError;

/// Where the adjacency mask enters attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Softmax over all nodes, then Hadamard product with the adjacency.
    /// Rows do not renormalize.
    #[default]
    PostSoftmax,
    /// Non-neighbors get -inf scores before the softmax (ablation only).
    PreSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Processor blocks (L).
    pub layers: usize,
    /// Token width (d).
    pub width: usize,
    pub heads: usize,
    /// Gated-MLP hidden width is `mlp_mult * width`.
    pub mlp_mult: usize,
    pub in_features: usize,
    pub out_features: usize,
    pub rms_eps: f64,
    #[serde(default)]
    pub mask_mode: MaskMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 10,
            width: 64,
            heads: 4,
            mlp_mult: 3,
            in_features: 10,
            out_features: 2,
            rms_eps: 1e-6,
            mask_mode: MaskMode::PostSoftmax,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.layers < 1 {
            return fail(format!("layers must be >= 1, got {}", self.layers));
        }
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return fail(format!("width {} must be a positive multiple of heads {}", self.width, self.heads));
        }
        if self.mlp_mult == 0 {
            return fail("mlp_mult must be >= 1".into());
        }
        if self.in_features == 0 {
            return fail("in_features must be >= 1".into());
        }
        if self.out_features != 2 && self.out_features != 3 {
            return fail(format!("out_features must be 2 or 3, got {}", self.out_features));
        }
        if !(self.rms_eps > 0.0) {
            return fail(format!("rms_eps must be positive, got {}", self.rms_eps));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.width / self.heads
    }

    pub fn hidden(&self) -> usize {
        self.mlp_mult * self.width
    }
}

/// Closed-form parameter count.
pub fn param_count(c: &ModelConfig) -> Result<usize, ModelError> {
    c.validate()?;
    let d = c.width;
    let md = c.hidden();
    let encoder = (c.in_features * d + d) + (d * d + d) + d;
    let block = 4 * (d * d + d) + 2 * d + 2 * (d * md + md) + (md * d + d);
    let decoder = (d * d + d) + (d * c.out_features + c.out_features) + d;
    Ok(encoder + c.layers * block + decoder)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_count() {
        let c = ModelConfig { in_features: 9, out_features: 3, ..Default::default() };
        // 4864 (encoder) + 10 * 54080 (blocks) + 4419 (decoder)
        assert_eq!(param_count(&c).unwrap(), 550_083);
    }

    #[test]
    fn zero_layers_rejected() {
        let c = ModelConfig { layers: 0, ..Default::default() };
        assert!(matches!(param_count(&c), Err(ModelError::Config(_))));
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig { heads: 5, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn block_share_scales_with_layers() {
        let a = ModelConfig { layers: 5, ..Default::default() };
        let b = ModelConfig { layers: 10, ..Default::default() };
        let base = ModelConfig { layers: 1, ..Default::default() };
        let per_block = param_count(&ModelConfig { layers: 2, ..Default::default() }).unwrap()
            - param_count(&base).unwrap();
        let fixed = param_count(&base).unwrap() - per_block;
        assert_eq!(param_count(&b).unwrap() - fixed, 2 * (param_count(&a).unwrap() - fixed));
    }
}
