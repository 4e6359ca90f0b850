use serde::{Deserialize, Serialize};

use crate::cmai::{FocusBasis, FocusMode};
use crate::error::{Error, Result};
use crate::vmtc::{CompressionStrategy, MergeMode, VmtcConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmaiConfig {
    pub enabled: bool,
    pub gamma_max: f64,
    pub mode: FocusMode,
    pub discount: f64,
    pub focus_basis: FocusBasis,
}

impl Default for CmaiConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            gamma_max: 0.6,
            mode: FocusMode::Neighborhood,
            discount: 0.5,
            focus_basis: FocusBasis::Weights,
        }
    }
}

/// Run inputs that are not part of the model itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputConfig {
    /// Explicit prompt token ids; when empty, `prompt_len` ids are drawn from the seed.
    pub prompt_ids: Vec<usize>,
    pub prompt_len: usize,
    pub generate_steps: usize,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            prompt_ids: Vec::new(),
            prompt_len: 8,
            generate_steps: 4,
        }
    }
}

impl InputConfig {
    pub fn prompt_token_count(&self) -> usize {
        if self.prompt_ids.is_empty() {
            self.prompt_len
        } else {
            self.prompt_ids.len()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vit_depth: usize,
    pub llm_depth: usize,
    pub n_patches: usize,
    pub patch_dim: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub vmtc: VmtcConfig,
    pub cmai: CmaiConfig,
    /// Skip layer normalization so blocks follow the bare residual equations.
    pub literal_equations: bool,
    /// Hand the `[CLS]` token to the decoder along with the patch tokens.
    pub keep_cls: bool,
    pub seed: u64,
    pub input: InputConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vit_depth: 6,
            llm_depth: 6,
            n_patches: 64,
            patch_dim: 48,
            vocab_size: 256,
            max_text_len: 32,
            vmtc: VmtcConfig::default(),
            cmai: CmaiConfig::default(),
            literal_equations: false,
            keep_cls: false,
            seed: 0,
            input: InputConfig::default(),
        }
    }
}

fn bad(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ModelConfig {
    /// Side length of the square patch grid.
    pub fn grid_side(&self) -> usize {
        (self.n_patches as f64).sqrt().round() as usize
    }

    /// Largest number of visual tokens the decoder can receive.
    pub fn max_image_tokens(&self) -> usize {
        self.n_patches + usize::from(self.keep_cls)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vit_depth", self.vit_depth),
            ("llm_depth", self.llm_depth),
            ("n_patches", self.n_patches),
            ("patch_dim", self.patch_dim),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return Err(bad(field, "must be positive"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(bad("n_heads", format!("does not divide d_model {}", self.d_model)));
        }
        let g = self.grid_side();
        if g * g != self.n_patches {
            return Err(bad("n_patches", "must be a perfect square"));
        }

        let v = &self.vmtc;
        if !(v.target_keep_ratio > 0.0 && v.target_keep_ratio <= 1.0) {
            return Err(bad("vmtc.target_keep_ratio", "must lie in (0, 1]"));
        }
        if v.num_stages == 0 {
            return Err(bad("vmtc.num_stages", "must be at least 1"));
        }
        if v.clusters_per_stage == 0 && v.merge == MergeMode::Cluster {
            return Err(bad("vmtc.clusters_per_stage", "must be at least 1"));
        }
        if !(v.kmeans.tol >= 0.0) {
            return Err(bad("vmtc.kmeans.tol", "must be non-negative"));
        }
        if v.enabled {
            match v.strategy {
                CompressionStrategy::Layerwise => {
                    v.insertion_layers(self.vit_depth)
                        .map_err(|e| bad("vmtc.insertion_layers", e.to_string()))?;
                    crate::vmtc::schedule_stages(self.n_patches, v)
                        .map_err(|e| bad("vmtc.target_keep_ratio", e.to_string()))?;
                }
                CompressionStrategy::LastLayer => {}
                CompressionStrategy::Spatial => {
                    if v.spd_factor == 0 || g % v.spd_factor != 0 {
                        return Err(bad(
                            "vmtc.spd_factor",
                            format!("must divide the patch grid side {g}"),
                        ));
                    }
                }
            }
        }

        let c = &self.cmai;
        if !(c.gamma_max >= 0.0 && c.gamma_max < 1.0) {
            return Err(bad("cmai.gamma_max", "must lie in [0, 1)"));
        }
        if c.mode == FocusMode::Discounted && !(c.discount > 0.0 && c.discount < 1.0) {
            return Err(bad("cmai.discount", "must lie in (0, 1)"));
        }

        let input = &self.input;
        if let Some(&id) = input.prompt_ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(bad("input.prompt_ids", format!("token {id} outside vocabulary")));
        }
        if input.prompt_token_count() + input.generate_steps > self.max_text_len {
            return Err(bad(
                "max_text_len",
                format!(
                    "prompt of {} plus {} generated tokens exceeds {}",
                    input.prompt_token_count(),
                    input.generate_steps,
                    self.max_text_len
                ),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(cfg: &ModelConfig) -> String {
        match cfg.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn default_is_valid() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn errors_name_their_field() {
        let mut cfg = ModelConfig::default();
        cfg.cmai.gamma_max = 1.0;
        assert_eq!(field_of(&cfg), "cmai.gamma_max");

        let mut cfg = ModelConfig::default();
        cfg.n_patches = 50;
        assert_eq!(field_of(&cfg), "n_patches");

        let mut cfg = ModelConfig::default();
        cfg.n_heads = 5;
        assert_eq!(field_of(&cfg), "n_heads");

        let mut cfg = ModelConfig::default();
        cfg.vmtc.strategy = CompressionStrategy::Spatial;
        cfg.vmtc.spd_factor = 3;
        assert_eq!(field_of(&cfg), "vmtc.spd_factor");

        let mut cfg = ModelConfig::default();
        cfg.vmtc.insertion_layers = Some(vec![3, 2, 5]);
        assert_eq!(field_of(&cfg), "vmtc.insertion_layers");

        let mut cfg = ModelConfig::default();
        cfg.input.generate_steps = 40;
        assert_eq!(field_of(&cfg), "max_text_len");
    }
}
