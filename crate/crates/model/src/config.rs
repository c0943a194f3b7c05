//! Encoder hyperparameters and the three size presets.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ModelError, Result};

/// Vocabulary size used for the preset parameter counts.
pub const REFERENCE_VOCAB: usize = 13_504;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Small,
    Medium,
    Large,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Small, Preset::Medium, Preset::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Small => "small",
            Preset::Medium => "medium",
            Preset::Large => "large",
        }
    }

    /// `(layers, heads, dims, block_size, window)`.
    pub fn shape(self) -> (usize, usize, usize, usize, usize) {
        match self {
            Preset::Small => (2, 2, 128, 1024, 32),
            Preset::Medium => (6, 6, 384, 2048, 64),
            Preset::Large => (12, 12, 768, 4096, 128),
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown size `{s}` (expected small, medium or large)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub dims: usize,
    pub block_size: usize,
    /// Tokens attended on each side.
    pub window: usize,
    /// Dilation factor per layer.
    pub dilation: Vec<usize>,
    pub vocab_size: usize,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// FFN hidden size as a multiple of `dims`.
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    /// Separate query/key/value projections for global attention.
    #[serde(default = "default_true")]
    pub global_projections: bool,
}

fn default_mask_rate() -> f64 {
    0.15
}

fn default_ffn_mult() -> usize {
    4
}

fn default_true() -> bool {
    true
}

/// Dilation 1 everywhere except the top third of the layers, which use 2.
pub fn default_dilation(layers: usize) -> Vec<usize> {
    let top = layers / 3;
    (0..layers).map(|l| if l >= layers - top { 2 } else { 1 }).collect()
}

impl ModelConfig {
    pub fn preset(p: Preset, vocab_size: usize) -> Self {
        let (layers, heads, dims, block_size, window) = p.shape();
        Self {
            layers,
            heads,
            dims,
            block_size,
            window,
            dilation: default_dilation(layers),
            vocab_size,
            mask_rate: default_mask_rate(),
            seed: 0,
            ffn_mult: default_ffn_mult(),
            global_projections: true,
        }
    }

    /// A custom configuration with default dilation and mask rate.
    pub fn custom(layers: usize, heads: usize, dims: usize, block_size: usize, window: usize, vocab_size: usize) -> Self {
        Self {
            layers,
            heads,
            dims,
            block_size,
            window,
            dilation: default_dilation(layers),
            vocab_size,
            mask_rate: default_mask_rate(),
            seed: 0,
            ffn_mult: default_ffn_mult(),
            global_projections: true,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers == 0 || self.heads == 0 || self.dims == 0 {
            return bad("layers, heads and dims must be positive".into());
        }
        if !self.dims.is_multiple_of(self.heads) {
            return bad(format!("dims {} is not divisible by heads {}", self.dims, self.heads));
        }
        if self.window == 0 {
            return bad("window must be at least 1".into());
        }
        if self.block_size < self.window {
            return bad(format!("block size {} is smaller than the window {}", self.block_size, self.window));
        }
        if self.dilation.len() != self.layers || self.dilation.contains(&0) {
            return bad(format!("need one dilation factor >= 1 per layer, got {:?}", self.dilation));
        }
        if self.vocab_size <= behavior_lm_core::vocab::NUM_SPECIALS {
            return bad(format!("vocabulary of {} has no ordinary words", self.vocab_size));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(ModelError::MaskRate(self.mask_rate));
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dims / self.heads
    }

    /// Number of scalar parameters the encoder allocates.
    pub fn param_count(&self) -> usize {
        let d = self.dims;
        let f = d * self.ffn_mult;
        let linear = |i: usize, o: usize| i * o + o;
        let projections = if self.global_projections { 7 } else { 4 };
        let per_layer = projections * linear(d, d) + linear(d, f) + linear(f, d) + 2 * 2 * d;
        self.vocab_size * d + self.block_size * d + self.layers * per_layer + 2 * d + self.vocab_size
    }

    /// Stable JSON rendering used for digests and checkpoints.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_json().as_bytes()).into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilation_defaults() {
        assert_eq!(default_dilation(2), [1, 1]);
        assert_eq!(default_dilation(6), [1, 1, 1, 1, 2, 2]);
        assert_eq!(default_dilation(12).iter().filter(|&&d| d == 2).count(), 4);
    }

    #[test]
    fn validation() {
        let mut c = ModelConfig::preset(Preset::Small, 100);
        c.validate().unwrap();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::preset(Preset::Small, 100);
        c.block_size = 8;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::preset(Preset::Small, 100);
        c.mask_rate = 1.0;
        assert!(matches!(c.validate(), Err(ModelError::MaskRate(_))));
    }

    #[test]
    fn toml_roundtrip() {
        let c = ModelConfig::custom(2, 2, 32, 64, 8, 50);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ModelConfig::from_toml(&text).unwrap(), c);
        assert_eq!("medium".parse::<Preset>().unwrap(), Preset::Medium);
        assert!("huge".parse::<Preset>().is_err());
    }
}
