//! Stage options. Each struct is one section of the pipeline TOML file;
//! command-line flags override individual fields.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use behavior_lm_model::{ModelConfig, Preset};

pub const SEED_ENV: &str = "BEHAVIOR_LM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthOptions {
    pub players: usize,
    pub days: u32,
    /// Built-in persona names mixed in equal proportion; empty selects the
    /// default mix.
    pub personas: Vec<String>,
    pub corruption_rate: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            players: 100,
            days: 15,
            personas: Vec::new(),
            corruption_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    pub strict: bool,
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionizeOptions {
    pub gap_ms: i64,
    pub schema: Option<PathBuf>,
}

impl Default for SessionizeOptions {
    fn default() -> Self {
        Self {
            gap_ms: behavior_lm_core::DEFAULT_GAP_MS,
            schema: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordsOptions {
    /// Preprocessing rules; the shipped defaults when absent.
    pub preprocess: Option<PathBuf>,
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabOptions {
    pub min_freq: u64,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self { min_freq: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOptions {
    /// `small`, `medium` or `large`; explicit shape fields override it.
    pub preset: Option<String>,
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub dims: Option<usize>,
    pub block_size: Option<usize>,
    pub window: Option<usize>,
    pub dilation: Option<Vec<usize>>,
    pub mask_rate: f64,
    pub global_projections: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            preset: None,
            layers: None,
            heads: None,
            dims: None,
            block_size: None,
            window: None,
            dilation: None,
            mask_rate: 0.15,
            global_projections: true,
        }
    }
}

impl ModelOptions {
    pub fn resolve(&self, vocab_size: usize, seed: u64) -> Result<ModelConfig> {
        let preset: Preset = self.preset.as_deref().unwrap_or("small").parse()?;
        let (l, h, d, b, w) = preset.shape();
        let mut cfg = ModelConfig::custom(
            self.layers.unwrap_or(l),
            self.heads.unwrap_or(h),
            self.dims.unwrap_or(d),
            self.block_size.unwrap_or(b),
            self.window.unwrap_or(w),
            vocab_size,
        );
        if let Some(dil) = &self.dilation {
            cfg.dilation = dil.clone();
        }
        cfg.mask_rate = self.mask_rate;
        cfg.global_projections = self.global_projections;
        cfg.seed = seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum: usize,
    pub lr: f64,
    /// Seed of the train/test player split; fixed so that runs with
    /// different training seeds share one held-out set.
    pub split_seed: u64,
    pub eval_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 4,
            grad_accum: 4,
            lr: 2e-5,
            split_seed: 0,
            eval_seed: behavior_lm_model::train::DEFAULT_EVAL_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedOptions {
    pub batch_size: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self { batch_size: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSpace {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterOptions {
    pub k: usize,
    pub pca_components: usize,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub cluster_space: ClusterSpace,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            k: 8,
            pca_components: 50,
            perplexity: 30.0,
            tsne_iterations: 1000,
            cluster_space: ClusterSpace::Pca,
        }
    }
}

/// The whole pipeline configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub synth: SynthOptions,
    pub ingest: IngestOptions,
    pub sessionize: SessionizeOptions,
    pub words: WordsOptions,
    pub vocab: VocabOptions,
    pub model: ModelOptions,
    pub train: TrainOptions,
    pub embed: EmbedOptions,
    pub cluster: ClusterOptions,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.ingest.schema,
            &mut cfg.sessionize.schema,
            &mut cfg.words.schema,
            &mut cfg.words.preprocess,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Seed precedence: flag, then config file, then environment, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV} must be an unsigned integer, got `{v}`")),
        Err(_) => Ok(0),
    }
}
