//! Flat TOML run configuration. Keys mirror the training and model config
//! field names; anything left out keeps its default.

use anyhow::{Context, Result};
use kner::model::{HeadKind, ModelConfig};
use kner::trainer::{BenchmarkConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub shuffle: Option<bool>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_layers: Option<usize>,
    pub d_ffn: Option<usize>,
    pub max_seq_len: Option<usize>,
    pub adapter_enabled: Option<bool>,
    pub head_kind: Option<HeadKind>,
    pub vocab_size: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<RunConfig> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            shuffle: self.shuffle.unwrap_or(d.shuffle),
            seed,
        }
    }

    /// Model shape; vocabulary and tag counts come from the data.
    pub fn model(&self, vocab_size: usize, n_tags: usize, seed: u64) -> ModelConfig {
        let d = ModelConfig::desk(vocab_size, n_tags);
        ModelConfig {
            d_model: self.d_model.unwrap_or(d.d_model),
            n_heads: self.n_heads.unwrap_or(d.n_heads),
            n_layers: self.n_layers.unwrap_or(d.n_layers),
            d_ffn: self.d_ffn.unwrap_or(d.d_ffn),
            max_seq_len: self.max_seq_len.unwrap_or(d.max_seq_len),
            adapter_enabled: self.adapter_enabled.unwrap_or(d.adapter_enabled),
            head_kind: self.head_kind.unwrap_or(d.head_kind),
            seed,
            ..d
        }
    }

    pub fn benchmark(&self, seed: u64) -> BenchmarkConfig {
        let d = BenchmarkConfig::desk(seed);
        BenchmarkConfig {
            train: self.train(seed),
            model: self.model(1, 1, seed),
            tokenizer_vocab_size: self.vocab_size.unwrap_or(d.tokenizer_vocab_size),
            ..d
        }
    }
}
