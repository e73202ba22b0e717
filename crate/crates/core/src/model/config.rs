use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    pub n_tags: usize,
    pub max_seq_len: usize,
    pub adapter_enabled: bool,
    pub head_kind: HeadKind,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale encoder: 2 layers, 4 heads, width 128.
    pub fn desk(vocab_size: usize, n_tags: usize) -> ModelConfig {
        ModelConfig {
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            d_ffn: 256,
            vocab_size,
            n_tags,
            max_seq_len: 128,
            adapter_enabled: true,
            head_kind: HeadKind::Linear,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
            ("n_tags", self.n_tags),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::BadConfig(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(ModelError::BadConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::desk(100, 5).validate().is_ok());
        let mut c = ModelConfig::desk(100, 5);
        c.n_heads = 3;
        assert!(matches!(c.validate(), Err(ModelError::BadConfig(_))));
        c = ModelConfig::desk(100, 0);
        assert!(matches!(c.validate(), Err(ModelError::BadConfig(_))));
    }
}
