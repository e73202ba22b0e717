use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub data: Vec<f64>,
}

/// Serialized model plus the tokenizer and tag list it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tags: Option<Vec<String>>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: *model.config(),
            tensors: model
                .tensors()
                .into_iter()
                .map(|t| TensorRecord {
                    name: t.name,
                    shape: t.shape,
                    trainable: t.trainable,
                    data: t.data.to_vec(),
                })
                .collect(),
            tokenizer: None,
            tags: None,
        }
    }

    /// Rebuilds the model. Every tensor must be present with its exact shape.
    pub fn to_model(&self) -> Result<Model, ModelError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let mut model = Model::init(self.config)?;
        let shapes: Vec<(String, Vec<usize>)> =
            model.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if shapes.len() != self.tensors.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (((name, slot), (_, shape)), rec) in
            model.tensors_mut().into_iter().zip(&shapes).zip(&self.tensors)
        {
            if rec.name != name || &rec.shape != shape || rec.data.len() != slot.len() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {name} {shape:?}",
                    rec.name, rec.shape
                )));
            }
            slot.copy_from_slice(&rec.data);
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(src: &str) -> Result<Checkpoint, ModelError> {
        serde_json::from_str(src).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}
