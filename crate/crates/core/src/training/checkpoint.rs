use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::corpus::Schema;
use crate::encoder::Vocab;
use crate::error::{DstError, Result};
use crate::heads::HitType;
use crate::model::{Model, ModelConfig};
use crate::nn::{ParamStore, Real};
use crate::tracker::UpdateStrategy;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Named row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub frozen: bool,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub schema_fingerprint: String,
    pub strategy: UpdateStrategy,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    /// Hit-type class order of the type head.
    pub classes: Vec<HitType>,
    /// Value order of every categorical head.
    pub values: BTreeMap<String, Vec<String>>,
    pub vocab: Vocab,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model<F: Real>(model: &Model<F>, train: Option<&TrainConfig>) -> Self {
        let values = model
            .heads()
            .iter()
            .zip(model.schema.slots())
            .filter(|(h, _)| h.categorical)
            .map(|(_, s)| (s.name.clone(), s.ontology.clone()))
            .collect();
        let tensors = model
            .store
            .iter()
            .map(|(_, e)| Tensor {
                name: e.name.clone(),
                rows: e.value.nrows(),
                cols: e.value.ncols(),
                frozen: e.frozen,
                data: e.value.iter().map(|x| x.as_f64()).collect(),
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            schema_fingerprint: model.schema.fingerprint(),
            strategy: model.config.strategy,
            model: model.config.clone(),
            train: train.cloned(),
            classes: model.config.strategy.classes().to_vec(),
            values,
            vocab: model.vocab.clone(),
            tensors,
        }
    }

    pub fn into_model<F: Real>(self, schema: &Schema) -> Result<Model<F>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(DstError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        if self.schema_fingerprint != schema.fingerprint() {
            return Err(DstError::Checkpoint("schema fingerprint does not match".into()));
        }
        if self.strategy != self.model.strategy || self.classes != self.strategy.classes() {
            return Err(DstError::Checkpoint("class order does not match the strategy".into()));
        }
        for (name, values) in &self.values {
            let id = schema
                .slot_id(name)
                .ok_or_else(|| DstError::Checkpoint(format!("unknown slot '{name}'")))?;
            if &schema.slot(id).ontology != values {
                return Err(DstError::Checkpoint(format!("value order of '{name}' changed")));
            }
        }
        let mut store = ParamStore::new();
        for t in self.tensors {
            if t.data.len() != t.rows * t.cols {
                return Err(DstError::Checkpoint(format!("tensor '{}' has wrong length", t.name)));
            }
            let value = Array2::from_shape_vec((t.rows, t.cols), t.data.into_iter().map(F::of).collect())
                .map_err(|e| DstError::Checkpoint(e.to_string()))?;
            store.add(t.name, value, t.frozen);
        }
        Model::from_store(self.model, schema.clone(), self.vocab, store)
    }
}

pub fn save_checkpoint<F: Real>(model: &Model<F>, train: Option<&TrainConfig>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint::from_model(model, train)).expect("checkpoint serializes");
    std::fs::write(path, json).map_err(|e| DstError::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DstError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DstError::malformed(path.display().to_string(), e))
}

/// Load a checkpoint for single-precision inference.
pub fn load_checkpoint(path: impl AsRef<Path>, schema: &Schema) -> Result<Model<f32>> {
    read_checkpoint(path)?.into_model(schema)
}
