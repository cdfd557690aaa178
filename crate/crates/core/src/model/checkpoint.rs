use std::collections::BTreeMap;
use std::path::Path;

use base64::{engine::general_purpose::STANDARD, Engine};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::sketch::Preprocess;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    #[serde(default)]
    pub training: Option<TrainConfig>,
    pub rdp_epsilon: f64,
    pub seed: u64,
    pub category: String,
    pub classes: Vec<String>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
}

/// A trained model with the metadata needed to reproduce its preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse(format!("checkpoint: {e}")))?;
        ckpt.meta.model.validate()?;
        ckpt.params.check(&ckpt.meta.model)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_parts(self.meta.model.clone(), self.params.clone())
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess { rdp_epsilon: self.meta.rdp_epsilon, n_points: self.meta.model.sample_points }
    }

    /// Short content hash of the parameters.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(&self.params).expect("params serialize");
        Sha256::digest(&bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: Vec<usize>,
    data: TensorData,
}

/// Parameter values: base64 of little-endian `f64` bytes when written; a
/// plain number array is also accepted when reading.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TensorData {
    Encoded(String),
    Plain(Vec<f64>),
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} bytes is not a whole number of f64 values", bytes.len()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

impl Serialize for ModelParams {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let records: BTreeMap<&str, TensorRecord> = self
            .iter()
            .map(|(name, t)| {
                (name, TensorRecord { shape: t.shape().to_vec(), data: TensorData::Encoded(encode(t.data())) })
            })
            .collect();
        records.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let records = BTreeMap::<String, TensorRecord>::deserialize(deserializer)?;
        let mut tensors = BTreeMap::new();
        for (name, rec) in records {
            let data = match rec.data {
                TensorData::Encoded(s) => decode(&s).map_err(|e| D::Error::custom(format!("{name}: {e}")))?,
                TensorData::Plain(v) => v,
            };
            let t = Tensor::new(rec.shape, data).map_err(|e| D::Error::custom(format!("{name}: {e}")))?;
            tensors.insert(name, t);
        }
        Ok(ModelParams::from_map(tensors))
    }
}
