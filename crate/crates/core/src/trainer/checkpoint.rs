use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::TensorFile;
use crate::error::{Error, Result};
use crate::model::{init_parameters, DiTConfig, ParameterStore};
use crate::trainer::{AdamState, TrainConfig};

/// Everything needed to resume training bit-exactly.
///
/// Random draws are keyed by `(seed, step, ...)`, so the generator state is
/// fully described by the seed and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: DiTConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub params: ParameterStore,
    pub ema: ParameterStore,
    pub adam: AdamState,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format: String,
    model: DiTConfig,
    train: TrainConfig,
    step: u64,
    schedule: ScheduleMeta,
}

#[derive(Serialize, Deserialize)]
struct ScheduleMeta {
    kind: String,
    t_max: usize,
    beta_start: f64,
    beta_end: f64,
}

const FORMAT: &str = "dit-checkpoint-v1";

impl Checkpoint {
    pub fn to_file(&self) -> TensorFile {
        let meta = Metadata {
            format: FORMAT.into(),
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            schedule: ScheduleMeta {
                kind: "linear".into(),
                t_max: self.train.t_max,
                beta_start: self.train.beta_start,
                beta_end: self.train.beta_end,
            },
        };
        let mut file = TensorFile::new();
        file.metadata = serde_json::to_string(&meta).expect("metadata serialises");
        self.params.write_into(&mut file, "params/");
        self.ema.write_into(&mut file, "ema/");
        self.adam.m.write_into(&mut file, "adam_m/");
        self.adam.v.write_into(&mut file, "adam_v/");
        file
    }

    pub fn from_file(file: &TensorFile) -> Result<Self> {
        let meta: Metadata = serde_json::from_str(&file.metadata)?;
        if meta.format != FORMAT {
            return Err(Error::Format(format!(
                "expected {FORMAT}, found {:?}",
                meta.format
            )));
        }
        let template = init_parameters::<f32>(&meta.model, 0)?;
        let params = ParameterStore::read_from(file, "params/", &template)?;
        let ema = ParameterStore::read_from(file, "ema/", &template)?;
        let m = ParameterStore::read_from(file, "adam_m/", &template)?;
        let v = ParameterStore::read_from(file, "adam_v/", &template)?;
        let expected = 4 * template.len();
        if file.tensors.len() != expected {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, expected {expected}",
                file.tensors.len()
            )));
        }
        Ok(Checkpoint {
            model: meta.model,
            train: meta.train,
            step: meta.step,
            params,
            ema,
            adam: AdamState { m, v },
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_file().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_file(&TensorFile::from_bytes(bytes)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(&TensorFile::load(path)?)
    }
}
