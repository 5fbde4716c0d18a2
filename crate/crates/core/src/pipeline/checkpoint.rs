//! Model checkpoints: every parameter tensor followed by every normalization
//! buffer as consecutive USTF records, plus a JSON sidecar naming them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{read_json, sidecar, write_json};
use super::tensor_file::{read_records, write_records, TensorRecord};
use crate::error::{Error, Result};
use crate::flow::Scenario;
use crate::network::{FlowModel, Hyperparams, NetConfig, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Parameter,
    Buffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: TensorKind,
}

/// Training context stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingInfo {
    pub scenario: Scenario,
    pub hyper: Hyperparams,
    pub seed: u64,
    pub epoch: Option<usize>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub network: NetConfig,
    pub data_scale: f64,
    pub standardize: bool,
    pub training: TrainingInfo,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(path: &Path, model: &FlowModel, training: &TrainingInfo) -> Result<()> {
    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let entries = |ts: &[Tensor], kind: TensorKind| -> Vec<TensorEntry> {
        ts.iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.data.shape().to_vec(),
                kind,
            })
            .collect()
    };
    let mut tensors = entries(&model.params, TensorKind::Parameter);
    tensors.extend(entries(&model.buffers, TensorKind::Buffer));
    let records: Vec<TensorRecord> = model
        .params
        .iter()
        .chain(&model.buffers)
        .map(|t| TensorRecord::from_array(&t.data))
        .collect();
    write_records(path, &records)?;
    write_json(
        &sidecar(path),
        &CheckpointMeta {
            version: CHECKPOINT_VERSION,
            network: model.config,
            data_scale: model.data_scale,
            standardize: model.standardize,
            training: training.clone(),
            tensors,
        },
    )
}

pub fn load_checkpoint(path: &Path) -> Result<(FlowModel, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(&sidecar(path))?;
    let format_err = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if meta.version != CHECKPOINT_VERSION {
        return Err(format_err(format!("unsupported checkpoint version {}", meta.version)));
    }
    let records = read_records(path)?;
    if records.len() != meta.tensors.len() {
        return Err(format_err(format!(
            "{} records but {} sidecar entries",
            records.len(),
            meta.tensors.len()
        )));
    }
    let mut params = Vec::new();
    let mut buffers = Vec::new();
    for (entry, record) in meta.tensors.iter().zip(&records) {
        if entry.shape != record.dims {
            return Err(format_err(format!(
                "{}: record dims {:?} differ from sidecar {:?}",
                entry.name, record.dims, entry.shape
            )));
        }
        let t = Tensor {
            name: entry.name.clone(),
            data: record.to_array(),
        };
        match entry.kind {
            TensorKind::Parameter => params.push(t),
            TensorKind::Buffer => buffers.push(t),
        }
    }
    let model = FlowModel::from_tensors(&meta.network, params, buffers, meta.data_scale, meta.standardize)
        .map_err(|e| format_err(e.to_string()))?;
    Ok((model, meta))
}
