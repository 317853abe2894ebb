//! Versioned JSON checkpoints.
//!
//! Two kinds: `full` carries every backbone tensor plus the adapter factors
//! and mapping networks; `adapter` carries only the factors and mappings and
//! is applied onto a separately loaded base whose config must match exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use adaptasr_core::adapters::{AdaptedModel, AdapterSpec, AdapterState};
use adaptasr_core::backbone::{BackboneConfig, ToyBackbone};
use adaptasr_core::conditioning::MappingNetwork;
use adaptasr_core::Mat;
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint parse error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint format version {got}, expected {expected}")]
    Version { got: u32, expected: u32 },
    #[error("expected a {expected} checkpoint, got {got}")]
    KindMismatch { expected: &'static str, got: String },
    #[error("adapter checkpoint was trained on a different backbone config")]
    ConfigMismatch,
    #[error("checkpoint is missing backbone tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name} has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    ShapeMismatch {
        name: String,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Full,
    Adapter,
}

impl std::fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CheckpointKind::Full => write!(f, "full"),
            CheckpointKind::Adapter => write!(f, "adapter"),
        }
    }
}

/// One embedding source's mapping network, keyed by source name. Order in
/// the vector is the conditioning row order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingRecord {
    pub source: String,
    pub network: MappingNetwork,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub backbone_config: BackboneConfig,
    pub adapter_spec: AdapterSpec,
    pub adapter_state: AdapterState,
    /// Present only in full checkpoints.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub backbone_params: BTreeMap<String, Mat>,
    #[serde(default)]
    pub mappings: Vec<MappingRecord>,
}

pub fn full_checkpoint(model: &AdaptedModel, mappings: Vec<MappingRecord>) -> Checkpoint {
    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: CheckpointKind::Full,
        backbone_config: model.backbone.config.clone(),
        adapter_spec: model.spec.clone(),
        adapter_state: model.state.clone(),
        backbone_params: model.backbone.params.clone(),
        mappings,
    }
}

pub fn adapter_checkpoint(model: &AdaptedModel, mappings: Vec<MappingRecord>) -> Checkpoint {
    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: CheckpointKind::Adapter,
        backbone_config: model.backbone.config.clone(),
        adapter_spec: model.spec.clone(),
        adapter_state: model.state.clone(),
        backbone_params: BTreeMap::new(),
        mappings,
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let json = serde_json::to_string(ckpt)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CheckpointError::Version {
            got: ckpt.format_version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    Ok(ckpt)
}

/// Rebuilds a model from a full checkpoint. Every backbone tensor must be
/// present with the exact shape the config implies.
pub fn restore_full(ckpt: &Checkpoint) -> Result<AdaptedModel, CheckpointError> {
    if ckpt.kind != CheckpointKind::Full {
        return Err(CheckpointError::KindMismatch {
            expected: "full",
            got: ckpt.kind.to_string(),
        });
    }
    let mut backbone = ToyBackbone::zeros(ckpt.backbone_config.clone())
        .expect("config was validated when the checkpoint was written");
    for (name, rows, cols) in ToyBackbone::param_shapes(&ckpt.backbone_config) {
        let tensor = ckpt
            .backbone_params
            .get(&name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        if tensor.rows() != rows || tensor.cols() != cols {
            return Err(CheckpointError::ShapeMismatch {
                name,
                rows,
                cols,
                got_rows: tensor.rows(),
                got_cols: tensor.cols(),
            });
        }
        backbone.params.insert(name, tensor.clone());
    }
    Ok(AdaptedModel {
        backbone,
        spec: ckpt.adapter_spec.clone(),
        state: ckpt.adapter_state.clone(),
    })
}

/// Applies an adapter-only checkpoint onto a base backbone. The base must
/// have the same config the adapter was trained against.
pub fn apply_adapter(
    base: ToyBackbone,
    ckpt: &Checkpoint,
) -> Result<AdaptedModel, CheckpointError> {
    if ckpt.kind != CheckpointKind::Adapter {
        return Err(CheckpointError::KindMismatch {
            expected: "adapter",
            got: ckpt.kind.to_string(),
        });
    }
    if base.config != ckpt.backbone_config {
        return Err(CheckpointError::ConfigMismatch);
    }
    Ok(AdaptedModel {
        backbone: base,
        spec: ckpt.adapter_spec.clone(),
        state: ckpt.adapter_state.clone(),
    })
}
