//! On-disk form of a trained model together with everything needed to
//! reproduce its evaluation split and feature scaling.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConcatSoftmax, TrainConfig};
use crate::data::Standardizer;
use crate::error::{Result, TmcError};
use crate::network::{EvidentialNet, MultiViewModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// One evidential network per view, fused by Dempster's rule.
    Tmc,
    /// A single softmax network on concatenated views.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub kind: ModelKind,
    pub dataset: String,
    pub class_count: usize,
    pub input_dims: Vec<usize>,
    /// Indices into the manifest's views, when a subset was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_views: Option<Vec<usize>>,
    pub test_fraction: f64,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub seed: u64,
    pub config: CheckpointConfig,
    pub standardizer: Standardizer,
    pub views: Vec<EvidentialNet>,
}

impl Checkpoint {
    pub fn from_tmc(
        model: &MultiViewModel,
        config: CheckpointConfig,
        standardizer: Standardizer,
    ) -> Self {
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            seed: config.train.seed,
            config: CheckpointConfig {
                kind: ModelKind::Tmc,
                ..config
            },
            standardizer,
            views: model.views().to_vec(),
        }
    }

    pub fn from_baseline(
        model: &ConcatSoftmax,
        config: CheckpointConfig,
        standardizer: Standardizer,
    ) -> Self {
        Checkpoint {
            schema_version: SCHEMA_VERSION,
            seed: config.train.seed,
            config: CheckpointConfig {
                kind: ModelKind::Baseline,
                ..config
            },
            standardizer,
            views: vec![model.net().clone()],
        }
    }

    pub fn tmc_model(&self) -> Result<MultiViewModel> {
        if self.config.kind != ModelKind::Tmc {
            return Err(TmcError::InvalidConfig(
                "checkpoint holds a baseline model, not a multi-view evidential one".into(),
            ));
        }
        MultiViewModel::new(self.views.clone())
    }

    pub fn baseline_model(&self) -> Result<ConcatSoftmax> {
        match (self.config.kind, self.views.as_slice()) {
            (ModelKind::Baseline, [net]) => ConcatSoftmax::new(net.clone()),
            _ => Err(TmcError::InvalidConfig(
                "checkpoint does not hold a single baseline network".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(TmcError::InvalidConfig(format!(
                "unsupported checkpoint schema version {}",
                self.schema_version
            )));
        }
        for net in &self.views {
            net.validate()?;
        }
        match self.config.kind {
            ModelKind::Tmc => {
                self.tmc_model()?;
            }
            ModelKind::Baseline => {
                self.baseline_model()?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)? + "\n";
        fs::write(path, text).map_err(|e| TmcError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| TmcError::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| TmcError::parse(path, e.to_string()))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}
