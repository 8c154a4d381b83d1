use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::archive::{ArchiveError, WeightArchive};
use crate::freeze::{FineTuneStrategy, TrainabilityMask};
use crate::metrics::MetricReport;
use crate::net::{NetError, SegmentationNetwork};
use ftseg_nn::Scalar;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("checkpoint metadata is invalid: {0}")]
    Metadata(String),
    #[error("checkpoint payload is corrupt: sha256 {found}, recorded {recorded}")]
    Corrupt { recorded: String, found: String },
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub strategy: Option<FineTuneStrategy>,
    pub config_hash: String,
    pub epoch: usize,
    pub metrics: Option<MetricReport>,
    pub trainability: TrainabilityMask,
    pub payload_sha256: String,
}

/// Full network state at one epoch plus its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Every parameter and normalization buffer.
    pub parameters: WeightArchive,
    pub trainability: TrainabilityMask,
    pub config_hash: String,
    pub epoch: usize,
    pub strategy: Option<FineTuneStrategy>,
    pub metrics: Option<MetricReport>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        net: &SegmentationNetwork<T>,
        strategy: Option<FineTuneStrategy>,
        config_hash: &str,
        epoch: usize,
        metrics: Option<MetricReport>,
    ) -> Self {
        Self {
            parameters: net.state_archive(),
            trainability: TrainabilityMask {
                entries: net.group_trainability(),
            },
            config_hash: config_hash.to_string(),
            epoch,
            strategy,
            metrics,
        }
    }

    /// Loads parameters and buffers into `net`; errors name the first
    /// missing or mismatched tensor.
    pub fn restore<T: Scalar>(&self, net: &mut SegmentationNetwork<T>) -> Result<(), NetError> {
        net.load_state(&self.parameters)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = CheckpointMeta {
            strategy: self.strategy,
            config_hash: self.config_hash.clone(),
            epoch: self.epoch,
            metrics: self.metrics.clone(),
            trainability: self.trainability.clone(),
            payload_sha256: self.parameters.payload_sha256(),
        };
        let mut archive = self.parameters.clone();
        archive.metadata = serde_json::to_string(&meta).expect("metadata serializes");
        archive.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut archive = WeightArchive::from_bytes(bytes)?;
        let meta: CheckpointMeta = serde_json::from_str(&archive.metadata)
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let found = archive.payload_sha256();
        if found != meta.payload_sha256 {
            return Err(CheckpointError::Corrupt {
                recorded: meta.payload_sha256,
                found,
            });
        }
        archive.metadata.clear();
        Ok(Self {
            parameters: archive,
            trainability: meta.trainability,
            config_hash: meta.config_hash,
            epoch: meta.epoch,
            strategy: meta.strategy,
            metrics: meta.metrics,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    crate::archive::write_atomic(path, &ckpt.to_bytes()).map_err(|source| {
        CheckpointError::Archive(ArchiveError::Io {
            path: path.display().to_string(),
            source,
        })
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ArchiveError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
