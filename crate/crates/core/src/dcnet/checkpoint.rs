use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{EmbeddingNetwork, NetworkConfig, ParamEntry};
use super::train::EpochRecord;
use super::DcError;
use crate::container::{self, f32_bytes, read_f32};

pub const CHECKPOINT_FORMAT: &str = "stereoboot-dc-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub network: NetworkConfig,
    pub num_freqs: usize,
    pub num_params: usize,
    pub trained: bool,
    pub seed: u64,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
    /// Order and shapes of the float32 parameter blob.
    pub parameters: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: EmbeddingNetwork,
    pub seed: u64,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, DcError> {
        let net = &self.network;
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            network: net.config,
            num_freqs: net.num_freqs,
            num_params: net.num_params(),
            trained: net.trained,
            seed: self.seed,
            best_epoch: self.best_epoch,
            curve: self.curve.clone(),
            parameters: net.layout.entries.clone(),
        };
        Ok(container::encode(&header, &f32_bytes(net.params.iter().copied()))?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DcError> {
        let (header, payload): (CheckpointHeader, _) = container::decode(bytes)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(DcError::Checkpoint(format!("unknown format tag {:?}", header.format)));
        }
        if payload.len() != header.num_params * 4 {
            return Err(DcError::Checkpoint(format!(
                "parameter blob is {} bytes, expected {}",
                payload.len(),
                header.num_params * 4
            )));
        }
        let network = EmbeddingNetwork::from_params(header.network, header.num_freqs, read_f32(payload), header.trained)?;
        if network.layout.entries != header.parameters {
            return Err(DcError::Checkpoint("parameter table does not match the architecture".into()));
        }
        Ok(Self { network, seed: header.seed, best_epoch: header.best_epoch, curve: header.curve })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DcError> {
        fs::write(path, self.to_bytes()?).map_err(|e| DcError::Io(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DcError> {
        let bytes = fs::read(path).map_err(|e| DcError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }
}
