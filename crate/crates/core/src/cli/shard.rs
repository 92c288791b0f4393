//! Dataset shards: a JSON header followed by little-endian blobs, one per
//! declared field, in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, ContainerError};

pub const SHARD_FORMAT: &str = "stereoboot-shard/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub dtype: Dtype,
    /// `[frames, freqs]`.
    pub shape: [usize; 2],
}

/// Scalar confidence statistics of the mixture, absent for ground-truth
/// shards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShardConfidence {
    pub c_cluster: f64,
    pub c_jsd: f64,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardHeader {
    pub format: String,
    pub mixture_id: String,
    pub frames: usize,
    pub freqs: usize,
    pub alpha: Option<f64>,
    /// `"spatial"` or `"ground_truth"`.
    pub label_source: String,
    pub confidence: Option<ShardConfidence>,
    pub fields: Vec<FieldSpec>,
}

/// One mixture's training data. Arrays are row-major `(t, f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    pub mixture_id: String,
    pub frames: usize,
    pub freqs: usize,
    pub alpha: Option<f64>,
    pub label_source: String,
    pub confidence: Option<ShardConfidence>,
    /// Log magnitude in dB of the single-channel mixture.
    pub log_mag: Vec<f32>,
    pub labels: Vec<u8>,
    pub weights: Vec<f32>,
    pub true_labels: Option<Vec<u8>>,
    /// Confidence-free weights `|X| / sum |X|`.
    pub magnitude_weights: Option<Vec<f32>>,
    pub c_post: Option<Vec<f32>>,
    pub combined: Option<Vec<f32>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ShardError {
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("shard: {0}")]
    Invalid(String),
}

enum Blob<'a> {
    F32(&'a [f32]),
    U8(&'a [u8]),
}

impl DatasetShard {
    fn blobs(&self) -> Vec<(&'static str, Blob<'_>)> {
        let mut out = vec![
            ("log_mag", Blob::F32(&self.log_mag)),
            ("labels", Blob::U8(&self.labels)),
            ("weights", Blob::F32(&self.weights)),
        ];
        if let Some(v) = &self.true_labels {
            out.push(("true_labels", Blob::U8(v)));
        }
        if let Some(v) = &self.magnitude_weights {
            out.push(("magnitude_weights", Blob::F32(v)));
        }
        if let Some(v) = &self.c_post {
            out.push(("c_post", Blob::F32(v)));
        }
        if let Some(v) = &self.combined {
            out.push(("combined", Blob::F32(v)));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ShardError> {
        let n = self.frames * self.freqs;
        let mut fields = Vec::new();
        let mut payload = Vec::new();
        for (name, blob) in self.blobs() {
            let (dtype, len) = match blob {
                Blob::F32(v) => {
                    payload.extend(v.iter().flat_map(|x| x.to_le_bytes()));
                    (Dtype::F32, v.len())
                }
                Blob::U8(v) => {
                    payload.extend_from_slice(v);
                    (Dtype::U8, v.len())
                }
            };
            if len != n {
                return Err(ShardError::Invalid(format!("field {name} has {len} values, expected {n}")));
            }
            fields.push(FieldSpec { name: name.into(), dtype, shape: [self.frames, self.freqs] });
        }
        let header = ShardHeader {
            format: SHARD_FORMAT.into(),
            mixture_id: self.mixture_id.clone(),
            frames: self.frames,
            freqs: self.freqs,
            alpha: self.alpha,
            label_source: self.label_source.clone(),
            confidence: self.confidence,
            fields,
        };
        Ok(container::encode(&header, &payload)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ShardError> {
        let (header, payload): (ShardHeader, &[u8]) = container::decode(bytes)?;
        if header.format != SHARD_FORMAT {
            return Err(ShardError::Invalid(format!("unknown format `{}`", header.format)));
        }
        let n = header.frames * header.freqs;
        let expected: usize = header.fields.iter().map(|f| f.dtype.width() * n).sum();
        if payload.len() != expected {
            return Err(ShardError::Invalid(format!("payload is {} bytes, header declares {expected}", payload.len())));
        }
        let mut shard = DatasetShard {
            mixture_id: header.mixture_id,
            frames: header.frames,
            freqs: header.freqs,
            alpha: header.alpha,
            label_source: header.label_source,
            confidence: header.confidence,
            log_mag: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
            true_labels: None,
            magnitude_weights: None,
            c_post: None,
            combined: None,
        };
        let mut seen = std::collections::BTreeSet::new();
        let mut offset = 0;
        for field in &header.fields {
            if field.shape != [shard.frames, shard.freqs] {
                return Err(ShardError::Invalid(format!("field {} has shape {:?}", field.name, field.shape)));
            }
            if !seen.insert(field.name.as_str()) {
                return Err(ShardError::Invalid(format!("duplicate field {}", field.name)));
            }
            let bytes = &payload[offset..offset + field.dtype.width() * n];
            offset += bytes.len();
            let floats = || -> Vec<f32> { bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect() };
            match (field.name.as_str(), field.dtype) {
                ("log_mag", Dtype::F32) => shard.log_mag = floats(),
                ("labels", Dtype::U8) => shard.labels = bytes.to_vec(),
                ("weights", Dtype::F32) => shard.weights = floats(),
                ("true_labels", Dtype::U8) => shard.true_labels = Some(bytes.to_vec()),
                ("magnitude_weights", Dtype::F32) => shard.magnitude_weights = Some(floats()),
                ("c_post", Dtype::F32) => shard.c_post = Some(floats()),
                ("combined", Dtype::F32) => shard.combined = Some(floats()),
                (name, dtype) => return Err(ShardError::Invalid(format!("unexpected field {name} ({dtype:?})"))),
            }
        }
        for required in ["log_mag", "labels", "weights"] {
            if !seen.contains(required) {
                return Err(ShardError::Invalid(format!("missing field {required}")));
            }
        }
        Ok(shard)
    }

    pub fn save(&self, path: &Path) -> Result<(), ShardError> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| ShardError::Container(ContainerError::Io(e)))
    }

    pub fn load(path: &Path) -> Result<Self, ShardError> {
        let bytes = std::fs::read(path).map_err(|e| ShardError::Container(ContainerError::Io(e)))?;
        Self::from_bytes(&bytes)
    }
}
