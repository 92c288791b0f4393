//! Header-plus-blob binary container shared by checkpoints and dataset
//! shards: a little-endian `u64` header length, that many bytes of UTF-8
//! JSON, then the raw payload.

use std::fs;
use std::io;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("file too short for its declared header ({declared} bytes declared, {available} available)")]
    Truncated { declared: u64, available: usize },
    #[error("invalid header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("payload is {got} bytes, header implies {expected}")]
    PayloadSize { expected: usize, got: usize },
}

pub fn encode<H: Serialize>(header: &H, payload: &[u8]) -> Result<Vec<u8>, ContainerError> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, &[u8]), ContainerError> {
    if bytes.len() < 8 {
        return Err(ContainerError::Truncated { declared: 8, available: bytes.len() });
    }
    let declared = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
    let rest = &bytes[8..];
    if declared > rest.len() as u64 {
        return Err(ContainerError::Truncated { declared, available: rest.len() });
    }
    let (json, payload) = rest.split_at(declared as usize);
    Ok((serde_json::from_slice(json)?, payload))
}

pub fn write_file<H: Serialize>(path: impl AsRef<Path>, header: &H, payload: &[u8]) -> Result<(), ContainerError> {
    fs::write(path, encode(header, payload)?)?;
    Ok(())
}

pub fn f32_bytes(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    values.into_iter().flat_map(|v| (v as f32).to_le_bytes()).collect()
}

pub fn read_f32(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect()
}
