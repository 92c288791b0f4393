use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::EmbeddingNetwork;
use super::DcError;
use crate::cluster::kmeans;
use crate::separation::{apply_masks, MaskSet};
use crate::signal::{stft, ComplexSpectrogram, StftConfig, Waveform};
use crate::spatial::log_mag_db;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self { restarts: 10, max_iter: 100, seed: 0 }
    }
}

/// Log-magnitude (dB) of one channel, standardised to zero mean and unit
/// variance over the whole utterance.
pub fn network_input(x: &ComplexSpectrogram, channel: usize) -> Result<Array2<f64>, DcError> {
    Ok(standardise(x.channel(channel)?.mapv(|v| log_mag_db(v.norm()))))
}

/// Zero-mean, unit-variance copy of a dB log-magnitude array.
pub fn standardise(db: Array2<f64>) -> Array2<f64> {
    let n = db.len() as f64;
    let mean = db.sum() / n;
    let var = db.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
    db.mapv(|v| (v - mean) / std)
}

#[derive(Debug, Clone)]
pub struct DcSeparation {
    pub labels: Array2<usize>,
    pub masks: MaskSet,
}

/// Embeds channel 0 of `x` and clusters the per-bin embeddings into
/// `n_sources` binary masks.
pub fn infer_spectrogram(
    net: &EmbeddingNetwork,
    x: &ComplexSpectrogram,
    n_sources: usize,
    config: &InferenceConfig,
) -> Result<DcSeparation, DcError> {
    if !net.trained {
        return Err(DcError::Untrained);
    }
    if n_sources < 2 {
        return Err(DcError::TooFewSources(n_sources));
    }
    let input = network_input(x, 0)?;
    let v = net.forward(input.view())?;
    let clusters = kmeans(v.v.view(), n_sources, config.restarts, config.max_iter, config.seed);
    let labels = Array2::from_shape_vec((x.num_frames(), x.num_freqs()), clusters.labels).expect("one label per bin");
    let masks = MaskSet::from_labels(labels.view(), n_sources);
    Ok(DcSeparation { labels, masks })
}

/// Separates a mono waveform into `n_sources` stems.
pub fn infer(
    net: &EmbeddingNetwork,
    mono: &Waveform,
    stft_config: &StftConfig,
    n_sources: usize,
    config: &InferenceConfig,
) -> Result<Vec<Waveform>, DcError> {
    if mono.num_channels() != 1 {
        return Err(DcError::ShapeMismatch(format!("expected a mono waveform, got {} channels", mono.num_channels())));
    }
    let x = stft(mono, stft_config)?;
    let sep = infer_spectrogram(net, &x, n_sources, config)?;
    Ok(apply_masks(&x, &sep.masks, 0)?)
}
