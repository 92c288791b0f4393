//! Per-mixture glue between the corpus generator, the spatial separator, the
//! embedding network and the metrics. The single-channel signal everywhere is
//! the mid downmix `(L + R) / 2` of the stereo mixture and of each stem.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcnet::{infer_spectrogram, network_input, DcError, EmbeddingNetwork, InferenceConfig, TrainingExample};
use crate::metrics::{si_sir_sar, MetricsError, SeparationScores};
use crate::mixgen::MixtureRecord;
use crate::pipeline::{oracle_labels, separate_spectrogram, PipelineError, SpatialConfig, SpatialSeparation};
use crate::separation::{apply_masks, magnitude_weights, make_weights, MaskSet, SeparationError};
use crate::signal::{stft, ComplexSpectrogram, SignalError, StftConfig, Waveform};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dc(#[from] DcError),
}

/// Which labels and weights a training example carries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelSource {
    /// True dominant-source labels with magnitude weights.
    GroundTruth,
    /// Spatial pseudo-labels with confidence-times-magnitude weights.
    Spatial { alpha: f64 },
}

#[derive(Debug, Clone)]
pub struct MixtureAnalysis {
    pub stereo: ComplexSpectrogram,
    pub mono: ComplexSpectrogram,
    /// Downmixed reference stems.
    pub references: Vec<Waveform>,
    pub true_labels: Array2<usize>,
    pub spatial: SpatialSeparation,
}

impl MixtureAnalysis {
    pub fn new(
        record: &MixtureRecord,
        stft_config: &StftConfig,
        spatial_config: &SpatialConfig,
        alpha: f64,
        seed: u64,
    ) -> Result<Self, ExperimentError> {
        let stereo = stft(&record.mixture, stft_config)?;
        let mono = stereo.downmix();
        let references: Vec<Waveform> = record.stems.iter().map(Waveform::downmix).collect();
        let stem_specs = references.iter().map(|r| stft(r, stft_config)).collect::<Result<Vec<_>, _>>()?;
        let true_labels = oracle_labels(&stem_specs, 0)?;
        let spatial = separate_spectrogram(&stereo, spatial_config, alpha, seed)?;
        Ok(Self { stereo, mono, references, true_labels, spatial })
    }

    pub fn score_masks(&self, masks: &MaskSet) -> Result<SeparationScores, ExperimentError> {
        let stems = apply_masks(&self.mono, masks, 0)?;
        let est: Vec<&[f64]> = stems.iter().map(|s| s.channel(0)).collect();
        let refs: Vec<&[f64]> = self.references.iter().map(|s| s.channel(0)).collect();
        Ok(si_sir_sar(&est, &refs)?)
    }

    pub fn spatial_scores(&self) -> Result<SeparationScores, ExperimentError> {
        self.score_masks(&self.spatial.masks)
    }

    /// Binary-mask separation of the downmix by the embedding network.
    pub fn dc_separation(&self, net: &EmbeddingNetwork, config: &InferenceConfig) -> Result<MaskSet, ExperimentError> {
        Ok(infer_spectrogram(net, &self.mono, self.references.len(), config)?.masks)
    }

    /// Per-bin weights for `source`, row-major `(t, f)`.
    pub fn weights(&self, source: LabelSource) -> Result<Array2<f64>, ExperimentError> {
        Ok(match source {
            LabelSource::GroundTruth => magnitude_weights(&self.mono, 0)?,
            LabelSource::Spatial { alpha } => {
                let c = self.spatial.confidence_with_alpha(alpha)?;
                make_weights(&c, &self.mono, 0)?
            }
        })
    }

    pub fn labels(&self, source: LabelSource) -> &Array2<usize> {
        match source {
            LabelSource::GroundTruth => &self.true_labels,
            LabelSource::Spatial { .. } => &self.spatial.labels,
        }
    }

    pub fn training_example(&self, source: LabelSource) -> Result<TrainingExample, ExperimentError> {
        let features = network_input(&self.mono, 0)?;
        let labels = self.labels(source).iter().copied().collect();
        let weights = self.weights(source)?.iter().copied().collect();
        Ok(TrainingExample::new(features, labels, weights)?)
    }
}
