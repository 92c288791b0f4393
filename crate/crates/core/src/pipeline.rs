//! End-to-end stereo spatial separation: features, mixture fits, confidence,
//! masks and pseudo-labels for one mixture.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{
    clustering_fit_jsd, cluster_size_equality, combine, posterior_confidence, ConfidenceError, ConfidenceMap,
    JsdEstimate, DEFAULT_JSD_SAMPLES,
};
use crate::gmm::{fit_em, EmConfig, EmTrace, GmmError, GmmModel};
use crate::rng::{derive_seed, stream_id};
use crate::separation::{apply_masks, make_masks, make_pseudo_labels, MaskSet, SeparationError};
use crate::signal::{ComplexSpectrogram, Waveform};
use crate::spatial::{extract_features, PcaProjector, SpatialError, SpatialFeatureMap, DEFAULT_TAU_DB};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    pub tau_db: f64,
    pub n_components: usize,
    pub jsd_samples: usize,
    pub em: EmConfig,
}

/// Variance floor of the one-dimensional spatial mixture fit.
pub const SPATIAL_COV_FLOOR: f64 = 1e-3;

impl Default for SpatialConfig {
    fn default() -> Self {
        Self {
            tau_db: DEFAULT_TAU_DB,
            n_components: 2,
            jsd_samples: DEFAULT_JSD_SAMPLES,
            em: EmConfig { cov_floor: SPATIAL_COV_FLOOR, ..EmConfig::default() },
        }
    }
}

/// Everything the spatial algorithm produces for one mixture.
#[derive(Debug, Clone)]
pub struct SpatialSeparation {
    pub features: SpatialFeatureMap,
    /// `None` when the active features had no spread.
    pub projector: Option<PcaProjector>,
    /// `None` when there were fewer active bins than components.
    pub model: Option<GmmModel>,
    pub single: Option<GmmModel>,
    pub trace: Option<EmTrace>,
    /// One row per bin in row-major `(t, f)` order.
    pub posteriors: Array2<f64>,
    pub masks: MaskSet,
    pub labels: Array2<usize>,
    pub jsd: JsdEstimate,
    pub confidence: ConfidenceMap,
}

impl SpatialSeparation {
    /// Soft-mask stems of `x[channel]`.
    pub fn stems(&self, x: &ComplexSpectrogram, channel: usize) -> Result<Vec<Waveform>, PipelineError> {
        Ok(apply_masks(x, &self.masks, channel)?)
    }

    pub fn confidence_with_alpha(&self, alpha: f64) -> Result<ConfidenceMap, PipelineError> {
        Ok(self.confidence.with_alpha(alpha, self.features.active_mask.view())?)
    }
}

/// Runs the spatial algorithm on a stereo spectrogram. All randomness is
/// derived from `seed`.
pub fn separate_spectrogram(
    x: &ComplexSpectrogram,
    config: &SpatialConfig,
    alpha: f64,
    seed: u64,
) -> Result<SpatialSeparation, PipelineError> {
    let n = config.n_components;
    let (frames, freqs) = (x.num_frames(), x.num_freqs());
    let (features, projector) = extract_features(x, config.tau_db)?;
    let all_phi = features.phi.to_shape((frames * freqs, 1)).expect("contiguous").to_owned();
    let active_phi = features.active_phi();
    let active = Array2::from_shape_vec((active_phi.len(), 1), active_phi).expect("column");

    let em = EmConfig { seed: derive_seed(derive_seed(seed, stream_id("em")), config.em.seed), ..config.em };
    let fitted = if active.nrows() >= n.max(1) {
        let (model, trace) = fit_em(active.view(), n, &em)?;
        let (single, _) = fit_em(active.view(), 1, &em)?;
        Some((model, trace, single))
    } else {
        None
    };

    let (posteriors, c_cl, jsd, model, trace, single) = match fitted {
        Some((model, trace, single)) => {
            let posteriors = model.posteriors(all_phi.view())?;
            let active_post = model.posteriors(active.view())?;
            let c_cl = cluster_size_equality(active_post.view())?;
            let jsd = clustering_fit_jsd(&single, &model, config.jsd_samples, derive_seed(seed, stream_id("jsd")))?;
            (posteriors, c_cl, jsd, Some(model), Some(trace), Some(single))
        }
        None => {
            let flat = Array2::from_elem((frames * freqs, n), 1.0 / n as f64);
            (flat, 0.0, JsdEstimate { value: 0.0, raw: 0.0, std_error: 0.0 }, None, None, None)
        }
    };

    let c_post = posterior_confidence(posteriors.view())
        .into_shape_with_order((frames, freqs))
        .expect("grid");
    let confidence = combine(c_cl, jsd.value, c_post.view(), alpha, features.active_mask.view())?;
    let masks = make_masks(posteriors.view(), frames, freqs)?;
    let labels = make_pseudo_labels(&masks);
    Ok(SpatialSeparation { features, projector, model, single, trace, posteriors, masks, labels, jsd, confidence })
}

/// Ground-truth labels: per bin, the source whose channel spectrogram has the
/// largest magnitude (ties to the lowest index).
pub fn oracle_labels(stems: &[ComplexSpectrogram], channel: usize) -> Result<Array2<usize>, PipelineError> {
    let mags: Vec<Array2<f64>> = stems
        .iter()
        .map(|s| s.magnitude(channel).map_err(|e| PipelineError::Separation(e.into())))
        .collect::<Result<_, _>>()?;
    let stacked = ndarray::stack(Axis(0), &mags.iter().map(|m| m.view()).collect::<Vec<_>>())
        .map_err(|e| PipelineError::Separation(SeparationError::ShapeMismatch(e.to_string())))?;
    Ok(make_pseudo_labels(&MaskSet { masks: stacked }))
}
