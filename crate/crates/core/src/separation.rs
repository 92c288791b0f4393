//! Masks, stems, pseudo-labels and training weights from mixture posteriors.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use thiserror::Error;

use crate::confidence::ConfidenceMap;
use crate::signal::{istft, ComplexSpectrogram, SignalError, Waveform};

#[derive(Debug, Error)]
pub enum SeparationError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spectrogram channel has zero total magnitude")]
    SilentMixture,
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// One soft mask per component over the `T x F` grid, indexed `[j, t, f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: Array3<f64>,
}

impl MaskSet {
    pub fn n_sources(&self) -> usize {
        self.masks.dim().0
    }

    pub fn mask(&self, j: usize) -> ArrayView2<'_, f64> {
        self.masks.index_axis(Axis(0), j)
    }

    /// Binary masks from per-bin labels.
    pub fn from_labels(labels: ArrayView2<'_, usize>, n_sources: usize) -> Self {
        let (t, f) = labels.dim();
        let mut masks = Array3::zeros((n_sources, t, f));
        for ((ti, fi), &l) in labels.indexed_iter() {
            masks[[l, ti, fi]] = 1.0;
        }
        Self { masks }
    }
}

/// Scatters posterior rows (one per bin, row-major `(t, f)` order) back onto
/// the `frames x freqs` grid.
pub fn make_masks(posteriors: ArrayView2<'_, f64>, frames: usize, freqs: usize) -> Result<MaskSet, SeparationError> {
    let (m, n) = posteriors.dim();
    if m != frames * freqs {
        return Err(SeparationError::ShapeMismatch(format!("{m} posterior rows for a {frames}x{freqs} grid")));
    }
    let mut masks = Array3::zeros((n, frames, freqs));
    for (i, row) in posteriors.rows().into_iter().enumerate() {
        let (t, f) = (i / freqs, i % freqs);
        for (j, v) in row.iter().enumerate() {
            masks[[j, t, f]] = *v;
        }
    }
    Ok(MaskSet { masks })
}

/// `istft(mask_j * X[channel])` for every mask.
pub fn apply_masks(x: &ComplexSpectrogram, m: &MaskSet, channel: usize) -> Result<Vec<Waveform>, SeparationError> {
    let grid = (x.num_frames(), x.num_freqs());
    if (m.masks.dim().1, m.masks.dim().2) != grid {
        return Err(SeparationError::ShapeMismatch(format!("masks {:?} vs spectrogram {grid:?}", m.masks.dim())));
    }
    (0..m.n_sources())
        .map(|j| Ok(istft(&x.masked_channel(channel, m.mask(j))?)?))
        .collect()
}

/// Per-bin argmax over masks, ties to the lowest index.
pub fn make_pseudo_labels(m: &MaskSet) -> Array2<usize> {
    let (n, t, f) = m.masks.dim();
    Array2::from_shape_fn((t, f), |(ti, fi)| {
        let mut best = 0;
        for j in 1..n {
            if m.masks[[j, ti, fi]] > m.masks[[best, ti, fi]] {
                best = j;
            }
        }
        best
    })
}

/// Same-source affinity over flattened bins: `Y[i, k] = 1` iff labels agree.
/// Quadratic in the number of bins; meant for small grids.
pub fn label_affinity(labels: ArrayView2<'_, usize>) -> Array2<u8> {
    let flat: Vec<usize> = labels.iter().copied().collect();
    Array2::from_shape_fn((flat.len(), flat.len()), |(i, k)| u8::from(flat[i] == flat[k]))
}

/// `|X| / sum |X|` for one channel.
pub fn magnitude_weights(x: &ComplexSpectrogram, channel: usize) -> Result<Array2<f64>, SeparationError> {
    let mag = x.magnitude(channel)?;
    let total: f64 = mag.sum();
    if !(total > 0.0) {
        return Err(SeparationError::SilentMixture);
    }
    Ok(mag / total)
}

/// `w = C(alpha) * |X| / sum |X|`.
pub fn make_weights(c: &ConfidenceMap, x: &ComplexSpectrogram, channel: usize) -> Result<Array2<f64>, SeparationError> {
    let mag = magnitude_weights(x, channel)?;
    if mag.dim() != c.combined.dim() {
        return Err(SeparationError::ShapeMismatch(format!(
            "confidence {:?} vs spectrogram {:?}",
            c.combined.dim(),
            mag.dim()
        )));
    }
    Ok(&c.combined * &mag)
}

/// Pseudo-labels with their per-bin training weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceWeightedLabels {
    pub labels: Array2<usize>,
    pub weights: Array2<f64>,
    pub alpha: f64,
}
