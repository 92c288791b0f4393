//! Inter-channel spatial features and their one-dimensional PCA projection.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::ComplexSpectrogram;

/// Default activity threshold on the log magnitude, in dB.
pub const DEFAULT_TAU_DB: f64 = -10.0;

/// Magnitudes are clamped to this before taking the log (a -120 dB floor).
pub const MAGNITUDE_FLOOR: f64 = 1e-6;

const DEGENERATE_VARIANCE: f64 = 1e-20;

#[derive(Debug, Error)]
pub enum SpatialError {
    #[error("expected a 2-channel spectrogram, got {0} channels")]
    ChannelCount(usize),
    #[error("channel {channel} out of range for {channels}-channel spectrogram")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("PCA needs at least 2 active bins, got {0}")]
    TooFewActiveBins(usize),
    #[error("active spatial features have zero variance")]
    DegenerateFeatures,
    #[error("feature maps have mismatched shapes")]
    ShapeMismatch,
}

/// Per-bin spatial features of a stereo spectrogram.
#[derive(Debug, Clone)]
pub struct SpatialFeatureMap {
    pub ipd: Array2<f64>,
    pub log_mag: Array2<f64>,
    pub cos_ipd: Array2<f64>,
    pub sin_ipd: Array2<f64>,
    pub phi: Array2<f64>,
    pub active_mask: Array2<bool>,
}

impl SpatialFeatureMap {
    pub fn num_active(&self) -> usize {
        self.active_mask.iter().filter(|a| **a).count()
    }

    /// `phi` of the active bins in row-major `(t, f)` order.
    pub fn active_phi(&self) -> Vec<f64> {
        self.phi.iter().zip(self.active_mask.iter()).filter(|(_, a)| **a).map(|(p, _)| *p).collect()
    }
}

/// Mean and principal direction of the `(cosIPD, sinIPD)` cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaProjector {
    pub mean: [f64; 2],
    pub direction: [f64; 2],
    /// Variance along `direction` over the fitting set.
    pub variance: f64,
}

impl PcaProjector {
    /// `phi = (feature - mean) . direction` for every bin.
    pub fn project(&self, cos_ipd: ArrayView2<'_, f64>, sin_ipd: ArrayView2<'_, f64>) -> Result<Array2<f64>, SpatialError> {
        if cos_ipd.dim() != sin_ipd.dim() {
            return Err(SpatialError::ShapeMismatch);
        }
        let mut phi = Array2::zeros(cos_ipd.dim());
        Zip::from(&mut phi).and(&cos_ipd).and(&sin_ipd).for_each(|p, &c, &s| {
            *p = (c - self.mean[0]) * self.direction[0] + (s - self.mean[1]) * self.direction[1];
        });
        Ok(phi)
    }

    /// Projector used when the features carry no spatial information: the
    /// mean of the active features and the first axis.
    pub fn uninformative(mean: [f64; 2]) -> Self {
        Self { mean, direction: [1.0, 0.0], variance: 0.0 }
    }
}

/// Wrap to `(-pi, pi]`.
fn wrap_half_open(theta: f64) -> f64 {
    if theta <= -PI {
        theta + 2.0 * PI
    } else {
        theta
    }
}

/// `angle(X0 * conj(X1))` per bin; zero where either channel is exactly zero.
pub fn compute_ipd(x: &ComplexSpectrogram) -> Result<Array2<f64>, SpatialError> {
    if x.num_channels() != 2 {
        return Err(SpatialError::ChannelCount(x.num_channels()));
    }
    let left = x.channel(0).expect("checked");
    let right = x.channel(1).expect("checked");
    let mut ipd = Array2::zeros(left.dim());
    Zip::from(&mut ipd).and(&left).and(&right).for_each(|out, &a, &b| {
        let zero = |v: num_complex::Complex64| v.re == 0.0 && v.im == 0.0;
        *out = if zero(a) || zero(b) { 0.0 } else { wrap_half_open((a * b.conj()).arg()) };
    });
    Ok(ipd)
}

/// `20 log10 |X|` of one channel with the magnitude floored at [`MAGNITUDE_FLOOR`].
pub fn compute_log_mag(x: &ComplexSpectrogram, channel: usize) -> Result<Array2<f64>, SpatialError> {
    let ch = x
        .channel(channel)
        .map_err(|_| SpatialError::ChannelOutOfRange { channel, channels: x.num_channels() })?;
    Ok(ch.mapv(|v| log_mag_db(v.norm())))
}

pub fn log_mag_db(magnitude: f64) -> f64 {
    20.0 * magnitude.max(MAGNITUDE_FLOOR).log10()
}

/// Bins whose log magnitude strictly exceeds `tau_db`.
pub fn active_bins(log_mag: ArrayView2<'_, f64>, tau_db: f64) -> Array2<bool> {
    log_mag.mapv(|v| v > tau_db)
}

/// Fits the principal axis of `(cos_ipd, sin_ipd)` over the active bins.
///
/// The direction is normalised and its sign fixed so that the first nonzero
/// component is positive.
pub fn fit_pca(
    cos_ipd: ArrayView2<'_, f64>,
    sin_ipd: ArrayView2<'_, f64>,
    active_mask: ArrayView2<'_, bool>,
) -> Result<PcaProjector, SpatialError> {
    if cos_ipd.dim() != sin_ipd.dim() || cos_ipd.dim() != active_mask.dim() {
        return Err(SpatialError::ShapeMismatch);
    }
    let points: Vec<(f64, f64)> = Zip::from(&cos_ipd)
        .and(&sin_ipd)
        .and(&active_mask)
        .fold(Vec::new(), |mut acc, &c, &s, &a| {
            if a {
                acc.push((c, s));
            }
            acc
        });
    if points.len() < 2 {
        return Err(SpatialError::TooFewActiveBins(points.len()));
    }
    let m = points.len() as f64;
    let mean = [points.iter().map(|p| p.0).sum::<f64>() / m, points.iter().map(|p| p.1).sum::<f64>() / m];
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(c, s) in &points {
        let (dx, dy) = (c - mean[0], s - mean[1]);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (a, b, c) = (sxx / m, sxy / m, syy / m);
    let (top, direction) = principal_axis(a, b, c);
    if top <= DEGENERATE_VARIANCE {
        return Err(SpatialError::DegenerateFeatures);
    }
    Ok(PcaProjector { mean, direction, variance: top })
}

/// Largest eigenpair of the symmetric matrix `[[a, b], [b, c]]`.
fn principal_axis(a: f64, b: f64, c: f64) -> (f64, [f64; 2]) {
    let half_trace = 0.5 * (a + c);
    let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let top = half_trace + radius;
    let raw = if b == 0.0 {
        if a >= c {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        }
    } else if a >= c {
        [top - c, b]
    } else {
        [b, top - a]
    };
    let norm = raw[0].hypot(raw[1]);
    let mut dir = [raw[0] / norm, raw[1] / norm];
    let first = if dir[0] != 0.0 { dir[0] } else { dir[1] };
    if first < 0.0 {
        dir = [-dir[0], -dir[1]];
    }
    (top, dir)
}

/// Full feature extraction. PCA is fit on bins above `tau_db` and applied to
/// every bin; when the active features have no spread (or there are fewer than
/// two of them) an uninformative projector is used and `phi` is constant.
pub fn extract_features(x: &ComplexSpectrogram, tau_db: f64) -> Result<(SpatialFeatureMap, Option<PcaProjector>), SpatialError> {
    let ipd = compute_ipd(x)?;
    let log_mag = compute_log_mag(x, 0)?;
    let cos_ipd = ipd.mapv(f64::cos);
    let sin_ipd = ipd.mapv(f64::sin);
    let active_mask = active_bins(log_mag.view(), tau_db);
    let fitted = match fit_pca(cos_ipd.view(), sin_ipd.view(), active_mask.view()) {
        Ok(p) => Some(p),
        Err(SpatialError::DegenerateFeatures | SpatialError::TooFewActiveBins(_)) => None,
        Err(e) => return Err(e),
    };
    let projector = fitted.unwrap_or_else(|| {
        let active: Vec<(f64, f64)> = cos_ipd
            .iter()
            .zip(sin_ipd.iter())
            .zip(active_mask.iter())
            .filter(|(_, a)| **a)
            .map(|(p, _)| (*p.0, *p.1))
            .collect();
        let mean = if active.is_empty() {
            [0.0, 0.0]
        } else {
            let n = active.len() as f64;
            [active.iter().map(|p| p.0).sum::<f64>() / n, active.iter().map(|p| p.1).sum::<f64>() / n]
        };
        PcaProjector::uninformative(mean)
    });
    let phi = projector.project(cos_ipd.view(), sin_ipd.view())?;
    Ok((SpatialFeatureMap { ipd, log_mag, cos_ipd, sin_ipd, phi, active_mask }, fitted))
}
