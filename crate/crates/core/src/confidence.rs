//! Confidence in a spatial clustering: cluster-size balance, clustering fit
//! (Jensen-Shannon divergence between a one-component and an N-component
//! mixture), per-bin posterior sharpness, and their product raised to `alpha`.

use std::f64::consts::LN_2;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gmm::{GmmError, GmmModel};
use crate::rng::derive_seed;

pub const DEFAULT_JSD_SAMPLES: usize = 10_000;

#[derive(Debug, Error)]
pub enum ConfidenceError {
    #[error("posterior matrix is empty")]
    Empty,
    #[error("models disagree on dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("need at least one Monte-Carlo sample")]
    NoSamples,
    #[error("alpha must be non-negative and finite, got {0}")]
    InvalidAlpha(f64),
    #[error("confidence inputs must lie in [0, 1]: {0}")]
    OutOfRange(&'static str),
    #[error("shape mismatch between confidence map and active mask")]
    ShapeMismatch,
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

/// Hard assignment to the most probable component, ties to the lowest index.
pub fn hard_assign(posteriors: ArrayView2<'_, f64>) -> Vec<usize> {
    posteriors
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// `sum_j (1/N - |1/N - f_j|)` where `f_j` is the fraction of points
/// hard-assigned to component `j`.
pub fn cluster_size_equality(posteriors: ArrayView2<'_, f64>) -> Result<f64, ConfidenceError> {
    let (m, n) = posteriors.dim();
    if m == 0 || n == 0 {
        return Err(ConfidenceError::Empty);
    }
    let mut counts = vec![0usize; n];
    for j in hard_assign(posteriors) {
        counts[j] += 1;
    }
    let share = 1.0 / n as f64;
    Ok(counts.iter().map(|&c| share - (share - c as f64 / m as f64).abs()).sum::<f64>().clamp(0.0, 1.0))
}

/// Monte-Carlo JSD estimate in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsdEstimate {
    /// Clamped to `[0, 1]`.
    pub value: f64,
    /// Unclamped plug-in estimate.
    pub raw: f64,
    pub std_error: f64,
}

/// Mean and unbiased variance.
fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var)
}

/// `log2 own(x) - log2 mid(x)` for draws `x` of the `own` model, with
/// `mid = (own + other) / 2`.
fn kl_terms(own: &GmmModel, other: &GmmModel, n: usize, seed: u64) -> Result<Vec<f64>, ConfidenceError> {
    let draws = own.sample(n, seed)?;
    let lp = own.log_density(draws.view())?;
    let lq = other.log_density(draws.view())?;
    Ok(lp
        .iter()
        .zip(lq.iter())
        .map(|(&a, &b)| {
            let hi = a.max(b);
            let log_mid = hi + ((a - hi).exp() + (b - hi).exp()).ln() - LN_2;
            (a - log_mid) / LN_2
        })
        .collect())
}

/// `JSD(P || Q) = KL(P || M)/2 + KL(Q || M)/2`, `M = (P + Q)/2`, in base 2.
///
/// Each KL term is the sample mean over `n_samples` draws from its own model;
/// the two terms use independent streams derived from `seed`.
pub fn clustering_fit_jsd(
    p_single: &GmmModel,
    q_multi: &GmmModel,
    n_samples: usize,
    seed: u64,
) -> Result<JsdEstimate, ConfidenceError> {
    if p_single.dimension() != q_multi.dimension() {
        return Err(ConfidenceError::DimensionMismatch(p_single.dimension(), q_multi.dimension()));
    }
    if n_samples == 0 {
        return Err(ConfidenceError::NoSamples);
    }
    let a = kl_terms(p_single, q_multi, n_samples, derive_seed(seed, 1))?;
    let b = kl_terms(q_multi, p_single, n_samples, derive_seed(seed, 2))?;
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let raw = 0.5 * ma + 0.5 * mb;
    let n = n_samples as f64;
    let std_error = (0.25 * va / n + 0.25 * vb / n).sqrt();
    Ok(JsdEstimate { value: raw.clamp(0.0, 1.0), raw, std_error })
}

/// `2 |max_j gamma_j - 1/2|` per point, clamped to `[0, 1]`.
pub fn posterior_confidence(posteriors: ArrayView2<'_, f64>) -> Array1<f64> {
    posteriors
        .rows()
        .into_iter()
        .map(|row| {
            let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (2.0 * (top - 0.5).abs()).clamp(0.0, 1.0)
        })
        .collect()
}

/// Combined per-bin confidence and its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub c_cluster: f64,
    pub c_jsd: f64,
    pub c_post: Array2<f64>,
    pub alpha: f64,
    pub combined: Array2<f64>,
    /// Mean of `combined` over active bins (0 when none are active).
    pub mean_confidence: f64,
}

/// Summary written alongside separated stems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub c_cluster: f64,
    pub c_jsd: f64,
    pub alpha: f64,
    pub mean_confidence: f64,
    pub mean_c_post: f64,
}

impl ConfidenceMap {
    pub fn summary(&self) -> ConfidenceSummary {
        ConfidenceSummary {
            c_cluster: self.c_cluster,
            c_jsd: self.c_jsd,
            alpha: self.alpha,
            mean_confidence: self.mean_confidence,
            mean_c_post: self.c_post.mean().unwrap_or(0.0),
        }
    }

    /// Recomputes the combined map for another exponent.
    pub fn with_alpha(&self, alpha: f64, active_mask: ArrayView2<'_, bool>) -> Result<Self, ConfidenceError> {
        combine(self.c_cluster, self.c_jsd, self.c_post.view(), alpha, active_mask)
    }
}

/// `(c_cl * c_jsd * c_post)^alpha` elementwise.
pub fn combine(
    c_cl: f64,
    c_jsd: f64,
    c_post: ArrayView2<'_, f64>,
    alpha: f64,
    active_mask: ArrayView2<'_, bool>,
) -> Result<ConfidenceMap, ConfidenceError> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(ConfidenceError::InvalidAlpha(alpha));
    }
    let unit = |v: f64| (0.0..=1.0).contains(&v);
    if !unit(c_cl) {
        return Err(ConfidenceError::OutOfRange("c_cluster"));
    }
    if !unit(c_jsd) {
        return Err(ConfidenceError::OutOfRange("c_jsd"));
    }
    if c_post.iter().any(|v| !unit(*v)) {
        return Err(ConfidenceError::OutOfRange("c_post"));
    }
    if c_post.dim() != active_mask.dim() {
        return Err(ConfidenceError::ShapeMismatch);
    }
    let global = c_cl * c_jsd;
    let combined = c_post.mapv(|p| if alpha == 0.0 { 1.0 } else { (global * p).powf(alpha) });
    let (sum, count) = Zip::from(&combined)
        .and(&active_mask)
        .fold((0.0, 0usize), |(s, n), &c, &a| if a { (s + c, n + 1) } else { (s, n) });
    let mean_confidence = if count > 0 { sum / count as f64 } else { 0.0 };
    Ok(ConfidenceMap { c_cluster: c_cl, c_jsd, c_post: c_post.to_owned(), alpha, combined, mean_confidence })
}
