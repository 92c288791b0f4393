//! Per-mixture choice between spatial and deep-clustering separations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_for};
use rand::Rng;

#[derive(Debug, Error, PartialEq)]
pub enum EnsembleError {
    #[error("need at least 4 validation confidences to calibrate, got {0}")]
    TooFewValues(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("oracle selection needs SI-SDR scores for both candidates")]
    MissingScores,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Confidence,
    Oracle,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsemblePolicy {
    pub kind: PolicyKind,
    #[serde(default)]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

impl EnsemblePolicy {
    pub fn confidence(threshold: f64) -> Self {
        Self { kind: PolicyKind::Confidence, threshold, seed: 0 }
    }

    pub fn oracle() -> Self {
        Self { kind: PolicyKind::Oracle, threshold: 0.0, seed: 0 }
    }

    pub fn random(seed: u64) -> Self {
        Self { kind: PolicyKind::Random, threshold: 0.0, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Spatial,
    Dc,
}

impl Choice {
    pub fn tag(self) -> &'static str {
        match self {
            Choice::Spatial => "spatial",
            Choice::Dc => "dc",
        }
    }
}

/// What the selector sees for one mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Position in the corpus; keys the random policy's coin.
    pub index: u64,
    pub mean_confidence: f64,
    /// `(spatial, dc)` SI-SDR, required by the oracle policy only.
    pub true_scores: Option<(f64, f64)>,
}

/// 25th percentile with linear interpolation between order statistics.
pub fn calibrate_threshold(values: &[f64]) -> Result<f64, EnsembleError> {
    if values.len() < 4 {
        return Err(EnsembleError::TooFewValues(values.len()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EnsembleError::NonFinite("validation confidences"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = 0.25 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

pub fn select(policy: &EnsemblePolicy, candidate: &Candidate) -> Result<Choice, EnsembleError> {
    match policy.kind {
        PolicyKind::Confidence => {
            if !policy.threshold.is_finite() {
                return Err(EnsembleError::NonFinite("threshold"));
            }
            Ok(if candidate.mean_confidence > policy.threshold { Choice::Spatial } else { Choice::Dc })
        }
        PolicyKind::Oracle => {
            let (spatial, dc) = candidate.true_scores.ok_or(EnsembleError::MissingScores)?;
            Ok(if spatial >= dc { Choice::Spatial } else { Choice::Dc })
        }
        PolicyKind::Random => {
            let mut rng = rng_for(derive_seed(policy.seed, candidate.index), 0);
            Ok(if rng.random_bool(0.5) { Choice::Spatial } else { Choice::Dc })
        }
    }
}

/// Applies [`select`] and hands back the chosen candidate's stems with the tag.
pub fn select_stems<'a, T: ?Sized>(
    policy: &EnsemblePolicy,
    candidate: &Candidate,
    spatial: &'a T,
    dc: &'a T,
) -> Result<(&'a T, Choice), EnsembleError> {
    let choice = select(policy, candidate)?;
    Ok(match choice {
        Choice::Spatial => (spatial, choice),
        Choice::Dc => (dc, choice),
    })
}
