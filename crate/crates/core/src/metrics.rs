//! Separation and label-quality metrics.
//!
//! SI-SDR and its scale-invariant SIR/SAR decomposition (no mean removal,
//! capped at +/-100 dB), the chi-squared partition agreement used for label
//! quality, the effective-quantity ratio, and Pearson correlation reporting.

use itertools::Itertools;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub const DB_CAP: f64 = 100.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("signal lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference signal is all zeros")]
    ZeroReference,
    #[error("expected {expected} estimates, got {got}")]
    SourceCountMismatch { expected: usize, got: usize },
    #[error("reference set is rank deficient")]
    RankDeficient,
    #[error("weights must be non-negative and not all zero")]
    InvalidWeights,
    #[error("label {label} out of range for {k} clusters")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("correlation undefined: {0}")]
    DegenerateCorrelation(&'static str),
    #[error("empty input")]
    Empty,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `10 log10(num / den)` clamped to `[-DB_CAP, DB_CAP]`.
pub fn capped_db(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        return if num > 0.0 { DB_CAP } else { -DB_CAP };
    }
    if num <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

/// Scale-invariant SDR in dB.
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64, MetricsError> {
    if estimate.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(estimate.len(), reference.len()));
    }
    let rr = dot(reference, reference);
    if rr <= 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    let scale = dot(estimate, reference) / rr;
    let target_energy = scale * scale * rr;
    let residual: f64 = estimate.iter().zip(reference).map(|(e, r)| (e - scale * r).powi(2)).sum();
    Ok(capped_db(target_energy, residual))
}

/// Scores of each estimate against its assigned reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationScores {
    pub si_sdr: Vec<f64>,
    pub si_sir: Vec<f64>,
    pub si_sar: Vec<f64>,
    /// `permutation[i]` is the reference matched to estimate `i`.
    pub permutation: Vec<usize>,
}

impl SeparationScores {
    pub fn mean_si_sdr(&self) -> f64 {
        self.si_sdr.iter().sum::<f64>() / self.si_sdr.len() as f64
    }

    pub fn mean_si_sir(&self) -> f64 {
        self.si_sir.iter().sum::<f64>() / self.si_sir.len() as f64
    }

    pub fn mean_si_sar(&self) -> f64 {
        self.si_sar.iter().sum::<f64>() / self.si_sar.len() as f64
    }
}

/// Solves the symmetric positive definite system `G c = b` by Cholesky.
fn spd_solve(gram: &[f64], n: usize, rhs: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    let scale = (0..n).map(|i| gram[i * n + i]).fold(0.0, f64::max);
    for i in 0..n {
        for j in 0..=i {
            let mut s = gram[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 1e-12 * scale {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (rhs[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    Some(x)
}

struct Decomposition {
    sdr: f64,
    sir: f64,
    sar: f64,
}

/// `e = s_target + e_interf + e_artif` with `s_target` the projection on the
/// matched reference and `s_target + e_interf` the projection on the span of
/// all references.
fn decompose(estimate: &[f64], refs: &[&[f64]], target: usize, gram: &[f64]) -> Decomposition {
    let n = refs.len();
    let r = refs[target];
    let rr = gram[target * n + target];
    let scale = dot(estimate, r) / rr;
    let rhs: Vec<f64> = refs.iter().map(|q| dot(estimate, q)).collect();
    let coeffs = spd_solve(gram, n, &rhs).expect("gram checked by caller");
    let mut target_energy = 0.0;
    let mut interf = 0.0;
    let mut artif = 0.0;
    let mut residual = 0.0;
    for (i, &e) in estimate.iter().enumerate() {
        let s = scale * r[i];
        let proj: f64 = refs.iter().zip(&coeffs).map(|(q, c)| c * q[i]).sum();
        target_energy += s * s;
        interf += (proj - s).powi(2);
        artif += (e - proj).powi(2);
        residual += (e - s).powi(2);
    }
    Decomposition {
        sdr: capped_db(target_energy, residual),
        sir: capped_db(target_energy, interf),
        sar: capped_db(target_energy, artif),
    }
}

/// SI-SDR/SIR/SAR under the permutation that maximises mean SI-SDR.
pub fn si_sir_sar(estimates: &[&[f64]], references: &[&[f64]]) -> Result<SeparationScores, MetricsError> {
    let n = references.len();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    if estimates.len() != n {
        return Err(MetricsError::SourceCountMismatch { expected: n, got: estimates.len() });
    }
    let len = references[0].len();
    for s in estimates.iter().chain(references) {
        if s.len() != len {
            return Err(MetricsError::LengthMismatch(s.len(), len));
        }
    }
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            gram[i * n + j] = dot(references[i], references[j]);
        }
        if gram[i * n + i] <= 0.0 {
            return Err(MetricsError::ZeroReference);
        }
    }
    if spd_solve(&gram, n, &vec![0.0; n]).is_none() {
        return Err(MetricsError::RankDeficient);
    }
    // pairwise table, then the best assignment
    let table: Vec<Vec<Decomposition>> =
        estimates.iter().map(|e| (0..n).map(|j| decompose(e, references, j, &gram)).collect()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in (0..n).permutations(n) {
        let score: f64 = perm.iter().enumerate().map(|(i, &j)| table[i][j].sdr).sum::<f64>() / n as f64;
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, perm));
        }
    }
    let (_, permutation) = best.expect("n >= 1");
    Ok(SeparationScores {
        si_sdr: permutation.iter().enumerate().map(|(i, &j)| table[i][j].sdr).collect(),
        si_sir: permutation.iter().enumerate().map(|(i, &j)| table[i][j].sir).collect(),
        si_sar: permutation.iter().enumerate().map(|(i, &j)| table[i][j].sar).collect(),
        permutation,
    })
}

/// `1 - d / (k + k' - 2)` where `d = k + k' - 2 sum_ab p_ab^2 / (p_a p_b)` is
/// the chi-squared distance between the weighted partitions, `k` and `k'`
/// counting clusters with positive weighted mass.
///
/// Labels must be below `k_true` / `k_est` respectively.
pub fn label_quality(
    y_true: &[usize],
    y_est: &[usize],
    weights: &[f64],
    k_true: usize,
    k_est: usize,
) -> Result<f64, MetricsError> {
    if y_true.len() != y_est.len() {
        return Err(MetricsError::LengthMismatch(y_true.len(), y_est.len()));
    }
    if weights.len() != y_true.len() {
        return Err(MetricsError::LengthMismatch(weights.len(), y_true.len()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(MetricsError::InvalidWeights);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(MetricsError::InvalidWeights);
    }
    let mut joint = vec![0.0; k_true * k_est];
    for ((&a, &b), &w) in y_true.iter().zip(y_est).zip(weights) {
        if a >= k_true {
            return Err(MetricsError::LabelOutOfRange { label: a, k: k_true });
        }
        if b >= k_est {
            return Err(MetricsError::LabelOutOfRange { label: b, k: k_est });
        }
        joint[a * k_est + b] += w / total;
    }
    let row: Vec<f64> = (0..k_true).map(|a| (0..k_est).map(|b| joint[a * k_est + b]).sum()).collect();
    let col: Vec<f64> = (0..k_est).map(|b| (0..k_true).map(|a| joint[a * k_est + b]).sum()).collect();
    let kt = row.iter().filter(|p| **p > 0.0).count() as f64;
    let ke = col.iter().filter(|p| **p > 0.0).count() as f64;
    let mut agreement = 0.0;
    for a in 0..k_true {
        for b in 0..k_est {
            let p = joint[a * k_est + b];
            if p > 0.0 {
                agreement += p * p / (row[a] * col[b]);
            }
        }
    }
    let span = kt + ke - 2.0;
    if span <= 0.0 {
        // both partitions are a single cluster
        return Ok(1.0);
    }
    let d = (kt + ke - 2.0 * agreement).max(0.0);
    Ok((1.0 - d / span).clamp(0.0, 1.0))
}

/// Weighted mean of per-mixture qualities, weighted by each mixture's summed
/// training weight.
pub fn dataset_quality(per_mixture: &[(f64, f64)]) -> Result<f64, MetricsError> {
    let total: f64 = per_mixture.iter().map(|(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(MetricsError::InvalidWeights);
    }
    Ok(per_mixture.iter().map(|(q, w)| q * w).sum::<f64>() / total)
}

/// `sum w(alpha) / sum w(0)` over a dataset of per-mixture weight maps.
pub fn quantity(weights_alpha: &[ArrayView2<'_, f64>], weights_zero: &[ArrayView2<'_, f64>]) -> Result<f64, MetricsError> {
    if weights_alpha.len() != weights_zero.len() {
        return Err(MetricsError::SourceCountMismatch { expected: weights_zero.len(), got: weights_alpha.len() });
    }
    let num: f64 = weights_alpha.iter().map(|w| w.sum()).sum();
    let den: f64 = weights_zero.iter().map(|w| w.sum()).sum();
    if !(den > 0.0) {
        return Err(MetricsError::InvalidWeights);
    }
    Ok(num / den)
}

/// Per-dataset label-quality/quantity summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelQualityReport {
    pub alpha: f64,
    pub quality: f64,
    pub quantity: f64,
    pub per_mixture: Vec<MixtureQuality>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureQuality {
    pub mixture_id: String,
    pub quality: f64,
    pub weight_sum: f64,
    pub magnitude_weight_sum: f64,
}

impl LabelQualityReport {
    pub fn from_mixtures(alpha: f64, per_mixture: Vec<MixtureQuality>) -> Result<Self, MetricsError> {
        if per_mixture.is_empty() {
            return Err(MetricsError::Empty);
        }
        let pairs: Vec<(f64, f64)> = per_mixture.iter().map(|m| (m.quality, m.weight_sum)).collect();
        let quality = dataset_quality(&pairs)?;
        let num: f64 = per_mixture.iter().map(|m| m.weight_sum).sum();
        let den: f64 = per_mixture.iter().map(|m| m.magnitude_weight_sum).sum();
        if !(den > 0.0) {
            return Err(MetricsError::InvalidWeights);
        }
        Ok(Self { alpha, quality, quantity: num / den, per_mixture })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value of the t-test on `r` with `n - 2` degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(MetricsError::DegenerateCorrelation("need at least 3 pairs"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 {
        return Err(MetricsError::DegenerateCorrelation("first variable is constant"));
    }
    if syy <= 0.0 {
        return Err(MetricsError::DegenerateCorrelation("second variable is constant"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p_value = if r.abs() >= 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.cdf(-t.abs())).min(1.0)
    };
    Ok(Correlation { r, p_value, n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSdrRow {
    pub mixture_id: String,
    pub mean_confidence: f64,
    pub log10_confidence: f64,
    pub si_sdr: f64,
}

/// Rows for a confidence-vs-SDR scatter plus the correlation between the
/// confidence (not its log) and SI-SDR. A degenerate correlation is reported
/// in `correlation_error` instead of failing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSdrReport {
    pub rows: Vec<ConfidenceSdrRow>,
    pub correlation: Option<Correlation>,
    pub correlation_error: Option<String>,
}

pub fn confidence_sdr_report(entries: &[(String, f64, f64)]) -> ConfidenceSdrReport {
    let rows: Vec<ConfidenceSdrRow> = entries
        .iter()
        .map(|(id, c, s)| ConfidenceSdrRow {
            mixture_id: id.clone(),
            mean_confidence: *c,
            log10_confidence: if *c > 0.0 { c.log10() } else { f64::NEG_INFINITY },
            si_sdr: *s,
        })
        .collect();
    let conf: Vec<f64> = entries.iter().map(|e| e.1).collect();
    let sdr: Vec<f64> = entries.iter().map(|e| e.2).collect();
    match pearson(&conf, &sdr) {
        Ok(c) => ConfidenceSdrReport { rows, correlation: Some(c), correlation_error: None },
        Err(e) => ConfidenceSdrReport { rows, correlation: None, correlation_error: Some(e.to_string()) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthogonal_pair(len: usize) -> (Vec<f64>, Vec<f64>) {
        // unit-norm, orthogonal
        let a: Vec<f64> = (0..len).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        let b: Vec<f64> = (0..len).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
        let na = dot(&a, &a).sqrt();
        let nb = dot(&b, &b).sqrt();
        (a.iter().map(|v| v / na).collect(), b.iter().map(|v| v / nb).collect())
    }

    #[test]
    fn si_sdr_cases() {
        let (r, n) = orthogonal_pair(8);
        let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert_eq!(si_sdr(&doubled, &r).unwrap(), DB_CAP);
        let noisy: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + 0.1 * b).collect();
        assert!((si_sdr(&noisy, &r).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(si_sdr(&n, &r).unwrap(), -DB_CAP);
        assert!(matches!(si_sdr(&r, &[0.0; 8]), Err(MetricsError::ZeroReference)));
        assert!(matches!(si_sdr(&r, &[1.0; 3]), Err(MetricsError::LengthMismatch(8, 3))));
        let neg: Vec<f64> = noisy.iter().map(|v| -3.0 * v).collect();
        assert!((si_sdr(&neg, &r).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn sir_sar_cases() {
        let (r1, r2) = orthogonal_pair(10);
        let exact = si_sir_sar(&[&r1, &r2], &[&r1, &r2]).unwrap();
        assert_eq!(exact.si_sir, vec![DB_CAP, DB_CAP]);
        assert_eq!(exact.si_sar, vec![DB_CAP, DB_CAP]);

        let leak: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a + 0.1 * b).collect();
        let s = si_sir_sar(&[&leak, &r2], &[&r1, &r2]).unwrap();
        assert!((s.si_sir[0] - 20.0).abs() < 1e-9);
        assert_eq!(s.si_sar[0], DB_CAP);
        assert_eq!(s.permutation, vec![0, 1]);

        let swapped = si_sir_sar(&[&r2, &leak], &[&r1, &r2]).unwrap();
        assert_eq!(swapped.permutation, vec![1, 0]);
        assert_eq!(swapped.si_sdr, vec![s.si_sdr[1], s.si_sdr[0]]);

        assert!(matches!(si_sir_sar(&[&r1, &r1], &[&r1, &r1]), Err(MetricsError::RankDeficient)));
    }

    #[test]
    fn label_quality_cases() {
        let y = [0, 1, 1, 0, 1];
        let w = [0.3, 0.1, 0.2, 0.25, 0.15];
        assert!((label_quality(&y, &y, &w, 2, 2).unwrap() - 1.0).abs() < 1e-12);
        let swapped: Vec<usize> = y.iter().map(|v| 1 - v).collect();
        assert!((label_quality(&y, &swapped, &w, 2, 2).unwrap() - 1.0).abs() < 1e-12);

        // product-form joint: p_ab = p_a p_b
        let a = [0, 0, 1, 1];
        let b = [0, 1, 0, 1];
        let w = [0.3 * 0.6, 0.3 * 0.4, 0.7 * 0.6, 0.7 * 0.4];
        assert!(label_quality(&a, &b, &w, 2, 2).unwrap().abs() < 1e-12);

        let single = [0, 0, 0];
        assert_eq!(label_quality(&single, &single, &[1.0, 1.0, 1.0], 2, 2).unwrap(), 1.0);
        assert!(matches!(label_quality(&a, &b, &[0.0; 4], 2, 2), Err(MetricsError::InvalidWeights)));
        assert!(matches!(label_quality(&[2], &[0], &[1.0], 2, 2), Err(MetricsError::LabelOutOfRange { .. })));
    }

    #[test]
    fn quantity_cases() {
        let c = ndarray::arr2(&[[0.2, 0.3], [0.1, 0.4]]);
        let half = c.mapv(|v| 0.5 * v);
        assert_eq!(quantity(&[c.view()], &[c.view()]).unwrap(), 1.0);
        assert!((quantity(&[half.view()], &[c.view()]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let c = pearson(&x, &y).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
        let report = confidence_sdr_report(&[("a".into(), 0.5, 1.0), ("b".into(), 0.5, 2.0), ("c".into(), 0.5, 3.0)]);
        assert!(report.correlation.is_none());
        assert!(report.correlation_error.is_some());
        assert!((report.rows[0].log10_confidence - 0.5f64.log10()).abs() < 1e-15);
    }

    #[test]
    fn pearson_p_value_matches_reference() {
        // r = 0.5 with n = 12: t = 0.5 * sqrt(10 / 0.75) = 1.8257, two-sided p = 0.0979
        let x: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let mut y: Vec<f64> = vec![0.0; 12];
        // build y with correlation exactly 0.5: y = 0.5 zx + sqrt(0.75) zu with zu orthogonal
        let mx = 5.5;
        let zx: Vec<f64> = x.iter().map(|v| v - mx).collect();
        let u: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let proj = dot(&u, &zx) / dot(&zx, &zx);
        let zu: Vec<f64> = u.iter().zip(&zx).map(|(a, b)| a - proj * b).collect();
        let (nx, nu) = (dot(&zx, &zx).sqrt(), dot(&zu, &zu).sqrt());
        for i in 0..12 {
            y[i] = 0.5 * zx[i] / nx + 0.75f64.sqrt() * zu[i] / nu;
        }
        let c = pearson(&x, &y).unwrap();
        assert!((c.r - 0.5).abs() < 1e-12);
        assert!((c.p_value - 0.0979).abs() < 5e-4, "{}", c.p_value);
    }
}
