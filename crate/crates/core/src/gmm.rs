//! Full-covariance Gaussian mixtures fit by expectation-maximisation.
//!
//! Data are row-major `M x D` arrays. Means are seeded with k-means++, the
//! initial covariances are the global data covariance, and every M-step adds
//! `cov_floor` to the covariance diagonals.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::kmeans_plus_plus;
use crate::rng::rng_for;

/// Lower bound on a component's responsibility mass in the M-step.
const MIN_COMPONENT_MASS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GmmError {
    #[error("{points} points cannot support {components} components")]
    TooFewPoints { points: usize, components: usize },
    #[error("need at least one component")]
    NoComponents,
    #[error("data dimension must be at least 1")]
    ZeroDimension,
    #[error("non-finite value at point {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: model has {model}, data has {data}")]
    DimensionMismatch { model: usize, data: usize },
    #[error("covariance of component {0} is not positive definite")]
    NotPositiveDefinite(usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub cov_floor: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-6, cov_floor: 1e-6, seed: 0 }
    }
}

/// Log-likelihood after initialisation and after every M-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmTrace {
    pub log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Mixture parameters. Covariances are stored row-major, `N x D x D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    n_components: usize,
    dimension: usize,
    means: Vec<f64>,
    covariances: Vec<f64>,
    weights: Vec<f64>,
}

/// Cholesky factor and log-normaliser of one component.
struct Factor {
    lower: Vec<f64>,
    log_norm: f64,
}

fn cholesky(cov: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = cov[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn new(means: Array2<f64>, covariances: Vec<Array2<f64>>, weights: Array1<f64>) -> Result<Self, GmmError> {
        let (n, d) = means.dim();
        if n == 0 {
            return Err(GmmError::NoComponents);
        }
        if d == 0 {
            return Err(GmmError::ZeroDimension);
        }
        if covariances.len() != n || weights.len() != n {
            return Err(GmmError::InvalidModel("component counts disagree".into()));
        }
        if covariances.iter().any(|c| c.dim() != (d, d)) {
            return Err(GmmError::InvalidModel("covariance shape".into()));
        }
        let total: f64 = weights.sum();
        if weights.iter().any(|w| !(*w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(GmmError::InvalidModel("mixing weights must be positive and sum to 1".into()));
        }
        let model = Self {
            n_components: n,
            dimension: d,
            means: means.iter().copied().collect(),
            covariances: covariances.iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).collect(),
            weights: weights.mapv(|w| w / total).to_vec(),
        };
        model.factors()?;
        Ok(model)
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, j: usize) -> &[f64] {
        &self.means[j * self.dimension..(j + 1) * self.dimension]
    }

    pub fn covariance(&self, j: usize) -> Array2<f64> {
        let dd = self.dimension * self.dimension;
        Array2::from_shape_vec((self.dimension, self.dimension), self.covariances[j * dd..(j + 1) * dd].to_vec())
            .expect("square")
    }

    /// The same mixture with components reordered so that new component `i`
    /// is old component `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let d = self.dimension;
        let dd = d * d;
        let mut out = self.clone();
        for (i, &j) in order.iter().enumerate() {
            out.means[i * d..(i + 1) * d].copy_from_slice(&self.means[j * d..(j + 1) * d]);
            out.covariances[i * dd..(i + 1) * dd].copy_from_slice(&self.covariances[j * dd..(j + 1) * dd]);
            out.weights[i] = self.weights[j];
        }
        out
    }

    fn factors(&self) -> Result<Vec<Factor>, GmmError> {
        let d = self.dimension;
        let dd = d * d;
        (0..self.n_components)
            .map(|j| {
                let lower = cholesky(&self.covariances[j * dd..(j + 1) * dd], d).ok_or(GmmError::NotPositiveDefinite(j))?;
                let log_det: f64 = (0..d).map(|i| lower[i * d + i].ln()).sum::<f64>() * 2.0;
                Ok(Factor { lower, log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det) })
            })
            .collect()
    }

    fn check_dim(&self, data: &ArrayView2<'_, f64>) -> Result<(), GmmError> {
        if data.ncols() != self.dimension {
            return Err(GmmError::DimensionMismatch { model: self.dimension, data: data.ncols() });
        }
        Ok(())
    }

    /// `log P(x | z_j) + log P(z_j)` for every point and component.
    fn joint_log(&self, data: ArrayView2<'_, f64>, factors: &[Factor]) -> Array2<f64> {
        let d = self.dimension;
        let m = data.nrows();
        let mut out = Array2::zeros((m, self.n_components));
        let mut z = vec![0.0; d];
        for (i, row) in data.rows().into_iter().enumerate() {
            for (j, f) in factors.iter().enumerate() {
                let mean = self.mean(j);
                // forward substitution L z = x - mu
                for a in 0..d {
                    let mut s = row[a] - mean[a];
                    for b in 0..a {
                        s -= f.lower[a * d + b] * z[b];
                    }
                    z[a] = s / f.lower[a * d + a];
                }
                let maha: f64 = z.iter().map(|v| v * v).sum();
                out[[i, j]] = f.log_norm - 0.5 * maha + self.weights[j].ln();
            }
        }
        out
    }

    /// Per-point `log P(x)`.
    pub fn log_density(&self, points: ArrayView2<'_, f64>) -> Result<Array1<f64>, GmmError> {
        self.check_dim(&points)?;
        let joint = self.joint_log(points, &self.factors()?);
        Ok(joint.rows().into_iter().map(|r| log_sum_exp(r.as_slice().unwrap())).collect())
    }

    /// Responsibilities `P(z_j | x)`; rows sum to one.
    pub fn posteriors(&self, points: ArrayView2<'_, f64>) -> Result<Array2<f64>, GmmError> {
        self.check_dim(&points)?;
        let mut joint = self.joint_log(points, &self.factors()?);
        normalise_rows(&mut joint);
        Ok(joint)
    }

    /// `n` draws: a component chosen by mixing weight, then a Gaussian sample.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Array2<f64>, GmmError> {
        let factors = self.factors()?;
        let d = self.dimension;
        let mut rng = rng_for(seed, 0);
        let mut out = Array2::zeros((n, d));
        let mut z = vec![0.0; d];
        for mut row in out.rows_mut() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = self.n_components - 1;
            for (j, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    comp = j;
                    break;
                }
            }
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let l = &factors[comp].lower;
            let mean = self.mean(comp);
            for a in 0..d {
                let mut s = mean[a];
                for b in 0..=a {
                    s += l[a * d + b] * z[b];
                }
                row[a] = s;
            }
        }
        Ok(out)
    }
}

/// In-place log-domain softmax of each row.
fn normalise_rows(log_joint: &mut Array2<f64>) -> Vec<f64> {
    let mut totals = Vec::with_capacity(log_joint.nrows());
    for mut row in log_joint.rows_mut() {
        let lse = log_sum_exp(row.as_slice().unwrap());
        row.mapv_inplace(|v| (v - lse).exp());
        totals.push(lse);
    }
    totals
}

fn validate(data: &ArrayView2<'_, f64>, n_components: usize) -> Result<(), GmmError> {
    let (m, d) = data.dim();
    if n_components == 0 {
        return Err(GmmError::NoComponents);
    }
    if d == 0 {
        return Err(GmmError::ZeroDimension);
    }
    if m < n_components {
        return Err(GmmError::TooFewPoints { points: m, components: n_components });
    }
    for (i, row) in data.rows().into_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::NonFinite(i));
        }
    }
    Ok(())
}

/// Fits an `n_components` mixture to `data` (`M x D`) by EM.
///
/// Stops when the relative change in total log-likelihood drops below
/// `config.tol` or after `config.max_iter` M-steps. The returned model is the
/// one whose log-likelihood is the last entry of the trace.
pub fn fit_em(data: ArrayView2<'_, f64>, n_components: usize, config: &EmConfig) -> Result<(GmmModel, EmTrace), GmmError> {
    validate(&data, n_components)?;
    let data = data.as_standard_layout();
    let (m, d) = data.dim();
    let k = n_components;
    let floor = config.cov_floor;

    let mut rng = rng_for(config.seed, 0);
    let init_means = kmeans_plus_plus(data.view(), k, &mut rng);
    let global_mean: Vec<f64> = (0..d).map(|a| data.column(a).sum() / m as f64).collect();
    let mut global_cov = vec![0.0; d * d];
    for row in data.rows() {
        for a in 0..d {
            for b in 0..d {
                global_cov[a * d + b] += (row[a] - global_mean[a]) * (row[b] - global_mean[b]);
            }
        }
    }
    for (i, v) in global_cov.iter_mut().enumerate() {
        *v /= m as f64;
        if i % (d + 1) == 0 {
            *v += floor;
        }
    }
    let mut model = GmmModel {
        n_components: k,
        dimension: d,
        means: init_means.iter().copied().collect(),
        covariances: global_cov.iter().copied().cycle().take(k * d * d).collect(),
        weights: vec![1.0 / k as f64; k],
    };

    let e_step = |model: &GmmModel| -> Result<(Array2<f64>, f64), GmmError> {
        let mut resp = model.joint_log(data.view(), &model.factors()?);
        let ll = normalise_rows(&mut resp).iter().sum();
        Ok((resp, ll))
    };

    let (mut resp, mut ll) = e_step(&model)?;
    let mut trace = EmTrace { log_likelihoods: vec![ll], iterations: 0, converged: false };
    while trace.iterations < config.max_iter {
        let prev = model.clone();
        let mut masses = vec![0.0; k];
        for j in 0..k {
            let nk: f64 = resp.column(j).sum();
            if nk < MIN_COMPONENT_MASS {
                // starved component: keep its location and shape
                masses[j] = MIN_COMPONENT_MASS;
                continue;
            }
            masses[j] = nk;
            let mut mean = vec![0.0; d];
            for (row, r) in data.rows().into_iter().zip(resp.column(j)) {
                for a in 0..d {
                    mean[a] += r * row[a];
                }
            }
            mean.iter_mut().for_each(|v| *v /= nk);
            let mut cov = vec![0.0; d * d];
            for (row, r) in data.rows().into_iter().zip(resp.column(j)) {
                for a in 0..d {
                    let da = row[a] - mean[a];
                    for b in 0..=a {
                        cov[a * d + b] += r * da * (row[b] - mean[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..=a {
                    let v = cov[a * d + b] / nk;
                    cov[a * d + b] = v;
                    cov[b * d + a] = v;
                }
                cov[a * d + a] += floor;
            }
            model.means[j * d..(j + 1) * d].copy_from_slice(&mean);
            model.covariances[j * d * d..(j + 1) * d * d].copy_from_slice(&cov);
        }
        let total: f64 = masses.iter().sum();
        model.weights = masses.iter().map(|v| v / total).collect();

        let (next_resp, next_ll) = match e_step(&model) {
            Ok(v) => v,
            Err(_) => {
                // numerically singular update; keep the last good model
                model = prev;
                break;
            }
        };
        trace.iterations += 1;
        trace.log_likelihoods.push(next_ll);
        let change = (next_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        resp = next_resp;
        ll = next_ll;
        if change < config.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((model, trace))
}
