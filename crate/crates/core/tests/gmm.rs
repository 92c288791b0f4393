use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stereoboot::gmm::{fit_em, EmConfig, GmmModel};

fn clustered_data(seed: u64, dim: usize, k: usize, n: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
    let spread: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.5)).collect();
    Array2::from_shape_fn((n, dim), |(i, d)| {
        let c = i % k;
        centres[c][d] + spread[c] * rng.sample::<f64, _>(StandardNormal)
    })
}

fn random_model(seed: u64, dim: usize, k: usize) -> GmmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = Array2::from_shape_fn((k, dim), |_| rng.random_range(-2.0..2.0));
    let covs = (0..k)
        .map(|_| {
            let a = Array2::from_shape_fn((dim, dim), |_| rng.random_range(-1.0..1.0));
            a.dot(&a.t()) + Array2::<f64>::eye(dim) * 0.3
        })
        .collect();
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    GmmModel::new(means, covs, raw.iter().map(|w| w / total).collect::<Array1<f64>>()).unwrap()
}

/// `log sum_j w_j N(x; mu_j, Sigma_j)` evaluated without log-space tricks.
fn naive_log_density(m: &GmmModel, x: &[f64]) -> f64 {
    let d = m.dimension();
    let mut total = 0.0;
    for j in 0..m.n_components() {
        let cov = m.covariance(j);
        let s = DMatrix::from_fn(d, d, |r, c| cov[[r, c]]);
        let diff = DVector::from_fn(d, |r, _| x[r] - m.mean(j)[r]);
        let quad = (diff.transpose() * s.clone().try_inverse().unwrap() * &diff)[(0, 0)];
        let norm = ((2.0 * std::f64::consts::PI).powi(d as i32) * s.determinant()).sqrt();
        total += m.weights()[j] * (-0.5 * quad).exp() / norm;
    }
    total.ln()
}

#[test]
fn em_log_likelihood_is_monotone() {
    for seed in 0..50u64 {
        let dim = 1 + (seed % 2) as usize;
        let k = 2 + (seed % 3 == 0) as usize;
        let data = clustered_data(seed, dim, k, 300);
        let config = EmConfig { seed, max_iter: 200, ..EmConfig::default() };
        let (_, trace) = fit_em(data.view(), k, &config).unwrap();
        assert!(trace.log_likelihoods.len() >= 2);
        for w in trace.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn posterior_rows_are_distributions() {
    for seed in 0..20u64 {
        let m = random_model(seed, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut pts = Array2::from_shape_fn((200, 2), |_| rng.random_range(-6.0..6.0));
        pts.row_mut(0).assign(&array![1e3, -1e3]);
        pts.row_mut(1).assign(&array![-5e4, 2e2]);
        let post = m.posteriors(pts.view()).unwrap();
        for row in post.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&g| (0.0..=1.0).contains(&g)));
        }
    }
}

#[test]
fn log_density_matches_direct_sum() {
    for seed in 0..30u64 {
        let dim = 1 + (seed % 3) as usize;
        let m = random_model(seed, dim, 1 + (seed % 4) as usize);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let pts = Array2::from_shape_fn((25, dim), |_| rng.random_range(-3.0..3.0));
        let got = m.log_density(pts.view()).unwrap();
        for (i, row) in pts.rows().into_iter().enumerate() {
            let want = naive_log_density(&m, row.as_slice().unwrap());
            assert!((got[i] - want).abs() < 1e-12, "seed {seed}: {} vs {want}", got[i]);
        }
    }
}

#[test]
fn far_separated_components_give_certain_posteriors() {
    let m = GmmModel::new(array![[0.0], [20.0]], vec![array![[1.0]], array![[1.0]]], array![0.5, 0.5]).unwrap();
    let post = m.posteriors(array![[0.0], [10.0]].view()).unwrap();
    assert!(post[[0, 0]] > 1.0 - 1e-6);
    assert!((post[[1, 0]] - 0.5).abs() < 1e-12);
}

#[test]
fn fit_is_bit_reproducible() {
    let data = clustered_data(3, 2, 2, 400);
    let config = EmConfig { seed: 11, ..EmConfig::default() };
    let (a, ta) = fit_em(data.view(), 2, &config).unwrap();
    let (b, tb) = fit_em(data.view(), 2, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
}

#[test]
fn sampling_reproduces_moments() {
    let m = GmmModel::new(array![[-2.0], [3.0]], vec![array![[0.25]], array![[1.0]]], array![0.3, 0.7]).unwrap();
    let s = m.sample(200_000, 5).unwrap();
    let mean = s.column(0).mean().unwrap();
    let var = s.column(0).mapv(|v| (v - mean).powi(2)).mean().unwrap();
    let true_mean = 0.3 * -2.0 + 0.7 * 3.0;
    let true_var = 0.3 * (0.25 + 4.0) + 0.7 * (1.0 + 9.0) - true_mean * true_mean;
    assert!((mean - true_mean).abs() < 0.02, "{mean}");
    assert!((var - true_var).abs() < 0.05, "{var}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn permuting_components_permutes_posteriors(seed in 0u64..1000, x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let m = random_model(seed, 2, 3);
        let order = [2usize, 0, 1];
        let p = m.permuted(&order);
        let pt = array![[x, y]];
        let a = m.posteriors(pt.view()).unwrap();
        let b = p.posteriors(pt.view()).unwrap();
        for (new, &old) in order.iter().enumerate() {
            prop_assert!((b[[0, new]] - a[[0, old]]).abs() < 1e-12);
        }
    }
}
