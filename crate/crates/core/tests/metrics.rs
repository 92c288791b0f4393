use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stereoboot::metrics::{label_quality, pearson, quantity, si_sdr, si_sir_sar, DB_CAP};

fn gaussian(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn db(num: f64, den: f64) -> f64 {
    10.0 * (num / den).log10()
}

/// Least-squares projections computed with an SVD solve over the reference matrix.
fn projection_oracle(estimate: &[f64], refs: &[Vec<f64>], target: usize) -> (f64, f64, f64) {
    let len = estimate.len();
    let e = DVector::from_column_slice(estimate);
    let r = DVector::from_column_slice(&refs[target]);
    let s_target = &r * (e.dot(&r) / r.dot(&r));
    let a = DMatrix::from_fn(len, refs.len(), |i, j| refs[j][i]);
    let coeffs = a.clone().svd(true, true).solve(&e, 1e-12).unwrap();
    let proj = &a * coeffs;
    let interf = &proj - &s_target;
    let artif = &e - &proj;
    let residual = &e - &s_target;
    let t = s_target.norm_squared();
    (db(t, residual.norm_squared()), db(t, interf.norm_squared()), db(t, artif.norm_squared()))
}

#[test]
fn decomposition_matches_least_squares_oracle() {
    for seed in 0..20u64 {
        let len = 400;
        let refs: Vec<Vec<f64>> = (0..2).map(|j| gaussian(len, seed * 10 + j)).collect();
        let noise = gaussian(len, seed * 10 + 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ests: Vec<Vec<f64>> = (0..2)
            .map(|j| {
                let (g, leak, art) = (rng.random_range(0.5..2.0), rng.random_range(0.05..0.5), rng.random_range(0.05..0.5));
                (0..len).map(|i| g * refs[j][i] + leak * refs[1 - j][i] + art * noise[i] * (j as f64 + 1.0)).collect()
            })
            .collect();
        let est_refs: Vec<&[f64]> = ests.iter().map(Vec::as_slice).collect();
        let ref_refs: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
        let s = si_sir_sar(&est_refs, &ref_refs).unwrap();
        assert_eq!(s.permutation, vec![0, 1]);
        for j in 0..2 {
            let (sdr, sir, sar) = projection_oracle(&ests[j], &refs, j);
            assert!((s.si_sdr[j] - sdr).abs() < 1e-9, "seed {seed}");
            assert!((s.si_sir[j] - sir).abs() < 1e-9, "seed {seed}");
            assert!((s.si_sar[j] - sar).abs() < 1e-9, "seed {seed}");
            assert!((si_sdr(&ests[j], &refs[j]).unwrap() - sdr).abs() < 1e-9);
        }
    }
}

#[test]
fn exact_and_orthogonal_estimates_hit_the_caps() {
    let r = gaussian(256, 1);
    let doubled: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    assert_eq!(si_sdr(&doubled, &r).unwrap(), DB_CAP);
    let mut ortho = gaussian(256, 2);
    let k = ortho.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / r.iter().map(|v| v * v).sum::<f64>();
    ortho.iter_mut().zip(&r).for_each(|(o, v)| *o -= k * v);
    assert_eq!(si_sdr(&ortho, &r).unwrap(), -DB_CAP);
}

fn views(v: &[Array2<f64>]) -> Vec<ArrayView2<'_, f64>> {
    v.iter().map(|m| m.view()).collect()
}

#[test]
fn quantity_is_linear_in_global_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let maps: Vec<Array2<f64>> = (0..4).map(|_| Array2::from_shape_fn((5, 7), |_| rng.random_range(0.0..1.0))).collect();
    let base: Vec<Array2<f64>> = maps.iter().map(|m| m.mapv(|v| v + 0.5)).collect();
    let q = quantity(&views(&maps), &views(&base)).unwrap();
    for c in [0.0, 0.25, 0.5, 3.0] {
        let scaled: Vec<Array2<f64>> = maps.iter().map(|m| m * c).collect();
        let qc = quantity(&views(&scaled), &views(&base)).unwrap();
        assert!((qc - c * q).abs() < 1e-12);
    }
    assert_eq!(quantity(&views(&base), &views(&base)).unwrap(), 1.0);
}

/// Two-sided Student-t tail by composite Simpson integration of the density.
fn t_two_sided(t: f64, df: f64) -> f64 {
    let ln_norm = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
        - statrs::function::gamma::ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    let pdf = |x: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let n = 200_000;
    let h = t.abs() / n as f64;
    let mut s = pdf(0.0) + pdf(t.abs());
    for i in 1..n {
        s += pdf(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - 2.0 * s * h / 3.0
}

#[test]
fn pearson_p_value_matches_integrated_t_tail() {
    for seed in 0..8u64 {
        let n = 10 + 7 * seed as usize;
        let x = gaussian(n, seed);
        let noise = gaussian(n, seed + 100);
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| 0.4 * a + b).collect();
        let c = pearson(&x, &y).unwrap();
        let df = (n - 2) as f64;
        let t = c.r * (df / (1.0 - c.r * c.r)).sqrt();
        assert!((c.p_value - t_two_sided(t, df)).abs() < 1e-7, "seed {seed}: {} vs {}", c.p_value, t_two_sided(t, df));
    }
    assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn si_sdr_ignores_estimate_scale(seed in 0u64..10_000, scale in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
        let r = gaussian(200, seed);
        let n = gaussian(200, seed + 1);
        let e: Vec<f64> = r.iter().zip(&n).map(|(a, b)| a + 0.3 * b).collect();
        let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
        prop_assert!((si_sdr(&e, &r).unwrap() - si_sdr(&scaled, &r).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn permutation_search_is_order_consistent(seed in 0u64..10_000, leak in 0.0f64..0.9) {
        let r0 = gaussian(150, seed);
        let r1 = gaussian(150, seed + 1);
        let e0: Vec<f64> = r0.iter().zip(&r1).map(|(a, b)| a + leak * b).collect();
        let e1: Vec<f64> = r1.iter().zip(&r0).map(|(a, b)| a + leak * b).collect();
        let fwd = si_sir_sar(&[&e0, &e1], &[&r0, &r1]).unwrap();
        let rev = si_sir_sar(&[&e1, &e0], &[&r0, &r1]).unwrap();
        prop_assert_eq!(fwd.permutation.clone(), vec![rev.permutation[1], rev.permutation[0]]);
        prop_assert_eq!(fwd.si_sdr[0], rev.si_sdr[1]);
        prop_assert_eq!(fwd.si_sdr[1], rev.si_sdr[0]);
        let other = (si_sdr(&e0, &r1).unwrap() + si_sdr(&e1, &r0).unwrap()) / 2.0;
        prop_assert!(fwd.mean_si_sdr() >= other);
    }

    #[test]
    fn label_quality_is_one_exactly_on_agreement(
        truth in proptest::collection::vec(0usize..2, 4..60),
        flips in proptest::collection::vec(any::<bool>(), 60),
        raw in proptest::collection::vec(prop_oneof![Just(0.0), 0.05f64..1.0], 60),
        relabel in any::<bool>(),
    ) {
        let n = truth.len();
        let weights = &raw[..n];
        prop_assume!(weights.iter().sum::<f64>() > 0.0);
        let est: Vec<usize> = truth.iter().zip(&flips).map(|(t, f)| (t ^ usize::from(*f)) ^ usize::from(relabel)).collect();
        let q = label_quality(&truth, &est, weights, 2, 2).unwrap();
        prop_assert!((0.0..=1.0).contains(&q));
        let map = |t: usize| t ^ usize::from(relabel);
        let agrees_as_is = (0..n).all(|i| weights[i] == 0.0 || est[i] == map(truth[i]));
        let agrees_swapped = (0..n).all(|i| weights[i] == 0.0 || est[i] == 1 - map(truth[i]));
        if agrees_as_is || agrees_swapped {
            prop_assert!((q - 1.0).abs() < 1e-12, "{}", q);
        } else {
            prop_assert!(q < 1.0 - 1e-9, "{}", q);
        }
    }
}
