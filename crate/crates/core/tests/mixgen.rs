use std::collections::HashSet;

use proptest::prelude::*;
use stereoboot::mixgen::{
    make_corpus, make_mixture, pan_gains, render_source, spatialize, CorpusConfig, MixSpec, SourceSpec, Split, SOURCE_RMS,
};
use stereoboot::signal::{stft, StftConfig};

fn spec(angle_a: f64, angle_b: f64, seed: u64) -> MixSpec {
    MixSpec {
        source_a: SourceSpec::Harmonic { f0_hz: 180.0, am_rate_hz: 3.0 },
        source_b: SourceSpec::FilteredNoise { low_hz: 600.0, high_hz: 1800.0 },
        angle_a,
        angle_b,
        gain_db_a: 2.0,
        gain_db_b: -1.5,
        seed,
        sample_rate: 8000,
        duration_s: 0.25,
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Lag in samples maximising the cross-correlation of `b` against `a`.
fn best_lag(a: &[f64], b: &[f64], max: usize) -> usize {
    (0..=max)
        .max_by(|&p, &q| {
            let c = |lag: usize| a.iter().zip(&b[lag..]).map(|(x, y)| x * y).sum::<f64>();
            c(p).total_cmp(&c(q))
        })
        .unwrap()
}

#[test]
fn centre_and_hard_pans() {
    let (l, r) = pan_gains(0.0);
    assert!((l - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15 && (l - r).abs() < 1e-15);
    let (l, r) = pan_gains(-90.0);
    assert!((l - 1.0).abs() < 1e-15 && r.abs() < 1e-15);

    let src = render_source(&SourceSpec::FilteredNoise { low_hz: 300.0, high_hz: 3000.0 }, 0.25, 8000, 4).unwrap();
    let centre = spatialize(&src, 0.0, 0.0, 8000).unwrap();
    assert!(centre.channel(0).iter().zip(centre.channel(1)).all(|(a, b)| (a - b).abs() < 1e-15));
    let left = spatialize(&src, -90.0, 0.0, 8000).unwrap();
    assert!(left.channel(1).iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn far_channel_is_delayed_by_the_pan_angle() {
    let src = render_source(&SourceSpec::FilteredNoise { low_hz: 300.0, high_hz: 3000.0 }, 0.25, 8000, 9).unwrap();
    for (angle, delay) in [(45.0, 4usize), (-45.0, 4), (90.0 * 5.4 / 8.0, 5), (80.0, 7), (-10.0, 1), (5.0, 0)] {
        let s = spatialize(&src, angle, 0.0, 8000).unwrap();
        let (near, far) = if angle > 0.0 { (s.channel(1), s.channel(0)) } else { (s.channel(0), s.channel(1)) };
        assert_eq!(best_lag(near, far, 12), delay, "angle {angle}");
        assert!(far[..delay].iter().all(|v| *v == 0.0));
    }
}

#[test]
fn mixture_is_the_exact_sum_of_its_stems() {
    for seed in 0..5u64 {
        let m = make_mixture(&spec(-35.0 + seed as f64 * 10.0, 70.0, seed)).unwrap();
        assert_eq!(m.stems.len(), 2);
        for c in 0..2 {
            for (i, v) in m.mixture.channel(c).iter().enumerate() {
                assert_eq!(*v, m.stems[0].channel(c)[i] + m.stems[1].channel(c)[i]);
            }
        }
        let cfg = StftConfig::default();
        let mix = stft(&m.mixture, &cfg).unwrap();
        let a = stft(&m.stems[0], &cfg).unwrap();
        let b = stft(&m.stems[1], &cfg).unwrap();
        for ((x, p), q) in mix.bins().iter().zip(a.bins().iter()).zip(b.bins().iter()) {
            assert!((x - p - q).norm() < 1e-6);
        }
    }
}

#[test]
fn sources_are_rms_normalised_before_gain() {
    let kinds = [
        SourceSpec::Tone { freq_hz: 440.0 },
        SourceSpec::SinusoidBank { freqs_hz: vec![300.0, 950.0, 2100.0], am_rate_hz: 4.0 },
        SourceSpec::Harmonic { f0_hz: 150.0, am_rate_hz: 2.5 },
        SourceSpec::FilteredNoise { low_hz: 400.0, high_hz: 1400.0 },
        SourceSpec::Chirp { start_hz: 300.0, end_hz: 3000.0 },
    ];
    for (seed, k) in kinds.iter().enumerate() {
        let x = render_source(k, 0.5, 8000, seed as u64).unwrap();
        assert_eq!(x.len(), 4000);
        assert!((rms(&x) - SOURCE_RMS).abs() < 1e-12, "{k:?}");
    }
    let s = spatialize(&vec![0.1; 100], 0.0, 6.0, 8000).unwrap();
    let expected = 0.1 * 10f64.powf(6.0 / 20.0) * std::f64::consts::FRAC_1_SQRT_2;
    assert!((s.channel(0)[50] - expected).abs() < 1e-15);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(spatialize(&[0.1; 10], 90.5, 0.0, 8000).is_err());
    assert!(make_mixture(&spec(-91.0, 0.0, 1)).is_err());
    assert!(render_source(&SourceSpec::Tone { freq_hz: 4100.0 }, 0.1, 8000, 0).is_err());
    let silent = SourceSpec::FilteredNoise { low_hz: 1010.0, high_hz: 1020.0 };
    assert!(render_source(&silent, 0.01, 8000, 0).is_err());
}

#[test]
fn corpus_is_deterministic_and_splits_are_disjoint() {
    let config = CorpusConfig { n_train: 10, n_validation: 10, n_test: 10, seed: 5, ..CorpusConfig::default() };
    let a = make_corpus(&config).unwrap();
    let b = make_corpus(&config).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    let first = make_mixture(&a[0].spec).unwrap();
    let again = make_mixture(&b[0].spec).unwrap();
    for c in 0..2 {
        let bits = |w: &[f64]| w.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(first.mixture.channel(c)), bits(again.mixture.channel(c)));
    }
    let ids: HashSet<&str> = a.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids.len(), 30);
    let seeds: HashSet<u64> = a.iter().map(|e| e.spec.seed).collect();
    assert_eq!(seeds.len(), 30);
    for split in Split::ALL {
        assert_eq!(a.iter().filter(|e| e.split == split).count(), 10);
    }
    let other = make_corpus(&CorpusConfig { seed: 6, ..config }).unwrap();
    assert_ne!(a[0].spec, other[0].spec);
}

#[test]
fn uniform_angles_are_centred() {
    let config = CorpusConfig { n_train: 1000, n_validation: 0, n_test: 0, seed: 2, ..CorpusConfig::default() };
    let corpus = make_corpus(&config).unwrap();
    let angles: Vec<f64> = corpus.iter().map(|e| e.spec.angle_a).collect();
    let mean = angles.iter().sum::<f64>() / angles.len() as f64;
    // uniform on [-90, 90] has standard deviation 180 / sqrt(12)
    let sigma = 180.0 / 12f64.sqrt() / (angles.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * sigma, "{mean} vs {sigma}");
    assert!(angles.iter().all(|a| (-90.0..=90.0).contains(a)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pan_is_constant_power(angle in -90.0f64..=90.0) {
        let (l, r) = pan_gains(angle);
        prop_assert!((l * l + r * r - 1.0).abs() < 1e-12);
        prop_assert!(l >= -1e-15 && r >= -1e-15);
    }
}
