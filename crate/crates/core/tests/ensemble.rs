use proptest::prelude::*;
use stereoboot::ensemble::{calibrate_threshold, select, select_stems, Candidate, Choice, EnsemblePolicy};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn oracle_beats_each_system(scores in proptest::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 1..80)) {
        let oracle = EnsemblePolicy::oracle();
        let picked: Vec<f64> = scores
            .iter()
            .enumerate()
            .map(|(i, &(sp, dc))| {
                let c = Candidate { index: i as u64, mean_confidence: 0.0, true_scores: Some((sp, dc)) };
                match select(&oracle, &c).unwrap() {
                    Choice::Spatial => sp,
                    Choice::Dc => dc,
                }
            })
            .collect();
        let spatial: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let dc: Vec<f64> = scores.iter().map(|s| s.1).collect();
        prop_assert!(mean(&picked) >= mean(&spatial));
        prop_assert!(mean(&picked) >= mean(&dc));
    }

    #[test]
    fn confidence_output_is_one_of_its_inputs(
        spatial in proptest::collection::vec(-1.0f64..1.0, 1..64),
        dc in proptest::collection::vec(-1.0f64..1.0, 1..64),
        conf in 0.0f64..1.0,
        threshold in 0.0f64..1.0,
    ) {
        let policy = EnsemblePolicy::confidence(threshold);
        let c = Candidate { index: 0, mean_confidence: conf, true_scores: None };
        let (out, tag) = select_stems(&policy, &c, spatial.as_slice(), dc.as_slice()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let expected = if conf > threshold { (&spatial, Choice::Spatial) } else { (&dc, Choice::Dc) };
        prop_assert_eq!(tag, expected.1);
        prop_assert_eq!(bits(out), bits(expected.0));
    }

    #[test]
    fn threshold_ignores_input_order(mut values in proptest::collection::vec(0.0f64..1.0, 4..50), rot in 0usize..50) {
        let a = calibrate_threshold(&values).unwrap();
        let k = rot % values.len();
        values.rotate_left(k);
        values.reverse();
        prop_assert_eq!(a, calibrate_threshold(&values).unwrap());
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert!(a >= sorted[0] && a <= sorted[sorted.len() / 2]);
    }
}

#[test]
fn boundary_goes_to_the_single_channel_model() {
    let c = Candidate { index: 3, mean_confidence: 0.25, true_scores: None };
    assert_eq!(select(&EnsemblePolicy::confidence(0.25), &c).unwrap(), Choice::Dc);
}

#[test]
fn random_policy_is_fair_and_seeded() {
    let policy = EnsemblePolicy::random(17);
    let n = 4000;
    let picks: Vec<Choice> = (0..n)
        .map(|i| select(&policy, &Candidate { index: i, mean_confidence: 0.0, true_scores: None }).unwrap())
        .collect();
    let spatial = picks.iter().filter(|c| **c == Choice::Spatial).count() as f64;
    // 4 standard deviations of a fair binomial
    assert!((spatial - n as f64 / 2.0).abs() < 4.0 * (n as f64 * 0.25).sqrt(), "{spatial}");
    let other = EnsemblePolicy::random(18);
    let differs = (0..64).any(|i| {
        let c = Candidate { index: i, mean_confidence: 0.0, true_scores: None };
        select(&policy, &c).unwrap() != select(&other, &c).unwrap()
    });
    assert!(differs);
}
