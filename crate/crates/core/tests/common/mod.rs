#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stereoboot::experiment::MixtureAnalysis;
use stereoboot::mixgen::{make_mixture, MixSpec, MixtureRecord, SourceSpec};
use stereoboot::pipeline::SpatialConfig;
use stereoboot::signal::StftConfig;

pub fn tone_pair(freq_a: f64, freq_b: f64, angle_a: f64, angle_b: f64, seed: u64) -> MixtureRecord {
    make_mixture(&MixSpec {
        source_a: SourceSpec::Tone { freq_hz: freq_a },
        source_b: SourceSpec::Tone { freq_hz: freq_b },
        angle_a,
        angle_b,
        gain_db_a: 0.0,
        gain_db_b: 0.0,
        seed,
        sample_rate: 8000,
        duration_s: 0.5,
    })
    .unwrap()
}

pub fn analyse(record: &MixtureRecord, seed: u64) -> MixtureAnalysis {
    MixtureAnalysis::new(record, &StftConfig::default(), &SpatialConfig::default(), 1.0, seed).unwrap()
}

/// A tone pair with disjoint spectra (at least 500 Hz apart) whose
/// interchannel phases at +-60 degrees, where each far channel lags by 5
/// samples, stay at least 1.18 rad apart modulo 2 pi.
pub fn tone_frequencies(trial: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(trial);
    loop {
        let a: f64 = rng.random_range(200.0..1500.0);
        let b: f64 = rng.random_range(a + 500.0..3500.0);
        if ((a + b) % 1600.0 - 800.0).abs() <= 500.0 {
            return (a, b);
        }
    }
}

/// Runs the command-line binary with `args`.
pub fn stereoboot<I, S>(args: I) -> std::process::Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    std::process::Command::new(env!("CARGO_BIN_EXE_stereoboot")).args(args).output().expect("binary runs")
}
