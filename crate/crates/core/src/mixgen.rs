//! Synthetic anechoic stereo mixtures of two panned, delayed sources with
//! ground-truth stems, and seeded train/validation/test corpora of them.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_seed, rng_for, stream_id};
use crate::signal::{read_wav, SignalError, WavError, Waveform};

/// RMS every source is normalised to before its gain is applied.
pub const SOURCE_RMS: f64 = 0.1;

#[derive(Debug, Error)]
pub enum MixgenError {
    #[error("angle {0} is outside [-90, 90] degrees")]
    AngleOutOfRange(f64),
    #[error("source is silent")]
    SilentSource,
    #[error("invalid source parameters: {0}")]
    InvalidSource(String),
    #[error("invalid corpus settings: {0}")]
    InvalidCorpus(String),
    #[error("{path}: {source}")]
    Wav { path: PathBuf, source: WavError },
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A mono source, either synthesised from parameters plus a seed or read
/// from a WAV file (downmixed to mono).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Tone { freq_hz: f64 },
    /// Equal-amplitude partials at arbitrary frequencies sharing one slow
    /// amplitude envelope.
    SinusoidBank { freqs_hz: Vec<f64>, am_rate_hz: f64 },
    /// Harmonic series with `1/k` partial amplitudes up to 0.45 of the sample
    /// rate, under a slow amplitude modulation.
    Harmonic { f0_hz: f64, am_rate_hz: f64 },
    /// White noise restricted to a frequency band.
    FilteredNoise { low_hz: f64, high_hz: f64 },
    /// Linear frequency sweep.
    Chirp { start_hz: f64, end_hz: f64 },
    Wav { path: PathBuf },
}

impl SourceSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            SourceSpec::Tone { .. } => "tone",
            SourceSpec::SinusoidBank { .. } => "sinusoid_bank",
            SourceSpec::Harmonic { .. } => "harmonic",
            SourceSpec::FilteredNoise { .. } => "filtered_noise",
            SourceSpec::Chirp { .. } => "chirp",
            SourceSpec::Wav { .. } => "wav",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub source_a: SourceSpec,
    pub source_b: SourceSpec,
    pub angle_a: f64,
    pub angle_b: f64,
    pub gain_db_a: f64,
    pub gain_db_b: f64,
    pub seed: u64,
    pub sample_rate: u32,
    /// Length of synthetic sources; WAV sources keep their own length.
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureRecord {
    pub mixture: Waveform,
    /// Stereo stems, summing sample-exactly to `mixture`.
    pub stems: Vec<Waveform>,
    pub spec: MixSpec,
}

fn nyquist_check(f: f64, sample_rate: u32, what: &str) -> Result<(), MixgenError> {
    if !(f > 0.0 && f < sample_rate as f64 / 2.0) {
        return Err(MixgenError::InvalidSource(format!("{what} {f} Hz must lie in (0, {}) Hz", sample_rate / 2)));
    }
    Ok(())
}

fn band_noise(len: usize, low: f64, high: f64, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = (0..len).map(|_| Complex64::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        let f = bin as f64 * sample_rate as f64 / len as f64;
        if f < low || f > high {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    buf.iter().map(|c| c.re / len as f64).collect()
}

fn envelope(rate_hz: f64, phase: f64, t: f64) -> f64 {
    0.6 + 0.4 * (2.0 * PI * rate_hz * t + phase).sin()
}

/// Renders a source at unit gain, normalised to [`SOURCE_RMS`].
pub fn render_source(spec: &SourceSpec, duration_s: f64, sample_rate: u32, seed: u64) -> Result<Vec<f64>, MixgenError> {
    let sr = sample_rate as f64;
    let len = (duration_s * sr).round() as usize;
    if !matches!(spec, SourceSpec::Wav { .. }) && len == 0 {
        return Err(MixgenError::InvalidSource(format!("duration {duration_s} s yields no samples")));
    }
    let mut rng = rng_for(seed, 0);
    let t = |n: usize| n as f64 / sr;
    let raw: Vec<f64> = match spec {
        SourceSpec::Tone { freq_hz } => {
            nyquist_check(*freq_hz, sample_rate, "tone frequency")?;
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..len).map(|n| (2.0 * PI * freq_hz * t(n) + phase).sin()).collect()
        }
        SourceSpec::SinusoidBank { freqs_hz, am_rate_hz } => {
            if freqs_hz.is_empty() {
                return Err(MixgenError::InvalidSource("sinusoid bank has no partials".into()));
            }
            for f in freqs_hz {
                nyquist_check(*f, sample_rate, "partial frequency")?;
            }
            if !(*am_rate_hz >= 0.0) {
                return Err(MixgenError::InvalidSource("am_rate_hz must be non-negative".into()));
            }
            let phases: Vec<f64> = freqs_hz.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let am_phase = rng.random_range(0.0..2.0 * PI);
            (0..len)
                .map(|n| {
                    let tn = t(n);
                    let tone: f64 = freqs_hz.iter().zip(&phases).map(|(f, ph)| (2.0 * PI * f * tn + ph).sin()).sum();
                    tone * envelope(*am_rate_hz, am_phase, tn)
                })
                .collect()
        }
        SourceSpec::Harmonic { f0_hz, am_rate_hz } => {
            nyquist_check(*f0_hz, sample_rate, "fundamental")?;
            if !(*am_rate_hz >= 0.0) {
                return Err(MixgenError::InvalidSource("am_rate_hz must be non-negative".into()));
            }
            let partials = ((0.45 * sr / f0_hz).floor() as usize).max(1);
            let phases: Vec<f64> = (0..partials).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            let am_phase = rng.random_range(0.0..2.0 * PI);
            (0..len)
                .map(|n| {
                    let tn = t(n);
                    let tone: f64 = phases
                        .iter()
                        .enumerate()
                        .map(|(k, ph)| ((k + 1) as f64 * 2.0 * PI * f0_hz * tn + ph).sin() / (k + 1) as f64)
                        .sum();
                    tone * envelope(*am_rate_hz, am_phase, tn)
                })
                .collect()
        }
        SourceSpec::FilteredNoise { low_hz, high_hz } => {
            nyquist_check(*low_hz, sample_rate, "band edge")?;
            nyquist_check(*high_hz, sample_rate, "band edge")?;
            if low_hz >= high_hz {
                return Err(MixgenError::InvalidSource(format!("empty band {low_hz}..{high_hz} Hz")));
            }
            band_noise(len, *low_hz, *high_hz, sample_rate, &mut rng)
        }
        SourceSpec::Chirp { start_hz, end_hz } => {
            nyquist_check(*start_hz, sample_rate, "chirp start")?;
            nyquist_check(*end_hz, sample_rate, "chirp end")?;
            let phase = rng.random_range(0.0..2.0 * PI);
            let rate = (end_hz - start_hz) / duration_s;
            (0..len)
                .map(|n| {
                    let tn = t(n);
                    (2.0 * PI * (start_hz * tn + 0.5 * rate * tn * tn) + phase).sin()
                })
                .collect()
        }
        SourceSpec::Wav { path } => {
            let w = read_wav(path).map_err(|source| MixgenError::Wav { path: path.clone(), source })?;
            w.ensure_sample_rate(sample_rate)?;
            w.downmix().into_channels().remove(0)
        }
    };
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / raw.len().max(1) as f64).sqrt();
    if !(rms > 0.0) {
        return Err(MixgenError::SilentSource);
    }
    Ok(raw.iter().map(|v| v * SOURCE_RMS / rms).collect())
}

/// Constant-power pan gains `(left, right)` for an angle in degrees.
pub fn pan_gains(angle: f64) -> (f64, f64) {
    let theta = PI / 4.0 * (1.0 + angle / 90.0);
    (theta.cos(), theta.sin())
}

/// Whole-sample delay of the far channel: up to 1 ms at +/-90 degrees.
pub fn far_delay(angle: f64, sample_rate: u32) -> usize {
    (angle.abs() / 90.0 * sample_rate as f64 / 1000.0).round() as usize
}

/// Pans, delays and scales a mono source into a stereo stem of the same length.
/// Positive angles sit to the right, so the left channel is delayed.
pub fn spatialize(source: &[f64], angle: f64, gain_db: f64, sample_rate: u32) -> Result<Waveform, MixgenError> {
    if !(-90.0..=90.0).contains(&angle) {
        return Err(MixgenError::AngleOutOfRange(angle));
    }
    let gain = 10f64.powf(gain_db / 20.0);
    let (gl, gr) = pan_gains(angle);
    let d = far_delay(angle, sample_rate);
    let delayed = |g: f64, delay: usize| -> Vec<f64> {
        (0..source.len()).map(|n| if n >= delay { gain * g * source[n - delay] } else { 0.0 }).collect()
    };
    let (left, right) = if angle > 0.0 { (delayed(gl, d), delayed(gr, 0)) } else { (delayed(gl, 0), delayed(gr, d)) };
    Ok(Waveform::new(vec![left, right], sample_rate)?)
}

pub fn make_mixture(spec: &MixSpec) -> Result<MixtureRecord, MixgenError> {
    let a = render_source(&spec.source_a, spec.duration_s, spec.sample_rate, derive_seed(spec.seed, 0))?;
    let b = render_source(&spec.source_b, spec.duration_s, spec.sample_rate, derive_seed(spec.seed, 1))?;
    let len = a.len().min(b.len());
    let sa = spatialize(&a[..len], spec.angle_a, spec.gain_db_a, spec.sample_rate)?;
    let sb = spatialize(&b[..len], spec.angle_b, spec.gain_db_b, spec.sample_rate)?;
    let mixture = (0..2)
        .map(|c| sa.channel(c).iter().zip(sb.channel(c)).map(|(x, y)| x + y).collect())
        .collect();
    Ok(MixtureRecord { mixture: Waveform::new(mixture, spec.sample_rate)?, stems: vec![sa, sb], spec: spec.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AngleDistribution {
    Uniform { low: f64, high: f64 },
    /// Every mixture uses the same two angles.
    Fixed { a: f64, b: f64 },
}

impl Default for AngleDistribution {
    fn default() -> Self {
        AngleDistribution::Uniform { low: -90.0, high: 90.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Tone,
    SinusoidBank,
    Harmonic,
    FilteredNoise,
    Chirp,
    Wav,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub angles: AngleDistribution,
    /// Generator kinds to draw from; two distinct kinds per mixture when
    /// more than one is listed.
    pub kinds: Vec<SourceKind>,
    /// Directories scanned (non-recursively, sorted) for `.wav` sources.
    pub wav_dirs: Vec<PathBuf>,
    /// Per-source gain drawn uniformly from `[-gain_db_spread, gain_db_spread]`.
    pub gain_db_spread: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 500,
            n_validation: 100,
            n_test: 300,
            duration_s: 0.5,
            sample_rate: 8000,
            angles: AngleDistribution::default(),
            kinds: vec![SourceKind::Harmonic, SourceKind::FilteredNoise, SourceKind::Chirp, SourceKind::Tone],
            wav_dirs: Vec::new(),
            gain_db_spread: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub id: String,
    pub split: Split,
    pub spec: MixSpec,
}

fn wav_pool(dirs: &[PathBuf]) -> Result<Vec<PathBuf>, MixgenError> {
    let mut files = Vec::new();
    for dir in dirs {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                files.push(path);
            }
        }
    }
    files.sort();
    Ok(files)
}

fn draw_source(kind: SourceKind, sample_rate: u32, pool: &[PathBuf], rng: &mut impl Rng) -> SourceSpec {
    let top = (0.45 * sample_rate as f64).min(3500.0);
    match kind {
        SourceKind::Tone => SourceSpec::Tone { freq_hz: rng.random_range(200.0..top) },
        SourceKind::SinusoidBank => {
            let count = rng.random_range(3..=6);
            SourceSpec::SinusoidBank {
                freqs_hz: (0..count).map(|_| rng.random_range(200.0..top)).collect(),
                am_rate_hz: rng.random_range(2.0..6.0),
            }
        }
        SourceKind::Harmonic => {
            SourceSpec::Harmonic { f0_hz: rng.random_range(100.0..400.0), am_rate_hz: rng.random_range(2.0..6.0) }
        }
        SourceKind::FilteredNoise => {
            let low = rng.random_range(200.0..(top - 600.0));
            let width = rng.random_range(500.0..2000.0);
            SourceSpec::FilteredNoise { low_hz: low, high_hz: (low + width).min(top) }
        }
        SourceKind::Chirp => SourceSpec::Chirp { start_hz: rng.random_range(200.0..top), end_hz: rng.random_range(200.0..top) },
        SourceKind::Wav => SourceSpec::Wav { path: pool.choose(rng).expect("non-empty pool").clone() },
    }
}

fn draw_angle(dist: &AngleDistribution, rng: &mut impl Rng) -> (f64, f64) {
    match *dist {
        AngleDistribution::Uniform { low, high } => (rng.random_range(low..=high), rng.random_range(low..=high)),
        AngleDistribution::Fixed { a, b } => (a, b),
    }
}

/// Seed of mixture `index` in `split`; splits draw from disjoint streams.
pub fn mixture_seed(corpus_seed: u64, split: Split, index: usize) -> u64 {
    derive_seed(derive_seed(corpus_seed, stream_id(split.name())), index as u64)
}

/// Mixture specifications for all three splits, ids `"<split>-<index>"`.
pub fn make_corpus(config: &CorpusConfig) -> Result<Vec<CorpusEntry>, MixgenError> {
    if config.kinds.is_empty() {
        return Err(MixgenError::InvalidCorpus("no source kinds enabled".into()));
    }
    if !(config.duration_s > 0.0) || config.sample_rate == 0 {
        return Err(MixgenError::InvalidCorpus("duration and sample rate must be positive".into()));
    }
    match config.angles {
        AngleDistribution::Uniform { low, high } if !(-90.0 <= low && low <= high && high <= 90.0) => {
            return Err(MixgenError::InvalidCorpus(format!("angle range {low}..{high} outside [-90, 90]")));
        }
        AngleDistribution::Fixed { a, b } if !(-90.0..=90.0).contains(&a) || !(-90.0..=90.0).contains(&b) => {
            return Err(MixgenError::InvalidCorpus(format!("angles {a}, {b} outside [-90, 90]")));
        }
        _ => {}
    }
    let pool = if config.kinds.contains(&SourceKind::Wav) { wav_pool(&config.wav_dirs)? } else { Vec::new() };
    if config.kinds.contains(&SourceKind::Wav) && pool.is_empty() {
        return Err(MixgenError::InvalidCorpus("wav sources requested but no .wav files found".into()));
    }
    let mut kinds = config.kinds.clone();
    kinds.sort_by_key(|k| *k as u8);
    kinds.dedup();
    let mut entries = Vec::new();
    for split in Split::ALL {
        let count = match split {
            Split::Train => config.n_train,
            Split::Validation => config.n_validation,
            Split::Test => config.n_test,
        };
        for index in 0..count {
            let seed = mixture_seed(config.seed, split, index);
            let mut rng = rng_for(seed, stream_id("spec"));
            let (ka, kb) = if kinds.len() > 1 {
                let picked: Vec<SourceKind> = kinds.choose_multiple(&mut rng, 2).copied().collect();
                (picked[0], picked[1])
            } else {
                (kinds[0], kinds[0])
            };
            let source_a = draw_source(ka, config.sample_rate, &pool, &mut rng);
            let source_b = draw_source(kb, config.sample_rate, &pool, &mut rng);
            let (angle_a, angle_b) = draw_angle(&config.angles, &mut rng);
            let spread = config.gain_db_spread.abs();
            let mut gain = || if spread > 0.0 { rng.random_range(-spread..=spread) } else { 0.0 };
            let (gain_db_a, gain_db_b) = (gain(), gain());
            entries.push(CorpusEntry {
                id: format!("{}-{index:05}", split.name()),
                split,
                spec: MixSpec {
                    source_a,
                    source_b,
                    angle_a,
                    angle_b,
                    gain_db_a,
                    gain_db_b,
                    seed,
                    sample_rate: config.sample_rate,
                    duration_s: config.duration_s,
                },
            });
        }
    }
    Ok(entries)
}

/// Relative paths of the files written for one corpus entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub split: Split,
    pub mixture: PathBuf,
    pub stems: Vec<PathBuf>,
    pub spec: MixSpec,
}

impl ManifestRecord {
    pub fn for_entry(entry: &CorpusEntry) -> Self {
        let dir = Path::new(entry.split.name());
        Self {
            id: entry.id.clone(),
            split: entry.split,
            mixture: dir.join(format!("{}.mix.wav", entry.id)),
            stems: (0..2).map(|j| dir.join(format!("{}.s{j}.wav", entry.id))).collect(),
            spec: entry.spec.clone(),
        }
    }
}
