use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{SignalError, Waveform};

/// Window and hop lengths in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window_ms: 32.0, hop_ms: 8.0 }
    }
}

impl StftConfig {
    /// Converts to `(window, hop)` in samples, checking that the window is an
    /// even integer count and the hop divides it.
    pub fn samples(&self, sample_rate: u32) -> Result<(usize, usize), SignalError> {
        let to_samples = |ms: f64, what: &str| -> Result<usize, SignalError> {
            let exact = ms * sample_rate as f64 / 1000.0;
            let rounded = exact.round();
            if !exact.is_finite() || rounded < 1.0 || (exact - rounded).abs() > 1e-9 {
                return Err(SignalError::InvalidParams(format!(
                    "{what} of {ms} ms is not an integer number of samples at {sample_rate} Hz"
                )));
            }
            Ok(rounded as usize)
        };
        let window = to_samples(self.window_ms, "window")?;
        let hop = to_samples(self.hop_ms, "hop")?;
        check_params(window, hop)?;
        Ok((window, hop))
    }
}

fn check_params(window: usize, hop: usize) -> Result<(), SignalError> {
    if window < 2 || window % 2 != 0 {
        return Err(SignalError::InvalidParams(format!("window of {window} samples must be even and >= 2")));
    }
    if hop == 0 || hop > window {
        return Err(SignalError::InvalidParams(format!("hop {hop} must be in 1..={window}")));
    }
    if window % hop != 0 {
        return Err(SignalError::InvalidParams(format!("hop {hop} does not divide window {window}")));
    }
    Ok(())
}

/// Square-root periodic Hann window, `sin(pi n / N)`.
pub fn sqrt_hann(window: usize) -> Vec<f64> {
    (0..window).map(|n| (PI * n as f64 / window as f64).sin()).collect()
}

/// Number of frames for a signal of `len` samples: half-window padding on
/// both sides, with the tail padded until the last frame starts at or past
/// the final input sample.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len.div_ceil(hop)
}

/// Multi-channel one-sided STFT, indexed `[channel, frame, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    bins: Array3<Complex64>,
    window_size: usize,
    frame_hop: usize,
    sample_rate: u32,
    signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn new(
        bins: Array3<Complex64>,
        window_size: usize,
        frame_hop: usize,
        sample_rate: u32,
        signal_len: usize,
    ) -> Result<Self, SignalError> {
        check_params(window_size, frame_hop)?;
        let (channels, frames, freqs) = bins.dim();
        if channels == 0 {
            return Err(SignalError::NoChannels);
        }
        if freqs != window_size / 2 + 1 {
            return Err(SignalError::InvalidParams(format!(
                "{freqs} bins inconsistent with window {window_size}"
            )));
        }
        if frames == 0 || frames != frame_count(signal_len, frame_hop) {
            return Err(SignalError::InvalidParams(format!(
                "{frames} frames inconsistent with signal length {signal_len} and hop {frame_hop}"
            )));
        }
        if bins.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(SignalError::InvalidParams("non-finite spectrogram value".into()));
        }
        if sample_rate == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        Ok(Self { bins, window_size, frame_hop, sample_rate, signal_len })
    }

    pub fn bins(&self) -> &Array3<Complex64> {
        &self.bins
    }

    pub fn num_channels(&self) -> usize {
        self.bins.dim().0
    }

    pub fn num_frames(&self) -> usize {
        self.bins.dim().1
    }

    pub fn num_freqs(&self) -> usize {
        self.bins.dim().2
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn frame_hop(&self) -> usize {
        self.frame_hop
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn channel(&self, channel: usize) -> Result<ArrayView2<'_, Complex64>, SignalError> {
        if channel >= self.num_channels() {
            return Err(SignalError::ChannelOutOfRange { channel, channels: self.num_channels() });
        }
        Ok(self.bins.index_axis(Axis(0), channel))
    }

    /// Same metadata, new contents. Shape must match `[channels', T, F]`.
    pub fn with_bins(&self, bins: Array3<Complex64>) -> Result<Self, SignalError> {
        Self::new(bins, self.window_size, self.frame_hop, self.sample_rate, self.signal_len)
    }

    /// Single-channel spectrogram of `channel` multiplied elementwise by a real mask.
    pub fn masked_channel(&self, channel: usize, mask: ArrayView2<'_, f64>) -> Result<Self, SignalError> {
        let ch = self.channel(channel)?;
        if mask.dim() != ch.dim() {
            return Err(SignalError::InvalidParams(format!(
                "mask shape {:?} does not match spectrogram {:?}",
                mask.dim(),
                ch.dim()
            )));
        }
        let mut out = Array2::<Complex64>::zeros(ch.dim());
        ndarray::Zip::from(&mut out).and(&ch).and(&mask).for_each(|o, &x, &m| *o = x * m);
        let (t, f) = out.dim();
        let bins = out.into_shape_with_order((1, t, f)).expect("contiguous");
        self.with_bins(bins)
    }

    /// Single-channel average over channels; equals the STFT of the
    /// downmixed waveform.
    pub fn downmix(&self) -> Self {
        let mixed = self.bins.mean_axis(Axis(0)).expect("at least one channel");
        let (t, f) = mixed.dim();
        self.with_bins(mixed.into_shape_with_order((1, t, f)).expect("contiguous")).expect("same grid")
    }

    /// `|X|` of one channel.
    pub fn magnitude(&self, channel: usize) -> Result<Array2<f64>, SignalError> {
        Ok(self.channel(channel)?.mapv(|v| v.norm()))
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
}

/// STFT with lengths given in milliseconds.
pub fn stft(w: &Waveform, config: &StftConfig) -> Result<ComplexSpectrogram, SignalError> {
    let (window, hop) = config.samples(w.sample_rate())?;
    stft_samples(w, window, hop)
}

/// STFT with lengths given in samples. The DFT is unnormalised.
pub fn stft_samples(w: &Waveform, window: usize, hop: usize) -> Result<ComplexSpectrogram, SignalError> {
    check_params(window, hop)?;
    if w.is_empty() {
        return Err(SignalError::EmptyWaveform);
    }
    let len = w.len();
    let frames = frame_count(len, hop);
    let freqs = window / 2 + 1;
    let pad = window / 2;
    let padded_len = (frames - 1) * hop + window;
    let win = sqrt_hann(window);
    let fft = plans(window).forward;

    let mut bins = Array3::<Complex64>::zeros((w.num_channels(), frames, freqs));
    let mut padded = vec![0.0; padded_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    for (c, samples) in w.channels().iter().enumerate() {
        padded.iter_mut().for_each(|v| *v = 0.0);
        padded[pad..pad + len].copy_from_slice(samples);
        for t in 0..frames {
            let start = t * hop;
            for (n, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(padded[start + n] * win[n], 0.0);
            }
            fft.process(&mut buf);
            for f in 0..freqs {
                bins[[c, t, f]] = buf[f];
            }
        }
    }
    ComplexSpectrogram::new(bins, window, hop, w.sample_rate(), len)
}

/// Inverse STFT by overlap-add, normalised by the summed synthesis-window
/// power at each sample so that `istft(stft(x)) == x` over the whole signal.
pub fn istft(s: &ComplexSpectrogram) -> Result<Waveform, SignalError> {
    let window = s.window_size;
    let hop = s.frame_hop;
    check_params(window, hop)?;
    let frames = s.num_frames();
    let freqs = s.num_freqs();
    if freqs != window / 2 + 1 || frames != frame_count(s.signal_len, hop) {
        return Err(SignalError::InvalidParams("spectrogram metadata is inconsistent".into()));
    }
    let pad = window / 2;
    let padded_len = (frames - 1) * hop + window;
    let win = sqrt_hann(window);
    let ifft = plans(window).inverse;
    let scale = 1.0 / window as f64;

    let mut norm = vec![0.0; padded_len];
    for t in 0..frames {
        for (n, wv) in win.iter().enumerate() {
            norm[t * hop + n] += wv * wv;
        }
    }

    let mut channels = Vec::with_capacity(s.num_channels());
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    for c in 0..s.num_channels() {
        let mut acc = vec![0.0; padded_len];
        for t in 0..frames {
            for f in 0..freqs {
                buf[f] = s.bins[[c, t, f]];
            }
            // DC and Nyquist of a real signal are real.
            buf[0].im = 0.0;
            buf[window / 2].im = 0.0;
            for f in 1..window / 2 {
                buf[window - f] = buf[f].conj();
            }
            ifft.process(&mut buf);
            let start = t * hop;
            for (n, wv) in win.iter().enumerate() {
                acc[start + n] += buf[n].re * scale * wv;
            }
        }
        let out = (0..s.signal_len).map(|i| acc[pad + i] / norm[pad + i]).collect();
        channels.push(out);
    }
    Waveform::new(channels, s.sample_rate)
}
