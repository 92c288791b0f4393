//! Time-frequency analysis/synthesis and WAV file I/O.
//!
//! Everything downstream consumes [`ComplexSpectrogram`]s produced here. The
//! STFT uses a square-root periodic Hann window for both analysis and
//! synthesis, pads half a window of zeros at each end so that frame `t` is
//! centred on sample `t * hop`, and reconstructs by window-power normalised
//! overlap-add.

mod stft;
pub mod wav;

pub use stft::{frame_count, istft, sqrt_hann, stft, stft_samples, ComplexSpectrogram, StftConfig};
pub use wav::{read_wav, write_wav, WavError, WavFormat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("waveform has no samples")]
    EmptyWaveform,
    #[error("waveform has no channels")]
    NoChannels,
    #[error("channel {channel} has {got} samples, expected {expected}")]
    RaggedChannels { channel: usize, expected: usize, got: usize },
    #[error("non-finite sample in channel {channel} at index {index}")]
    NonFinite { channel: usize, index: usize },
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),
    #[error("channel {channel} out of range for {channels}-channel data")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("sample rate {got} Hz does not match configured {expected} Hz (resampling is not supported)")]
    SampleRateMismatch { expected: u32, got: u32 },
}

/// Multi-channel real audio with a common sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        let first = channels.first().ok_or(SignalError::NoChannels)?;
        let expected = first.len();
        for (c, ch) in channels.iter().enumerate() {
            if ch.len() != expected {
                return Err(SignalError::RaggedChannels { channel: c, expected, got: ch.len() });
            }
            if let Some(index) = ch.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::NonFinite { channel: c, index });
            }
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Single-channel copy of one channel.
    pub fn select_channel(&self, index: usize) -> Result<Waveform, SignalError> {
        let ch = self.channels.get(index).ok_or(SignalError::ChannelOutOfRange {
            channel: index,
            channels: self.channels.len(),
        })?;
        Ok(Waveform { channels: vec![ch.clone()], sample_rate: self.sample_rate })
    }

    /// Mono average of all channels.
    pub fn downmix(&self) -> Waveform {
        let scale = 1.0 / self.channels.len() as f64;
        let mixed = (0..self.len()).map(|i| self.channels.iter().map(|c| c[i]).sum::<f64>() * scale).collect();
        Waveform { channels: vec![mixed], sample_rate: self.sample_rate }
    }

    pub fn ensure_sample_rate(&self, expected: u32) -> Result<(), SignalError> {
        if self.sample_rate != expected {
            return Err(SignalError::SampleRateMismatch { expected, got: self.sample_rate });
        }
        Ok(())
    }
}
