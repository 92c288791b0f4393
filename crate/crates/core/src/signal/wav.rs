//! Minimal RIFF/WAVE reader and writer for 16-bit PCM and 32-bit IEEE float.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{SignalError, Waveform};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;
const MAX_CHANNELS: u16 = 8;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing `{0}` chunk")]
    MissingChunk(&'static str),
    #[error("`{chunk}` chunk truncated: declared {declared} bytes, {available} available")]
    Truncated { chunk: String, declared: usize, available: usize },
    #[error("malformed header: {0}")]
    Malformed(String),
    #[error("unsupported codec: format tag {format_tag}, {bits} bits per sample")]
    Unsupported { format_tag: u16, bits: u16 },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// On-disk sample encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavFormat {
    Pcm16,
    Float32,
}

struct Fmt {
    format_tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform, WavError> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes)
}

/// Parses an in-memory RIFF/WAVE image.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform, WavError> {
    if bytes.len() < 12 {
        return Err(WavError::MissingChunk("RIFF"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(WavError::Malformed("missing RIFF signature".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(WavError::Malformed("RIFF form type is not WAVE".into()));
    }

    let mut fmt: Option<Fmt> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        let name = String::from_utf8_lossy(id).into_owned();
        if size > available {
            return Err(WavError::Truncated { chunk: name, declared: size, available });
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(WavError::Malformed(format!("fmt chunk of {size} bytes")));
                }
                let mut format_tag = u16_at(body, 0);
                let bits = u16_at(body, 14);
                if format_tag == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(WavError::Malformed("short WAVE_FORMAT_EXTENSIBLE fmt chunk".into()));
                    }
                    format_tag = u16_at(body, 24);
                }
                fmt = Some(Fmt { format_tag, channels: u16_at(body, 2), sample_rate: u32_at(body, 4), bits });
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }

    let fmt = fmt.ok_or(WavError::MissingChunk("fmt "))?;
    let data = data.ok_or(WavError::MissingChunk("data"))?;
    if fmt.channels == 0 || fmt.channels > MAX_CHANNELS {
        return Err(WavError::Malformed(format!("{} channels", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(WavError::Malformed("zero sample rate".into()));
    }
    let n_ch = fmt.channels as usize;
    let samples: Vec<f64> = match (fmt.format_tag, fmt.bits) {
        (FORMAT_PCM, 16) => data.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0).collect(),
        (FORMAT_FLOAT, 32) => {
            data.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect()
        }
        (format_tag, bits) => return Err(WavError::Unsupported { format_tag, bits }),
    };
    let frames = samples.len() / n_ch;
    let mut channels = vec![Vec::with_capacity(frames); n_ch];
    for frame in samples.chunks_exact(n_ch) {
        for (c, v) in frame.iter().enumerate() {
            channels[c].push(*v);
        }
    }
    Ok(Waveform::new(channels, fmt.sample_rate)?)
}

/// Serialises a waveform to a RIFF/WAVE image.
pub fn encode_wav(w: &Waveform, format: WavFormat) -> Vec<u8> {
    let n_ch = w.num_channels() as u16;
    let (tag, bits) = match format {
        WavFormat::Pcm16 => (FORMAT_PCM, 16u16),
        WavFormat::Float32 => (FORMAT_FLOAT, 32u16),
    };
    let bytes_per_sample = bits as usize / 8;
    let data_len = w.len() * n_ch as usize * bytes_per_sample;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&n_ch.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    let block_align = n_ch * bits / 8;
    out.extend_from_slice(&(w.sample_rate() * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for i in 0..w.len() {
        for c in 0..n_ch as usize {
            let v = w.channel(c)[i];
            match format {
                WavFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                WavFormat::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, w: &Waveform, format: WavFormat) -> Result<(), WavError> {
    fs::write(path, encode_wav(w, format))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_half_scale() {
        let mut img = encode_wav(&Waveform::mono(vec![0.0; 2], 8000).unwrap(), WavFormat::Pcm16);
        img[44..46].copy_from_slice(&16384i16.to_le_bytes());
        let w = parse_wav(&img).unwrap();
        assert_eq!(w.channel(0)[0], 0.5);
    }

    #[test]
    fn float32_round_trip_is_bit_exact() {
        let left: Vec<f64> = (0..100).map(|i| ((i as f32) * 0.013 - 0.6) as f64).collect();
        let right: Vec<f64> = left.iter().map(|v| -v).collect();
        let w = Waveform::new(vec![left, right], 8000).unwrap();
        let back = parse_wav(&encode_wav(&w, WavFormat::Float32)).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn pcm16_round_trip_within_one_lsb() {
        let x: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.37).sin() * 0.99).collect();
        let w = Waveform::mono(x, 16000).unwrap();
        let back = parse_wav(&encode_wav(&w, WavFormat::Pcm16)).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        for (a, b) in w.channel(0).iter().zip(back.channel(0)) {
            assert!((a - b).abs() < 1.0 / 32768.0);
        }
    }

    #[test]
    fn truncated_files_name_the_chunk() {
        let img = encode_wav(&Waveform::mono(vec![0.25; 64], 8000).unwrap(), WavFormat::Pcm16);
        // cut right after the fmt chunk: no data chunk at all
        match parse_wav(&img[..36]) {
            Err(WavError::MissingChunk(name)) => assert_eq!(name, "data"),
            other => panic!("unexpected {other:?}"),
        }
        // cut inside the data chunk
        match parse_wav(&img[..60]) {
            Err(WavError::Truncated { chunk, .. }) => assert_eq!(chunk, "data"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_wav(&img[..12]) {
            Err(WavError::MissingChunk(name)) => assert_eq!(name, "fmt "),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unsupported_codec() {
        let mut img = encode_wav(&Waveform::mono(vec![0.0; 4], 8000).unwrap(), WavFormat::Pcm16);
        img[34..36].copy_from_slice(&24u16.to_le_bytes());
        assert!(matches!(parse_wav(&img), Err(WavError::Unsupported { bits: 24, .. })));
        assert!(matches!(parse_wav(b"RIFX\0\0\0\0WAVE"), Err(WavError::Malformed(_))));
    }
}
