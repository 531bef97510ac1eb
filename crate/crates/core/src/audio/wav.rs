//! RIFF/WAVE reading and writing, 16-bit PCM mono only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Header fields of a PCM16 mono file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub num_samples: usize,
}

impl WavInfo {
    pub fn duration_secs(&self) -> f64 {
        self.num_samples as f64 / self.sample_rate as f64
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses the header and returns the info plus the byte range of the PCM data.
fn parse(bytes: &[u8], path: &str) -> Result<(WavInfo, std::ops::Range<usize>)> {
    let fmt_err = |field: &'static str, detail: String| Error::Format {
        path: path.to_string(),
        field,
        detail,
    };
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(fmt_err("riff", "missing RIFF tag".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(fmt_err("wave", "missing WAVE tag".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + 16 > bytes.len() {
                return Err(fmt_err("fmt", format!("chunk too short ({size} bytes)")));
            }
            fmt = Some((
                u16_at(bytes, body),
                u16_at(bytes, body + 2),
                u32_at(bytes, body + 4),
                u16_at(bytes, body + 14),
            ));
        } else if id == b"data" {
            let (format, channels, rate, bits) =
                fmt.ok_or_else(|| fmt_err("fmt", "data chunk before fmt chunk".into()))?;
            if format != 1 {
                return Err(fmt_err(
                    "audio_format",
                    format!("{format} (expected 1 = PCM)"),
                ));
            }
            if channels != 1 {
                return Err(fmt_err("channels", format!("{channels} (expected mono)")));
            }
            if bits != 16 {
                return Err(fmt_err("bits_per_sample", format!("{bits} (expected 16)")));
            }
            if rate == 0 {
                return Err(fmt_err("sample_rate", "0".into()));
            }
            let end = (body + size).min(bytes.len());
            let len = (end - body) / 2;
            return Ok((
                WavInfo {
                    sample_rate: rate,
                    num_samples: len,
                },
                body..body + len * 2,
            ));
        }
        pos = body + size + (size & 1);
    }
    Err(fmt_err("data", "no data chunk".into()))
}

pub fn wav_info(path: impl AsRef<Path>) -> Result<WavInfo> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(&bytes, &path.display().to_string())?.0)
}

pub fn decode_wav(bytes: &[u8], origin: &str) -> Result<Waveform> {
    let (info, range) = parse(bytes, origin)?;
    let samples = bytes[range]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, info.sample_rate))
}

pub fn wav_read(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes, &path.display().to_string())
}

/// Quantizes to 16-bit PCM, clipping to the representable range.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let data_len = (w.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn wav_write(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(w)).map_err(|e| Error::io(path, e))
}
