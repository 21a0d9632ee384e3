//! Waveforms and 16-bit PCM WAV file I/O.
//!
//! The pipeline only accepts mono 16 kHz 16-bit PCM; anything else is
//! rejected with an explicit error rather than resampled.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PIPELINE_SAMPLE_RATE: u32 = 16_000;

/// Raw audio, amplitudes nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn rd_u32(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn rd_u16(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

/// Reads a mono 16-bit PCM WAV at the pipeline sample rate.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let fail = |msg: &str| Error::Format(format!("{}: {}", path.display(), msg));
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fail("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = rd_u32(&bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(fail("truncated chunk"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail("fmt chunk too small"));
                }
                fmt = Some((
                    rd_u16(&bytes, body_start),
                    rd_u16(&bytes, body_start + 2),
                    rd_u32(&bytes, body_start + 4),
                    rd_u16(&bytes, body_start + 14),
                ));
            }
            b"data" => data = Some(&bytes[body_start..body_start + size]),
            _ => {}
        }
        pos = body_start + size + (size & 1); // chunks are word-aligned
    }
    let (format, channels, rate, bits) = fmt.ok_or_else(|| fail("missing fmt chunk"))?;
    if format != 1 || bits != 16 {
        return Err(fail(&format!(
            "unsupported encoding (format={format}, bits={bits}); need 16-bit PCM"
        )));
    }
    if channels != 1 {
        return Err(fail(&format!("unsupported channel count {channels}; need mono")));
    }
    if rate != PIPELINE_SAMPLE_RATE {
        return Err(fail(&format!(
            "unsupported sample rate {rate}; need {PIPELINE_SAMPLE_RATE}"
        )));
    }
    let data = data.ok_or_else(|| fail("missing data chunk"))?;
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform::new(samples, rate))
}

/// Writes a mono 16-bit PCM WAV, clamping samples to [-1, 1].
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let n = w.samples.len();
    let data_size = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_size).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate.to_le_bytes());
    out.extend_from_slice(&(w.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_size.to_le_bytes());
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
