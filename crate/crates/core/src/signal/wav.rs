//! RIFF/WAVE PCM16 mono reader and writer.

use super::Waveform;
use crate::error::{Error, Result};

const PCM_FORMAT: u16 = 1;
const SCALE: f64 = 32768.0;

fn parse_err(field: &'static str, reason: impl Into<String>) -> Error {
    Error::WavParse {
        field,
        reason: reason.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decode a PCM16 mono RIFF/WAVE byte stream; samples land in `[-1, 1)`.
pub fn read_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(parse_err("riff", "file shorter than the 12-byte RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(parse_err("riff", "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(parse_err("wave", "missing WAVE form type"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                parse_err(
                    "chunk size",
                    format!("chunk `{}` overruns file", String::from_utf8_lossy(id)),
                )
            })?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(parse_err("fmt", format!("chunk too short ({size} bytes)")));
                }
                let format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let bits = u16_at(bytes, body + 14);
                if format != PCM_FORMAT {
                    return Err(Error::WavUnsupported {
                        field: "audio format",
                        value: format as u32,
                    });
                }
                if channels != 1 {
                    return Err(Error::WavUnsupported {
                        field: "channels",
                        value: channels as u32,
                    });
                }
                if bits != 16 {
                    return Err(Error::WavUnsupported {
                        field: "bits per sample",
                        value: bits as u32,
                    });
                }
                if rate == 0 {
                    return Err(parse_err("sample rate", "sample rate is zero"));
                }
                fmt = Some((format, channels, rate, bits));
            }
            b"data" => {
                let (_, _, rate, _) =
                    fmt.ok_or_else(|| parse_err("fmt", "data chunk precedes fmt chunk"))?;
                if !size.is_multiple_of(2) {
                    return Err(parse_err("data", "odd byte count for 16-bit samples"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / SCALE)
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = end + (size & 1);
    }
    Err(parse_err(
        if fmt.is_some() { "data" } else { "fmt" },
        "chunk not found",
    ))
}

/// Encode as canonical 44-byte-header PCM16 mono. Samples are clipped to the PCM range.
pub fn write_wav(wave: &Waveform) -> Vec<u8> {
    let n = wave.samples.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        let q = (s * SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}
