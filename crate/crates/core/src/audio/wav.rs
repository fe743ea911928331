//! RIFF/WAVE reading (PCM16, IEEE float32; any channel count) and writing.

use std::path::Path;

use crate::error::{Error, Result};

use super::Waveform;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

struct Fmt {
    format: SampleFormat,
    channels: u16,
    sample_rate: u32,
}

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a WAV file, scaling to `[-1, 1]` and averaging channels to mono.
pub fn load_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes, path)
}

pub fn parse_wav(b: &[u8], path: &Path) -> Result<Waveform> {
    let bad = |offset: usize, reason: &str| Error::format(path, offset as u64, reason);
    if b.len() < 12 {
        return Err(bad(0, "shorter than a RIFF header"));
    }
    if &b[0..4] != b"RIFF" {
        return Err(bad(0, "missing RIFF tag"));
    }
    if &b[8..12] != b"WAVE" {
        return Err(bad(8, "missing WAVE tag"));
    }
    let mut pos = 12;
    let mut fmt: Option<Fmt> = None;
    while pos + 8 <= b.len() {
        let id = &b[pos..pos + 4];
        let size = le_u32(b, pos + 4) as usize;
        let body = pos + 8;
        let end = body
            .checked_add(size)
            .filter(|&e| e <= b.len())
            .ok_or_else(|| bad(pos + 4, "chunk extends past end of file"))?;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(bad(pos + 4, "fmt chunk shorter than 16 bytes"));
                }
                let mut tag = le_u16(b, body);
                if tag == FORMAT_EXTENSIBLE {
                    if size < 40 {
                        return Err(bad(body, "extensible fmt chunk too short"));
                    }
                    tag = le_u16(b, body + 24);
                }
                let channels = le_u16(b, body + 2);
                let sample_rate = le_u32(b, body + 4);
                let bits = le_u16(b, body + 14);
                let format = match (tag, bits) {
                    (FORMAT_PCM, 16) => SampleFormat::Pcm16,
                    (FORMAT_FLOAT, 32) => SampleFormat::Float32,
                    _ => {
                        return Err(bad(
                            body,
                            &format!("unsupported codec: format tag {tag}, {bits} bits"),
                        ))
                    }
                };
                if channels == 0 {
                    return Err(bad(body + 2, "zero channels"));
                }
                if sample_rate == 0 {
                    return Err(bad(body + 4, "zero sample rate"));
                }
                fmt = Some(Fmt {
                    format,
                    channels,
                    sample_rate,
                });
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| bad(pos, "data chunk before fmt chunk"))?;
                let data = &b[body..end];
                let width = match fmt.format {
                    SampleFormat::Pcm16 => 2,
                    SampleFormat::Float32 => 4,
                };
                let frame = width * fmt.channels as usize;
                if data.len() % frame != 0 {
                    return Err(bad(end, "data chunk is not a whole number of frames"));
                }
                let decoded: Vec<f32> = match fmt.format {
                    SampleFormat::Pcm16 => data
                        .chunks_exact(2)
                        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
                        .collect(),
                    SampleFormat::Float32 => data
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                };
                let ch = fmt.channels as usize;
                let mono = if ch == 1 {
                    decoded
                } else {
                    decoded
                        .chunks_exact(ch)
                        .map(|f| f.iter().sum::<f32>() / ch as f32)
                        .collect()
                };
                if mono.is_empty() {
                    return Err(bad(body, "no samples"));
                }
                return Waveform::new(mono, fmt.sample_rate);
            }
            _ => {}
        }
        pos = end + (size & 1);
    }
    Err(bad(pos.min(b.len()), "no data chunk"))
}

/// Encodes mono samples as a WAV byte buffer. PCM16 clips to `[-1, 1]`.
pub fn encode_wav(samples: &[f32], sample_rate: u32, format: SampleFormat) -> Vec<u8> {
    let (tag, width) = match format {
        SampleFormat::Pcm16 => (FORMAT_PCM, 2u16),
        SampleFormat::Float32 => (FORMAT_FLOAT, 4u16),
    };
    let data_len = samples.len() as u32 * width as u32;
    let mut b = Vec::with_capacity(44 + data_len as usize);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&(36 + data_len).to_le_bytes());
    b.extend_from_slice(b"WAVE");
    b.extend_from_slice(b"fmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&tag.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&sample_rate.to_le_bytes());
    b.extend_from_slice(&(sample_rate * width as u32).to_le_bytes());
    b.extend_from_slice(&width.to_le_bytes());
    b.extend_from_slice(&(width * 8).to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        match format {
            SampleFormat::Pcm16 => {
                let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
                b.extend_from_slice(&v.to_le_bytes());
            }
            SampleFormat::Float32 => b.extend_from_slice(&s.to_le_bytes()),
        }
    }
    b
}

pub fn write_wav(path: &Path, wave: &Waveform, format: SampleFormat) -> Result<()> {
    std::fs::write(path, encode_wav(wave.samples(), wave.sample_rate(), format))
        .map_err(|e| Error::io(path, e))
}
