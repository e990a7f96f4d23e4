//! Minimal RIFF/WAVE reader: 16-bit integer or 32-bit float linear PCM,
//! any channel count (downmixed by averaging).

use std::path::{Path, PathBuf};

use thiserror::Error;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad WAV header at byte offset {offset}: {message}")]
    Header { offset: usize, message: String },
    #[error("unsupported WAV encoding: format tag {format:#06x}, {bits} bits per sample")]
    Unsupported { format: u16, bits: u16 },
    #[error("WAV data chunk is empty")]
    EmptyData,
}

fn header(offset: usize, message: impl Into<String>) -> WavError {
    WavError::Header {
        offset,
        message: message.into(),
    }
}

fn u16_at(b: &[u8], off: usize) -> Result<u16, WavError> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| header(off, "truncated"))
}

fn u32_at(b: &[u8], off: usize) -> Result<u32, WavError> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| header(off, "truncated"))
}

struct Format {
    tag: u16,
    channels: u16,
    rate: u32,
    bits: u16,
}

/// Returns mono samples in [-1, 1] and the sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32), WavError> {
    let bytes = std::fs::read(path).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_wav_bytes(&bytes)
}

pub fn read_wav_bytes(b: &[u8]) -> Result<(Vec<f64>, u32), WavError> {
    if b.get(0..4) != Some(b"RIFF") {
        return Err(header(0, "missing RIFF magic"));
    }
    if b.get(8..12) != Some(b"WAVE") {
        return Err(header(8, "missing WAVE form type"));
    }
    let mut off = 12;
    let mut fmt: Option<Format> = None;
    loop {
        if off + 8 > b.len() {
            return Err(header(off, "no data chunk found"));
        }
        let id = &b[off..off + 4];
        let size = u32_at(b, off + 4)? as usize;
        let body = off + 8;
        match id {
            b"fmt " => {
                if size < 16 || body + size > b.len() {
                    return Err(header(body, "truncated fmt chunk"));
                }
                let mut tag = u16_at(b, body)?;
                let bits = u16_at(b, body + 14)?;
                if tag == FORMAT_EXTENSIBLE {
                    // Sub-format GUID starts 24 bytes into the extended fmt body.
                    if size < 40 {
                        return Err(header(body, "truncated extensible fmt chunk"));
                    }
                    tag = u16_at(b, body + 24)?;
                }
                fmt = Some(Format {
                    tag,
                    channels: u16_at(b, body + 2)?,
                    rate: u32_at(b, body + 4)?,
                    bits,
                });
            }
            b"data" => {
                let f = fmt.ok_or_else(|| header(off, "data chunk before fmt chunk"))?;
                if size == 0 {
                    return Err(WavError::EmptyData);
                }
                if body + size > b.len() {
                    return Err(header(body, format!("data chunk declares {size} bytes, file is truncated")));
                }
                return decode(&b[body..body + size], &f, body);
            }
            _ => {}
        }
        off = body + size + (size & 1);
    }
}

fn decode(data: &[u8], f: &Format, offset: usize) -> Result<(Vec<f64>, u32), WavError> {
    let width = match (f.tag, f.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_FLOAT, 32) => 4,
        (format, bits) => return Err(WavError::Unsupported { format, bits }),
    };
    if f.channels == 0 || f.rate == 0 {
        return Err(header(offset, "zero channels or sample rate"));
    }
    let frame = width * f.channels as usize;
    if data.len() % frame != 0 {
        return Err(header(offset + data.len(), "data chunk ends mid-frame"));
    }
    let sample = |s: &[u8]| -> f64 {
        if width == 2 {
            f64::from(i16::from_le_bytes([s[0], s[1]])) / 32768.0
        } else {
            f64::from(f32::from_le_bytes([s[0], s[1], s[2], s[3]])).clamp(-1.0, 1.0)
        }
    };
    let mono = data
        .chunks_exact(frame)
        .map(|fr| fr.chunks_exact(width).map(sample).sum::<f64>() / f64::from(f.channels))
        .collect();
    Ok((mono, f.rate))
}
