//! RIFF/WAVE, PCM format 1, mono, 16-bit little-endian.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{dequantize, quantize, AudioClip, AudioError};

pub const WAV_HEADER_LEN: usize = 44;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedWavEncoding(String),
    #[error("malformed WAV data: {0}")]
    Malformed(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
}

pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = (clip.len() * 2) as u32;
    let rate = clip.sample_rate();
    let mut out = Vec::with_capacity(WAV_HEADER_LEN + data_len as usize);

    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");

    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());

    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in clip.samples() {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct Format {
    audio_format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    let malformed = |m: &str| WavError::Malformed(m.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }

    let mut format: Option<Format> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| malformed("chunk extends past end of file (truncated?)"))?;
        let body = &bytes[body_start..body_end];

        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(malformed("fmt chunk too short"));
                }
                format = Some(Format {
                    audio_format: u16_at(body, 0),
                    channels: u16_at(body, 2),
                    sample_rate: u32_at(body, 4),
                    bits_per_sample: u16_at(body, 14),
                });
            }
            b"data" => {
                let fmt = format.ok_or_else(|| malformed("data chunk before fmt chunk"))?;
                if fmt.audio_format != 1 {
                    return Err(WavError::UnsupportedWavEncoding(format!(
                        "audio format {} (only PCM = 1)",
                        fmt.audio_format
                    )));
                }
                if fmt.channels != 1 {
                    return Err(WavError::UnsupportedWavEncoding(format!(
                        "{} channels (mono only)",
                        fmt.channels
                    )));
                }
                if fmt.bits_per_sample != 16 {
                    return Err(WavError::UnsupportedWavEncoding(format!(
                        "{} bits per sample (16 only)",
                        fmt.bits_per_sample
                    )));
                }
                if body.len() % 2 != 0 {
                    return Err(malformed("odd-length data chunk"));
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|c| dequantize(i16::from_le_bytes([c[0], c[1]])))
                    .collect();
                return Ok(AudioClip::new(samples, fmt.sample_rate)?);
            }
            _ => {}
        }
        // chunks are padded to even length
        pos = body_end + (size & 1);
    }
    Err(malformed("no data chunk"))
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<(), WavError> {
    let path = path.as_ref();
    fs::write(path, encode_wav(clip)).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, WavError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_wav(&bytes)
}
