use std::fs;
use std::path::Path;

use super::{AudioBuffer, AudioError};

const PCM: u16 = 1;

fn u16_at(b: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([b[off], b[off + 1]])
}

fn u32_at(b: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

struct Format {
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

fn parse_fmt(body: &[u8]) -> Result<Format, AudioError> {
    if body.len() < 16 {
        return Err(AudioError::Truncated(
            "fmt chunk shorter than 16 bytes".into(),
        ));
    }
    let audio_format = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if audio_format != PCM {
        return Err(AudioError::UnsupportedFormat(format!(
            "audio format {audio_format} is not PCM"
        )));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{channels} channels, expected mono"
        )));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{bits} bits per sample, expected 16"
        )));
    }
    if sample_rate == 0 {
        return Err(AudioError::UnsupportedFormat("sample rate 0".into()));
    }
    Ok(Format {
        channels,
        sample_rate,
        bits,
    })
}

/// Parses a RIFF/WAVE byte image (PCM, mono, 16-bit).
pub(crate) fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWav);
    }
    let mut pos = 12;
    let mut format: Option<Format> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        match id {
            b"fmt " => {
                if size > available {
                    return Err(AudioError::Truncated("fmt chunk".into()));
                }
                format = Some(parse_fmt(&bytes[body_start..body_start + size])?);
            }
            b"data" => {
                let fmt = format.ok_or_else(|| {
                    AudioError::UnsupportedFormat("data chunk precedes fmt chunk".into())
                })?;
                if size > available {
                    return Err(AudioError::Truncated(format!(
                        "data chunk declares {size} bytes, {available} present"
                    )));
                }
                if !size.is_multiple_of(2) {
                    return Err(AudioError::Truncated(
                        "odd data length for 16-bit samples".into(),
                    ));
                }
                debug_assert!(fmt.channels == 1 && fmt.bits == 16);
                let samples = bytes[body_start..body_start + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return AudioBuffer::new(samples, fmt.sample_rate);
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_start + size + (size & 1);
    }
    Err(AudioError::Truncated("no data chunk".into()))
}

pub(crate) fn encode_wav(buffer: &AudioBuffer) -> Vec<u8> {
    let data_len = buffer.len() * 2;
    let rate = buffer.sample_rate_hz();
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in buffer.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, AudioError> {
    decode_wav(&fs::read(path)?)
}

pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>) -> Result<(), AudioError> {
    if buffer.is_empty() {
        return Err(AudioError::EmptyBuffer);
    }
    fs::write(path, encode_wav(buffer))?;
    Ok(())
}
