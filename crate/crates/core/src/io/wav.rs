//! Minimal RIFF/WAVE reader and writer for 16-bit PCM.

use std::path::Path;

use super::{read_file, write_file, ByteReader};
use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const WAV_SAMPLE_RATE: u32 = 22050;
/// Peak level used when a waveform would otherwise clip.
pub const NORMALIZED_PEAK: f32 = 0.95;

struct Format {
    channels: u16,
    sample_rate: u32,
}

/// Decodes PCM16 audio; multi-channel input is averaged to mono.
pub fn decode_wav(bytes: &[u8], path: &Path) -> Result<Waveform> {
    let mut r = ByteReader::new(bytes, path);
    r.expect_magic(b"RIFF")?;
    r.u32("RIFF size")?;
    r.expect_magic(b"WAVE")?;
    let mut format: Option<Format> = None;
    loop {
        if r.remaining() == 0 {
            return Err(r.error_at(r.offset(), "no data chunk"));
        }
        let chunk_at = r.offset();
        let id: [u8; 4] = r.take(4, "chunk id")?.try_into().unwrap();
        let size = r.u32("chunk size")? as usize;
        match &id {
            b"fmt " => {
                let body_at = r.offset();
                if size < 16 {
                    return Err(r.error_at(chunk_at, format!("fmt chunk of {size} bytes is too short")));
                }
                let code = r.u16("format code")?;
                if code != 1 {
                    return Err(r.error_at(
                        body_at,
                        format!("unsupported format code {code:#06x}; only uncompressed PCM is read"),
                    ));
                }
                let channels = r.u16("channel count")?;
                let sample_rate = r.u32("sample rate")?;
                r.u32("byte rate")?;
                r.u16("block align")?;
                let bits_at = r.offset();
                let bits = r.u16("bits per sample")?;
                if bits != 16 {
                    return Err(r.error_at(bits_at, format!("{bits}-bit samples; only 16-bit PCM is read")));
                }
                if channels == 0 {
                    return Err(r.error_at(body_at + 2, "zero channels"));
                }
                r.skip(size - 16 + size % 2, "fmt chunk tail")?;
                format = Some(Format { channels, sample_rate });
            }
            b"data" => {
                let Some(fmt) = format.as_ref() else {
                    return Err(r.error_at(chunk_at, "data chunk before fmt chunk"));
                };
                let frame = 2 * fmt.channels as usize;
                if !size.is_multiple_of(frame) {
                    return Err(r.error_at(
                        chunk_at + 4,
                        format!("data size {size} is not a multiple of the {frame}-byte frame"),
                    ));
                }
                let raw = r.take(size, "sample data")?;
                if fmt.sample_rate != WAV_SAMPLE_RATE {
                    return Err(Error::config(format!(
                        "{}: sample rate {} Hz; only {WAV_SAMPLE_RATE} Hz is supported (resample first)",
                        path.display(),
                        fmt.sample_rate
                    )));
                }
                let ch = fmt.channels as usize;
                if ch > 1 {
                    log::warn!("{}: averaging {ch} channels to mono", path.display());
                }
                let samples = raw
                    .chunks_exact(frame)
                    .map(|f| {
                        let sum: f32 = f
                            .chunks_exact(2)
                            .map(|s| i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0)
                            .sum();
                        sum / ch as f32
                    })
                    .collect();
                return Waveform::new(samples, fmt.sample_rate);
            }
            _ => r.skip(size + size % 2, "chunk body")?,
        }
    }
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    decode_wav(&read_file(path)?, path)
}

/// Outcome of encoding: whether the signal was rescaled to avoid clipping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WavWrite {
    pub samples: usize,
    pub normalized: bool,
}

/// Encodes mono PCM16, rescaling to a 0.95 peak if any sample exceeds full scale.
pub fn encode_wav(x: &Waveform) -> Result<(Vec<u8>, WavWrite)> {
    if !x.samples.is_finite() {
        return Err(Error::Numeric {
            stage: "wav encode".into(),
        });
    }
    let peak = x.samples().iter().fold(0f32, |m, v| m.max(v.abs()));
    let normalized = peak > 1.0;
    let gain = if normalized { NORMALIZED_PEAK / peak } else { 1.0 };
    let data_len = x.len() * 2;
    let riff_len =
        u32::try_from(36 + data_len).map_err(|_| Error::Argument("waveform too long for a WAV file".into()))?;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&riff_len.to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&x.sample_rate.to_le_bytes());
    out.extend_from_slice(&(x.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in x.samples() {
        let q = (v * gain * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    Ok((
        out,
        WavWrite {
            samples: x.len(),
            normalized,
        },
    ))
}

pub fn write_wav(path: &Path, x: &Waveform) -> Result<WavWrite> {
    let (bytes, info) = encode_wav(x)?;
    write_file(path, &bytes)?;
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(channels: u16, rate: u32, frames: &[i16]) -> Vec<u8> {
        let data: Vec<u8> = frames.iter().flat_map(|s| s.to_le_bytes()).collect();
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data.len() as u32 + 12).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        b.extend_from_slice(&(2 * channels).to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        // An unrelated chunk the reader must skip.
        b.extend_from_slice(b"LIST");
        b.extend_from_slice(&3u32.to_le_bytes());
        b.extend_from_slice(&[1, 2, 3, 0]);
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(&data);
        b
    }

    #[test]
    fn reads_mono_and_averages_stereo() {
        let p = Path::new("a.wav");
        let mono = decode_wav(&wav_bytes(1, 22050, &[0, 16384, -32768]), p).unwrap();
        assert_eq!(mono.samples(), &[0.0, 0.5, -1.0]);
        let stereo = decode_wav(&wav_bytes(2, 22050, &[16384, 0, -16384, -16384]), p).unwrap();
        assert_eq!(stereo.samples(), &[0.25, -0.5]);
    }

    #[test]
    fn rejects_with_offsets() {
        let p = Path::new("a.wav");
        let mut compressed = wav_bytes(1, 22050, &[0; 4]);
        compressed[20] = 3;
        assert!(matches!(
            decode_wav(&compressed, p),
            Err(Error::Format { offset: 20, .. })
        ));
        assert!(matches!(decode_wav(b"RIFX", p), Err(Error::Format { offset: 0, .. })));
        let truncated = &wav_bytes(1, 22050, &[0; 4])[..50];
        assert!(matches!(decode_wav(truncated, p), Err(Error::Format { .. })));
        assert!(matches!(
            decode_wav(&wav_bytes(1, 16000, &[0; 4]), p),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn write_read_round_trip() {
        let x = Waveform::new(vec![0.0, 0.25, -0.5, 0.999], 22050).unwrap();
        let (bytes, info) = encode_wav(&x).unwrap();
        assert!(!info.normalized);
        assert_eq!(bytes.len(), 44 + 8);
        let back = decode_wav(&bytes, Path::new("x")).unwrap();
        assert_eq!(encode_wav(&back).unwrap().0.len(), bytes.len());
        for (a, b) in back.samples().iter().zip(x.samples()) {
            assert!((a - b).abs() < 1.0 / 16384.0);
        }
    }

    #[test]
    fn clipping_signal_is_normalized() {
        let x = Waveform::new(vec![0.0, 2.0, -4.0], 22050).unwrap();
        let (bytes, info) = encode_wav(&x).unwrap();
        assert!(info.normalized);
        let back = decode_wav(&bytes, Path::new("x")).unwrap();
        assert!((back.samples()[2] + 0.95).abs() < 1e-4);
    }
}
