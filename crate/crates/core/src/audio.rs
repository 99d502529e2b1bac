//! Mono floating-point audio clips and RIFF/WAVE input/output.
//!
//! Everything downstream works on [`AudioClip`]s at [`CANONICAL_RATE`]. The
//! library never resamples implicitly: callers at the ingestion boundary use
//! [`resample`] and every other stage rejects mismatched rates.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Sampling rate every feature, segment and database assumes.
pub const CANONICAL_RATE: u32 = 8000;

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, clamping every sample into `[-1, 1]`.
    pub fn new(mut samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParams("sample rate must be positive".into()));
        }
        for s in &mut samples {
            *s = if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) };
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Fails with [`Error::RateMismatch`] unless the clip is at `expected` Hz.
    pub fn require_rate(&self, expected: u32) -> Result<()> {
        if self.sample_rate != expected {
            return Err(Error::RateMismatch {
                expected,
                got: self.sample_rate,
            });
        }
        Ok(())
    }

    /// Sub-clip of `len` samples starting at sample `start`.
    pub fn slice(&self, start: usize, len: usize) -> Result<AudioClip> {
        let end = start + len;
        if end > self.samples.len() {
            let rate = self.sample_rate as f64;
            return Err(Error::OutOfRange {
                start_s: start as f64 / rate,
                end_s: end as f64 / rate,
                duration_s: self.duration_seconds(),
            });
        }
        Ok(AudioClip {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        })
    }
}

struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    block_align: u16,
    bits: u16,
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode_wav(&bytes)
}

/// Decodes an in-memory RIFF/WAVE file into a mono clip.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    let malformed = |msg: &str| Error::MalformedWav(msg.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| malformed("chunk extends past end of file"))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }

    let fmt = fmt.ok_or_else(|| malformed("missing fmt chunk"))?;
    let data = data.ok_or_else(|| malformed("missing data chunk"))?;
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(malformed(&format!("{} channels", fmt.channels)));
    }
    if fmt.sample_rate == 0 {
        return Err(malformed("zero sample rate"));
    }
    let bytes_per_sample = match (fmt.format, fmt.bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_IEEE_FLOAT, 32) => 4,
        (format, bits) => return Err(Error::UnsupportedEncoding { format, bits }),
    };
    let channels = fmt.channels as usize;
    let frame_bytes = bytes_per_sample * channels;
    if fmt.block_align as usize != frame_bytes {
        return Err(malformed(
            "block align disagrees with channels and bit depth",
        ));
    }
    let frames = data.len() / frame_bytes;
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }

    let mut cursor = &data[..frames * frame_bytes];
    let mut samples = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut acc = 0.0f32;
        for _ in 0..channels {
            let v = if bytes_per_sample == 2 {
                cursor.read_i16::<LittleEndian>()? as f32 / 32768.0
            } else {
                cursor.read_f32::<LittleEndian>()?
            };
            acc += v;
        }
        samples.push(if channels == 1 {
            acc
        } else {
            acc / channels as f32
        });
    }
    AudioClip::new(samples, fmt.sample_rate)
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::MalformedWav("fmt chunk too short".into()));
    }
    let mut r = body;
    let mut format = r.read_u16::<LittleEndian>()?;
    let channels = r.read_u16::<LittleEndian>()?;
    let sample_rate = r.read_u32::<LittleEndian>()?;
    let _byte_rate = r.read_u32::<LittleEndian>()?;
    let block_align = r.read_u16::<LittleEndian>()?;
    let bits = r.read_u16::<LittleEndian>()?;
    if format == FORMAT_EXTENSIBLE {
        // cbSize(2) validBits(2) channelMask(4) then the sub-format GUID,
        // whose first two bytes carry the plain format code.
        if body.len() < 26 {
            return Err(Error::MalformedWav("truncated extensible fmt chunk".into()));
        }
        format = u16::from_le_bytes([body[24], body[25]]);
    }
    Ok(FmtChunk {
        format,
        channels,
        sample_rate,
        block_align,
        bits,
    })
}

/// Writes the clip as a mono IEEE-float-32 WAV file, atomically.
pub fn save_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, &encode_wav(clip)?)
}

pub fn encode_wav(clip: &AudioClip) -> Result<Vec<u8>> {
    if clip.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let data_len = u32::try_from(clip.len() * 4)
        .map_err(|_| Error::InvalidInput("clip too long for a WAV file".into()))?;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.write_u32::<LittleEndian>(36 + data_len)?;
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.write_u32::<LittleEndian>(16)?;
    out.write_u16::<LittleEndian>(FORMAT_IEEE_FLOAT)?;
    out.write_u16::<LittleEndian>(1)?;
    out.write_u32::<LittleEndian>(clip.sample_rate)?;
    out.write_u32::<LittleEndian>(clip.sample_rate * 4)?;
    out.write_u16::<LittleEndian>(4)?;
    out.write_u16::<LittleEndian>(32)?;
    out.extend_from_slice(b"data");
    out.write_u32::<LittleEndian>(data_len)?;
    for &s in &clip.samples {
        out.write_f32::<LittleEndian>(s)?;
    }
    Ok(out)
}

/// Linear-interpolation resampling to `target_rate`.
///
/// Output length is `round(len * target / source)`; output sample `n` sits at
/// time `n / target_rate` and is interpolated between its two neighbouring
/// source samples (the last source sample is held past the end).
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidParams("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let src = &clip.samples;
    let ratio = clip.sample_rate as f64 / target_rate as f64;
    let out_len =
        (src.len() as f64 * target_rate as f64 / clip.sample_rate as f64).round() as usize;
    let last = src.len().saturating_sub(1);
    let out = (0..out_len)
        .map(|n| {
            let pos = n as f64 * ratio;
            let i = (pos.floor() as usize).min(last);
            let frac = pos - i as f64;
            let a = src[i] as f64;
            let b = src[(i + 1).min(last)] as f64;
            if frac == 0.0 {
                a as f32
            } else {
                (a + (b - a) * frac) as f32
            }
        })
        .collect();
    AudioClip::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16_wav(channels: u16, rate: u32, frames: &[Vec<i16>]) -> Vec<u8> {
        let data_len = (frames.len() * channels as usize * 2) as u32;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.write_u32::<LittleEndian>(36 + data_len).unwrap();
        out.extend_from_slice(b"WAVEfmt ");
        out.write_u32::<LittleEndian>(16).unwrap();
        out.write_u16::<LittleEndian>(FORMAT_PCM).unwrap();
        out.write_u16::<LittleEndian>(channels).unwrap();
        out.write_u32::<LittleEndian>(rate).unwrap();
        out.write_u32::<LittleEndian>(rate * channels as u32 * 2)
            .unwrap();
        out.write_u16::<LittleEndian>(channels * 2).unwrap();
        out.write_u16::<LittleEndian>(16).unwrap();
        out.extend_from_slice(b"data");
        out.write_u32::<LittleEndian>(data_len).unwrap();
        for f in frames {
            for &s in f {
                out.write_i16::<LittleEndian>(s).unwrap();
            }
        }
        out
    }

    #[test]
    fn pcm16_scaling() {
        let clip = decode_wav(&pcm16_wav(1, 8000, &[vec![16384], vec![-32768]])).unwrap();
        assert_eq!(clip.samples(), &[0.5, -1.0]);
        assert_eq!(clip.sample_rate(), 8000);
    }

    #[test]
    fn stereo_is_averaged() {
        let s = (0.4f32 * 32768.0) as i16;
        let clip = decode_wav(&pcm16_wav(2, 16000, &[vec![s, -s], vec![s, -s]])).unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.0]);
        assert_eq!(clip.sample_rate(), 16000);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            decode_wav(b"RIFX...."),
            Err(Error::MalformedWav(_))
        ));
        let empty = pcm16_wav(1, 8000, &[]);
        assert!(matches!(decode_wav(&empty), Err(Error::EmptyAudio)));

        // mu-law (format 7) is a compressed codec
        let mut mulaw = pcm16_wav(1, 8000, &[vec![1]]);
        mulaw[20] = 7;
        assert!(matches!(
            decode_wav(&mulaw),
            Err(Error::UnsupportedEncoding { format: 7, .. })
        ));

        let mut truncated = pcm16_wav(1, 8000, &[vec![1], vec![2]]);
        truncated.truncate(truncated.len() - 3);
        assert!(matches!(
            decode_wav(&truncated),
            Err(Error::MalformedWav(_))
        ));
    }

    #[test]
    fn float_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let samples: Vec<f32> = (0..1001).map(|i| ((i as f32) * 0.37).sin() * 0.9).collect();
        let clip = AudioClip::new(samples, 22050).unwrap();
        save_wav(&clip, &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate(), 22050);
        assert_eq!(back.len(), clip.len());
        assert!(back
            .samples()
            .iter()
            .zip(clip.samples())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn silence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        save_wav(&AudioClip::new(vec![0.0; 8000], 8000).unwrap(), &path).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.len(), 8000);
        assert!(back.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn save_rejects_empty_clip() {
        let clip = AudioClip::new(vec![], 8000).unwrap();
        assert!(matches!(encode_wav(&clip), Err(Error::EmptyAudio)));
    }

    #[test]
    fn ingestion_clamps() {
        let clip = AudioClip::new(vec![1.5, -2.0, 0.25], 8000).unwrap();
        assert_eq!(clip.samples(), &[1.0, -1.0, 0.25]);
    }

    #[test]
    fn resample_constant() {
        let clip = AudioClip::new(vec![0.3; 4410], 44100).unwrap();
        let out = resample(&clip, 8000).unwrap();
        assert_eq!(out.len(), 800);
        assert!(out.samples().iter().all(|&s| s == 0.3));
    }

    #[test]
    fn resample_halves_length() {
        let clip = AudioClip::new(vec![0.1; 16000], 16000).unwrap();
        assert_eq!(resample(&clip, 8000).unwrap().len(), 8000);
    }

    #[test]
    fn resample_sine_matches_analytic() {
        let tone = |rate: u32, n: usize| -> Vec<f32> {
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / rate as f64).sin() as f32)
                .collect()
        };
        let clip = AudioClip::new(tone(16000, 16000), 16000).unwrap();
        let out = resample(&clip, 8000).unwrap();
        let oracle = tone(8000, 8000);
        let max_err = out
            .samples()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err < 0.01, "max error {max_err}");
    }

    #[test]
    fn resample_up_and_down() {
        let f = 8000u32;
        // 700 Hz is below f/4
        let x: Vec<f32> = (0..4000)
            .map(|i| {
                (0.8 * (2.0 * std::f64::consts::PI * 700.0 * i as f64 / f as f64).sin()) as f32
            })
            .collect();
        let clip = AudioClip::new(x, f).unwrap();
        let up = resample(&clip, 2 * f).unwrap();
        let back = resample(&up, f).unwrap();
        assert_eq!(back.len(), clip.len());
        let max_err = back
            .samples()
            .iter()
            .zip(clip.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 0.02, "max error {max_err}");
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let clip = AudioClip::new(vec![0.0; 10], 16000).unwrap();
        assert!(matches!(
            clip.require_rate(CANONICAL_RATE),
            Err(Error::RateMismatch {
                expected: 8000,
                got: 16000
            })
        ));
    }
}
