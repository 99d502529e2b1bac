//! Sliding-window segmentation and the frame/segment count formulas.

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};

// Guards floor() against representation error in decimal second values.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    /// Segment length W in seconds.
    pub window_s: f64,
    /// Hop h between segment starts in seconds.
    pub hop_s: f64,
    /// Query length L in seconds, when segmenting a query.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_len_s: Option<f64>,
}

impl SegmentationParams {
    pub fn new(window_s: f64, hop_s: f64) -> Result<Self> {
        let p = Self {
            window_s,
            hop_s,
            query_len_s: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_query_len(mut self, query_len_s: f64) -> Result<Self> {
        self.query_len_s = Some(query_len_s);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.hop_s > 0.0) {
            return Err(Error::InvalidParams(format!(
                "window {} s and hop {} s must be positive",
                self.window_s, self.hop_s
            )));
        }
        if let Some(l) = self.query_len_s {
            if l + EPS < self.window_s {
                return Err(Error::InvalidParams(format!(
                    "query length {l} s is shorter than window {} s",
                    self.window_s
                )));
            }
        }
        Ok(())
    }

    pub fn window_samples(&self, sample_rate: u32) -> Result<usize> {
        whole_samples(self.window_s, sample_rate)
    }

    pub fn hop_samples(&self, sample_rate: u32) -> Result<usize> {
        whole_samples(self.hop_s, sample_rate)
    }
}

/// Converts seconds to a sample count, failing unless it is a whole number.
pub fn whole_samples(seconds: f64, sample_rate: u32) -> Result<usize> {
    let exact = seconds * sample_rate as f64;
    let rounded = exact.round();
    if rounded <= 0.0 || (exact - rounded).abs() > 1e-6 {
        return Err(Error::InvalidParams(format!(
            "{seconds} s is not a positive whole number of samples at {sample_rate} Hz"
        )));
    }
    Ok(rounded as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f32>,
    pub track_id: u32,
    pub index: u32,
    pub start_time_s: f64,
}

/// Number of W-second windows at hop h that fit in L seconds:
/// `floor((L - W) / h) + 1`.
pub fn segment_count(query_len_s: f64, window_s: f64, hop_s: f64) -> Result<usize> {
    SegmentationParams {
        window_s,
        hop_s,
        query_len_s: Some(query_len_s),
    }
    .validate()?;
    Ok((((query_len_s - window_s) / hop_s).max(0.0) + EPS).floor() as usize + 1)
}

/// Columns produced by a centred STFT over a W-second segment:
/// `floor(W * f / hop) + 1`.
pub fn num_stft_frames(window_s: f64, sample_rate: u32, stft_hop: usize) -> Result<usize> {
    if !(window_s > 0.0) || sample_rate == 0 || stft_hop == 0 {
        return Err(Error::InvalidParams(
            "window, sample rate and STFT hop must be positive".into(),
        ));
    }
    Ok((window_s * sample_rate as f64 / stft_hop as f64 + EPS).floor() as usize + 1)
}

/// Cuts a clip into W-second segments every h seconds, dropping any tail
/// shorter than W.
pub fn slice_segments(
    clip: &AudioClip,
    track_id: u32,
    params: &SegmentationParams,
    sample_rate: u32,
) -> Result<Vec<Segment>> {
    params.validate()?;
    clip.require_rate(sample_rate)?;
    let win = params.window_samples(sample_rate)?;
    let hop = params.hop_samples(sample_rate)?;
    let n = clip.len();
    if n < win {
        return Err(Error::ClipTooShort {
            duration_s: clip.duration_seconds(),
            window_s: params.window_s,
        });
    }
    let count = (n - win) / hop + 1;
    let samples = clip.samples();
    Ok((0..count)
        .map(|i| {
            let start = i * hop;
            Segment {
                samples: samples[start..start + win].to_vec(),
                track_id,
                index: i as u32,
                start_time_s: i as f64 * params.hop_s,
            }
        })
        .collect())
}
