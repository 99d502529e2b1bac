//! Log-mel spectrogram front end.
//!
//! A centred STFT (reflection padding of half a window on each side) with a
//! periodic Hann window yields `floor(N / hop) + 1` frames for an N-sample
//! segment, so the default 256-sample hop gives 16, 32 and 63 frames for
//! 0.5, 1 and 2 second segments at 8 kHz.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::segmentation::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub fft_window: usize,
    pub stft_hop: usize,
    pub mel_bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            fft_window: 1024,
            stft_hop: 256,
            mel_bins: 256,
            fmin: 300.0,
            fmax: 4000.0,
            log_floor: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.fft_window < 2 || self.stft_hop == 0 || self.mel_bins == 0
        {
            return Err(Error::InvalidParams(
                "sample rate, FFT window, STFT hop and mel bin count must be positive".into(),
            ));
        }
        if self.stft_hop > self.fft_window {
            return Err(Error::InvalidParams(format!(
                "STFT hop {} exceeds FFT window {}",
                self.stft_hop, self.fft_window
            )));
        }
        if !(self.fmin >= 0.0
            && self.fmin < self.fmax
            && self.fmax <= self.sample_rate as f64 / 2.0)
        {
            return Err(Error::InvalidBand {
                fmin: self.fmin,
                fmax: self.fmax,
            });
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::InvalidParams("log floor must be positive".into()));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_window / 2 + 1
    }

    /// Frames produced for a segment of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        len / self.stft_hop + 1
    }
}

/// Log-mel matrix of shape `(mel_bins, frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub window_s: f64,
}

impl MelSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn bins(&self) -> usize {
        self.values.rows()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Peak-normalised triangular filters with centres equally spaced in mel
/// between `fmin` and `fmax`. A filter too narrow to cover any linear bin
/// collapses onto the bin nearest its centre.
pub fn mel_filterbank(config: &FeatureConfig) -> Result<Matrix> {
    config.validate()?;
    let bins = config.freq_bins();
    let bin_hz = config.sample_rate as f64 / config.fft_window as f64;
    let lo = hz_to_mel(config.fmin);
    let hi = hz_to_mel(config.fmax);
    let n = config.mel_bins;
    let edges: Vec<f64> = (0..n + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n + 1) as f64))
        .collect();

    let mut fb = Matrix::zeros(n, bins);
    for m in 0..n {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = fb.row_mut(m);
        for (k, w) in row.iter_mut().enumerate() {
            let hz = k as f64 * bin_hz;
            let rise = (hz - left) / (centre - left);
            let fall = (right - hz) / (right - centre);
            *w = rise.min(fall).max(0.0);
        }
        let peak = row.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            row.iter_mut().for_each(|w| *w /= peak);
        } else {
            let nearest = ((centre / bin_hz).round() as usize).min(bins - 1);
            row[nearest] = 1.0;
        }
    }
    Ok(fb)
}

fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Index into `0..len` under numpy-style `reflect` padding (edge not repeated).
fn reflect(idx: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = idx.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Reusable STFT + mel projection with the filterbank, window and FFT plan
/// computed once.
#[derive(Clone)]
pub struct FeatureExtractor {
    config: FeatureConfig,
    filterbank: Matrix,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Result<Self> {
        let filterbank = mel_filterbank(&config)?;
        let window = hann(config.fft_window);
        let fft = FftPlanner::new().plan_fft_forward(config.fft_window);
        Ok(Self {
            config,
            filterbank,
            window,
            fft,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    /// Power spectrogram `|X|^2` of shape `(fft_window/2 + 1, frames)`.
    pub fn stft_power(&self, samples: &[f32]) -> Result<Matrix> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty segment".into()));
        }
        let n_fft = self.config.fft_window;
        let hop = self.config.stft_hop;
        let pad = (n_fft / 2) as isize;
        let frames = self.config.frames_for(samples.len());
        let bins = self.config.freq_bins();
        let mut out = Matrix::zeros(bins, frames);
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for t in 0..frames {
            let origin = (t * hop) as isize - pad;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = samples[reflect(origin + i as isize, samples.len())] as f64;
                *slot = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, c) in buf.iter().take(bins).enumerate() {
                out.set(k, t, c.norm_sqr());
            }
        }
        Ok(out)
    }

    pub fn mel_from_samples(&self, samples: &[f32]) -> Result<MelSpectrogram> {
        let power = self.stft_power(samples)?;
        let mut values = self.filterbank.matmul(&power);
        let floor = self.config.log_floor;
        values
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = v.max(floor).ln());
        Ok(MelSpectrogram {
            values,
            window_s: samples.len() as f64 / self.config.sample_rate as f64,
        })
    }

    pub fn mel_spectrogram(&self, segment: &Segment) -> Result<MelSpectrogram> {
        self.mel_from_samples(&segment.samples)
    }
}

pub fn stft_power(segment: &Segment, config: &FeatureConfig) -> Result<Matrix> {
    FeatureExtractor::new(config.clone())?.stft_power(&segment.samples)
}

pub fn mel_spectrogram(segment: &Segment, config: &FeatureConfig) -> Result<MelSpectrogram> {
    FeatureExtractor::new(config.clone())?.mel_spectrogram(segment)
}
