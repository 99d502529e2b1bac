//! Deterministic synthetic music corpus and background-noise pools.
//!
//! Each clip sums several harmonic voices playing tempo-quantised note
//! sequences over a low-level filtered noise bed. Every clip is a pure
//! function of `(master_seed, split, ordinal)`, so splits never share a
//! random stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::training::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Reference,
    Distractor,
    TrainNoise,
    QueryNoise,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Reference => 2,
            Split::Distractor => 3,
            Split::TrainNoise => 4,
            Split::QueryNoise => 5,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Reference => "ref",
            Split::Distractor => "dist",
            Split::TrainNoise => "noise-train",
            Split::QueryNoise => "noise-query",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_ref: usize,
    pub n_dist: usize,
    pub clip_len_s: f64,
    pub sample_rate: u32,
    pub min_voices: usize,
    pub max_voices: usize,
    pub max_harmonics: usize,
    pub tempo_bpm: [f64; 2],
    /// RMS of the filtered noise bed relative to full scale.
    pub noise_floor: f64,
    pub n_train_noise: usize,
    pub n_query_noise: usize,
    pub noise_len_s: f64,
    pub master_seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_train: 100,
            n_ref: 50,
            n_dist: 50,
            clip_len_s: 10.0,
            sample_rate: 8000,
            min_voices: 3,
            max_voices: 8,
            max_harmonics: 5,
            tempo_bpm: [80.0, 160.0],
            noise_floor: 0.01,
            n_train_noise: 8,
            n_query_noise: 8,
            noise_len_s: 10.0,
            master_seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_len_s > 0.0) || self.sample_rate == 0 || !(self.noise_len_s > 0.0) {
            return Err(Error::InvalidParams(
                "clip lengths and rate must be positive".into(),
            ));
        }
        if self.min_voices == 0 || self.min_voices > self.max_voices || self.max_harmonics == 0 {
            return Err(Error::InvalidParams(
                "voice and harmonic counts are inconsistent".into(),
            ));
        }
        let [lo, hi] = self.tempo_bpm;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::InvalidParams("tempo range is invalid".into()));
        }
        if !(self.noise_floor >= 0.0) {
            return Err(Error::InvalidParams(
                "noise floor must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn clip_samples(&self) -> usize {
        (self.clip_len_s * self.sample_rate as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusTrack {
    pub id: u32,
    pub name: String,
    pub clip: AudioClip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<CorpusTrack>,
    pub reference: Vec<CorpusTrack>,
    pub distractor: Vec<CorpusTrack>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePools {
    pub train: Vec<AudioClip>,
    pub query: Vec<AudioClip>,
}

fn one_pole_noise(rng: &mut ChaCha8Rng, n: usize, cutoff_hz: f64, rate: f64) -> Vec<f64> {
    let alpha = 1.0 - (-2.0 * std::f64::consts::PI * cutoff_hz / rate).exp();
    let mut state = 0.0;
    (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            state += alpha * (w - state);
            state
        })
        .collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

fn peak_normalize(mut x: Vec<f64>, peak: f64, rate: u32) -> AudioClip {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / max);
    }
    AudioClip::new(x.into_iter().map(|v| v as f32).collect(), rate).expect("positive sample rate")
}

/// One synthetic music clip.
pub fn synth_track(spec: &CorpusSpec, split: Split, ordinal: usize) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        spec.master_seed,
        split.stream(),
        ordinal as u64,
    ]));
    let rate = spec.sample_rate as f64;
    let n = spec.clip_samples();
    let [tlo, thi] = spec.tempo_bpm;
    let bpm = if thi > tlo {
        rng.random_range(tlo..thi)
    } else {
        tlo
    };
    let beat = 60.0 / bpm;
    let voices = rng.random_range(spec.min_voices..=spec.max_voices);
    let nyquist = rate / 2.0;
    let mut mix = vec![0.0f64; n];

    for _ in 0..voices {
        let base_midi: f64 = rng.random_range(43.0..84.0);
        let harmonics = rng.random_range(1..=spec.max_harmonics);
        let rolloff: f64 = rng.random_range(0.4..0.9);
        let gain: f64 = rng.random_range(0.3..1.0);
        let decay: f64 = rng.random_range(1.5..8.0);
        let mut t = 0usize;
        let mut phases = vec![0.0f64; harmonics];
        while t < n {
            let beats = [0.5, 1.0, 1.0, 2.0][rng.random_range(0..4)];
            let dur = ((beats * beat * rate).round() as usize).max(1);
            let end = (t + dur).min(n);
            let rest = rng.random_bool(0.15);
            let midi = base_midi + rng.random_range(-7i32..=7) as f64;
            let f0 = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
            for (h, phase) in phases.iter_mut().enumerate() {
                let freq = f0 * (h + 1) as f64;
                let step = 2.0 * std::f64::consts::PI * freq / rate;
                let amp = gain * rolloff.powi(h as i32);
                for (k, sample) in mix[t..end].iter_mut().enumerate() {
                    *phase += step;
                    if rest || freq >= nyquist {
                        continue;
                    }
                    let age = k as f64 / rate;
                    let attack = (age / 0.01).min(1.0);
                    *sample += amp * attack * (-decay * age).exp() * phase.sin();
                }
            }
            t = end;
        }
    }

    let peak_before = mix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-9);
    if spec.noise_floor > 0.0 {
        let cutoff = rng.random_range(500.0..3000.0);
        let bed = one_pole_noise(&mut rng, n, cutoff, rate);
        let scale = spec.noise_floor * peak_before / rms(&bed).max(1e-12);
        mix.iter_mut().zip(&bed).for_each(|(m, b)| *m += b * scale);
    }
    peak_normalize(mix, 0.9, spec.sample_rate)
}

/// One background-noise clip: coloured noise, tonal babble or hum.
pub fn synth_noise(spec: &CorpusSpec, split: Split, ordinal: usize) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        spec.master_seed,
        split.stream(),
        ordinal as u64,
    ]));
    let rate = spec.sample_rate as f64;
    let n = (spec.noise_len_s * rate).round() as usize;
    let cutoff = rng.random_range(300.0..3800.0);
    let mut x = one_pole_noise(&mut rng, n, cutoff, rate);
    match rng.random_range(0..3) {
        0 => {}
        1 => {
            // babble: amplitude-modulated random tone bursts
            for _ in 0..rng.random_range(3..8) {
                let f = rng.random_range(150.0..1500.0);
                let am = rng.random_range(1.0..6.0);
                let a = rng.random_range(0.5..2.0);
                for (i, v) in x.iter_mut().enumerate() {
                    let t = i as f64 / rate;
                    let env = 0.5 + 0.5 * (2.0 * std::f64::consts::PI * am * t).sin();
                    *v += a * env * (2.0 * std::f64::consts::PI * f * t).sin();
                }
            }
        }
        _ => {
            let hum = rng.random_range(50.0..120.0);
            for (i, v) in x.iter_mut().enumerate() {
                let t = i as f64 / rate;
                for h in 1..4 {
                    *v += 1.5 / h as f64 * (2.0 * std::f64::consts::PI * hum * h as f64 * t).sin();
                }
            }
        }
    }
    peak_normalize(x, 0.9, spec.sample_rate)
}

fn tracks(spec: &CorpusSpec, split: Split, count: usize, first_id: u32) -> Vec<CorpusTrack> {
    (0..count)
        .map(|i| CorpusTrack {
            id: first_id + i as u32,
            name: format!("{}-{i:04}", split.prefix()),
            clip: synth_track(spec, split, i),
        })
        .collect()
}

/// Generates all three splits. Reference tracks take ids `0..n_ref`,
/// distractors follow them; training ids are a separate namespace.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    Ok(Corpus {
        train: tracks(spec, Split::Train, spec.n_train, 0),
        reference: tracks(spec, Split::Reference, spec.n_ref, 0),
        distractor: tracks(spec, Split::Distractor, spec.n_dist, spec.n_ref as u32),
    })
}

/// Disjoint training and held-out query noise pools.
pub fn generate_noise_pools(spec: &CorpusSpec) -> Result<NoisePools> {
    spec.validate()?;
    Ok(NoisePools {
        train: (0..spec.n_train_noise)
            .map(|i| synth_noise(spec, Split::TrainNoise, i))
            .collect(),
        query: (0..spec.n_query_noise)
            .map(|i| synth_noise(spec, Split::QueryNoise, i))
            .collect(),
    })
}
