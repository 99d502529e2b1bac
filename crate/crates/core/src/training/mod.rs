//! Contrastive training of the encoder on clean/distorted segment pairs.

mod augment;
mod loss;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::encoder::{backward_batch, init_weights, EncoderConfig, EncoderWeights, ForwardCache};
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, MelSpectrogram};
use crate::segmentation::{Segment, SegmentationParams};

pub use crate::encoder::{load_checkpoint, save_checkpoint};
pub use augment::{
    augment, convolve_truncated, power, scale_noise_for_snr, synth_impulse_responses, AugmentConfig,
};
pub use loss::{ntxent_loss, ContrastiveLoss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_pairs: 16,
            learning_rate: 1e-3,
            temperature: 0.05,
            steps: 500,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_pairs < 2 {
            return Err(Error::InvalidParams(format!(
                "batch of {} pairs leaves no negatives",
                self.batch_pairs
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParams("temperature must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidParams(
                "learning rate must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize, config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub entries: Vec<(usize, f64)>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (step, loss) in &self.entries {
            out.push_str(&format!("{step},{loss}\n"));
        }
        out
    }

    pub fn mean_loss(&self, range: std::ops::Range<usize>) -> f64 {
        let slice = &self.entries[range];
        slice.iter().map(|(_, l)| l).sum::<f64>() / slice.len() as f64
    }
}

/// Clips to sample training segments from, plus the distortion pools.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub clips: &'a [AudioClip],
    pub noise_pool: &'a [AudioClip],
    pub ir_pool: &'a [Vec<f32>],
}

/// Seed for a derived random stream; SplitMix64 finaliser over the inputs.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn segment_at(
    clip: &AudioClip,
    clip_idx: usize,
    index: usize,
    win: usize,
    hop: usize,
    hop_s: f64,
) -> Segment {
    let start = index * hop;
    Segment {
        samples: clip.samples()[start..start + win].to_vec(),
        track_id: clip_idx as u32,
        index: index as u32,
        start_time_s: index as f64 * hop_s,
    }
}

/// Trains a fresh encoder.
pub fn train(
    data: &TrainingData<'_>,
    features: &FeatureExtractor,
    encoder_config: &EncoderConfig,
    augment_config: &AugmentConfig,
    train_config: &TrainConfig,
    segmentation: &SegmentationParams,
) -> Result<(EncoderWeights, TrainingLog)> {
    let weights = init_weights(encoder_config)?;
    train_from(
        weights,
        data,
        features,
        augment_config,
        train_config,
        segmentation,
        |_, _| {},
    )
}

/// Continues training `weights`, calling `on_step(step, loss)` after each
/// optimiser update.
///
/// Each step draws `batch_pairs` segments uniformly with replacement, builds
/// a distorted replica of each with its own random stream derived from
/// `(seed, step, item)`, and takes one Adam step on the NT-Xent loss.
pub fn train_from(
    mut weights: EncoderWeights,
    data: &TrainingData<'_>,
    features: &FeatureExtractor,
    augment_config: &AugmentConfig,
    train_config: &TrainConfig,
    segmentation: &SegmentationParams,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(EncoderWeights, TrainingLog)> {
    train_config.validate()?;
    segmentation.validate()?;
    augment_config.validate(segmentation.window_s)?;
    let rate = features.config().sample_rate;
    let win = segmentation.window_samples(rate)?;
    let hop = segmentation.hop_samples(rate)?;
    let frames = features.config().frames_for(win);
    if !weights.supports_frames(frames) {
        return Err(Error::NoAdapterForT(frames));
    }
    if features.config().mel_bins != weights.config().mel_bins {
        return Err(Error::InvalidConfig(format!(
            "features produce {} mel bins, encoder expects {}",
            features.config().mel_bins,
            weights.config().mel_bins
        )));
    }

    let mut pool: Vec<(usize, usize)> = Vec::new();
    for (ci, clip) in data.clips.iter().enumerate() {
        clip.require_rate(rate)?;
        if clip.len() >= win {
            pool.extend((0..(clip.len() - win) / hop + 1).map(|si| (ci, si)));
        }
    }
    if pool.is_empty() {
        return Err(Error::InvalidInput(
            "no training clip is long enough for one segment".into(),
        ));
    }

    let n = train_config.batch_pairs;
    let mut adam = Adam::new(weights.params().len(), train_config);
    let mut log = TrainingLog::default();
    for step in 0..train_config.steps {
        let mut step_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[train_config.seed, step as u64]));
        let picks: Vec<(usize, usize)> = (0..n)
            .map(|_| pool[step_rng.random_range(0..pool.len())])
            .collect();

        // anchors first, then replicas, each item with its own stream
        let mels: Vec<MelSpectrogram> = (0..2 * n)
            .into_par_iter()
            .map(|k| {
                let (ci, si) = picks[k % n];
                let clip = &data.clips[ci];
                let seg = segment_at(clip, ci, si, win, hop, segmentation.hop_s);
                let seg = if k < n {
                    seg
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                        train_config.seed,
                        augment_config.rng_seed,
                        step as u64,
                        (k - n) as u64,
                    ]));
                    augment(
                        clip,
                        &seg,
                        data.noise_pool,
                        data.ir_pool,
                        augment_config,
                        &mut rng,
                    )?
                };
                features.mel_spectrogram(&seg)
            })
            .collect::<Result<_>>()?;

        let caches: Vec<ForwardCache> = mels
            .par_iter()
            .map(|m| weights.forward_cached(m))
            .collect::<Result<_>>()?;
        let fps: Vec<Vec<f64>> = caches.iter().map(|c| c.fingerprint().into_vec()).collect();
        let out = ntxent_loss(&fps[..n], &fps[n..], train_config.temperature)?;
        if !out.loss.is_finite() {
            return Err(Error::DivergenceDetected { step });
        }
        let upstream: Vec<Vec<f64>> = out
            .grad_anchors
            .into_iter()
            .chain(out.grad_replicas)
            .collect();
        let grads = backward_batch(&weights, &caches, &upstream)?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergenceDetected { step });
        }
        adam.update(weights.params_mut(), &grads);
        if !weights.all_finite() {
            return Err(Error::DivergenceDetected { step });
        }
        log.entries.push((step, out.loss));
        on_step(step, out.loss);
    }
    Ok((weights, log))
}
