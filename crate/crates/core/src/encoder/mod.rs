//! Fingerprint encoder: a frame-count adapter followed by a stack of
//! separable convolution blocks and a linear projection onto the unit sphere.
//!
//! Activations are `(channels, freq, time)` tensors stored row-major. Each
//! block runs a 1x3 temporal convolution, ELU, a 3x1 frequency convolution,
//! ELU, then layer normalisation over the whole block output with a
//! per-channel gain and offset. Strides are chosen so the spatial extent
//! reaches 1x1 after the last block.
//!
//! All parameters live in one flat `Vec<f64>` addressed through a
//! [`Layout`]; gradients share the same layout so optimisers and checkpoint
//! code can treat them uniformly.

mod checkpoint;
mod kernels;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::MelSpectrogram;
use crate::matrix::Matrix;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use kernels::{elu, l2_normalize_backward};

pub(crate) const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub mel_bins: usize,
    pub adapter_t0: usize,
    /// Input frame counts that get their own adapter.
    pub adapter_inputs: Vec<usize>,
    pub fingerprint_dim: usize,
    pub num_blocks: usize,
    pub base_channels: usize,
    pub time_strides: Vec<usize>,
    pub freq_strides: Vec<usize>,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            mel_bins: 256,
            adapter_t0: 32,
            adapter_inputs: vec![16, 32, 63],
            fingerprint_dim: 128,
            num_blocks: 8,
            base_channels: 16,
            time_strides: vec![2, 2, 2, 2, 2, 1, 1, 1],
            freq_strides: vec![2; 8],
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Full-scale channel width.
    pub fn full_scale() -> Self {
        Self {
            base_channels: 128,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_blocks == 0 || self.base_channels == 0 || self.fingerprint_dim == 0 {
            return bad("block count, base channels and fingerprint dim must be positive".into());
        }
        if self.mel_bins == 0 || self.adapter_t0 == 0 {
            return bad("mel bins and adapter output frames must be positive".into());
        }
        if self.adapter_inputs.is_empty() || self.adapter_inputs.contains(&0) {
            return bad("at least one positive adapter input frame count is required".into());
        }
        if self.time_strides.len() != self.num_blocks || self.freq_strides.len() != self.num_blocks
        {
            return bad(format!(
                "stride schedules must list {} entries",
                self.num_blocks
            ));
        }
        if self
            .time_strides
            .iter()
            .chain(&self.freq_strides)
            .any(|&s| s == 0)
        {
            return bad("strides must be positive".into());
        }
        let tp: usize = self.time_strides.iter().product();
        let fp: usize = self.freq_strides.iter().product();
        if fp != self.mel_bins {
            return bad(format!(
                "frequency strides multiply to {fp}, expected {} mel bins",
                self.mel_bins
            ));
        }
        if tp != self.adapter_t0 {
            return bad(format!(
                "time strides multiply to {tp}, expected {} adapter frames",
                self.adapter_t0
            ));
        }
        Ok(())
    }

    /// Output channels of block `i`: doubles every two blocks, capped at 8x base.
    pub fn block_channels(&self, i: usize) -> usize {
        let doublings = (i / 2).min(3);
        self.base_channels << doublings
    }

    pub fn final_channels(&self) -> usize {
        self.block_channels(self.num_blocks - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
    /// Fan-in used for initialisation; `None` for biases and norm parameters.
    pub fan_in: Option<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    FanInUniform,
    Zeros,
    Ones,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AdapterSlots {
    pub t_in: usize,
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockSlots {
    pub c_in: usize,
    pub c_out: usize,
    pub time_stride: usize,
    pub freq_stride: usize,
    pub tconv_w: usize,
    pub tconv_b: usize,
    pub fconv_w: usize,
    pub fconv_b: usize,
    pub gain: usize,
    pub shift: usize,
}

/// Names, shapes and offsets of every parameter tensor for one config.
#[derive(Debug, Clone)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
    pub(crate) adapters: BTreeMap<usize, AdapterSlots>,
    pub(crate) blocks: Vec<BlockSlots>,
    pub(crate) proj_w: usize,
    pub(crate) proj_b: usize,
    total: usize,
}

impl Layout {
    pub fn new(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut tensors = Vec::new();
        let mut total = 0usize;
        let mut push = |name: String, dims: Vec<usize>, fan_in: Option<usize>, init: Init| {
            let spec = TensorSpec {
                name,
                dims,
                offset: total,
                fan_in,
                init,
            };
            total += spec.len();
            let off = spec.offset;
            tensors.push(spec);
            off
        };

        let t0 = config.adapter_t0;
        let mut inputs = config.adapter_inputs.clone();
        inputs.sort_unstable();
        inputs.dedup();
        let mut adapters = BTreeMap::new();
        for t_in in inputs {
            let weight = push(
                format!("adapter.t{t_in}.weight"),
                vec![t_in, t0],
                Some(t_in),
                Init::FanInUniform,
            );
            let bias = push(format!("adapter.t{t_in}.bias"), vec![t0], None, Init::Zeros);
            adapters.insert(t_in, AdapterSlots { t_in, weight, bias });
        }

        let mut blocks = Vec::with_capacity(config.num_blocks);
        let mut c_in = 1;
        for i in 0..config.num_blocks {
            let c_out = config.block_channels(i);
            let tconv_w = push(
                format!("block{i}.tconv.weight"),
                vec![c_out, c_in, 3],
                Some(c_in * 3),
                Init::FanInUniform,
            );
            let tconv_b = push(
                format!("block{i}.tconv.bias"),
                vec![c_out],
                None,
                Init::Zeros,
            );
            let fconv_w = push(
                format!("block{i}.fconv.weight"),
                vec![c_out, c_out, 3],
                Some(c_out * 3),
                Init::FanInUniform,
            );
            let fconv_b = push(
                format!("block{i}.fconv.bias"),
                vec![c_out],
                None,
                Init::Zeros,
            );
            let gain = push(format!("block{i}.norm.gain"), vec![c_out], None, Init::Ones);
            let shift = push(
                format!("block{i}.norm.offset"),
                vec![c_out],
                None,
                Init::Zeros,
            );
            blocks.push(BlockSlots {
                c_in,
                c_out,
                time_stride: config.time_strides[i],
                freq_stride: config.freq_strides[i],
                tconv_w,
                tconv_b,
                fconv_w,
                fconv_b,
                gain,
                shift,
            });
            c_in = c_out;
        }
        let d = config.fingerprint_dim;
        let proj_w = push(
            "proj.weight".into(),
            vec![c_in, d],
            Some(c_in),
            Init::FanInUniform,
        );
        let proj_b = push("proj.bias".into(), vec![d], None, Init::Zeros);

        Ok(Self {
            tensors,
            adapters,
            blocks,
            proj_w,
            proj_b,
            total,
        })
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn num_params(&self) -> usize {
        self.total
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Unit-norm fingerprint vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint(Vec<f64>);

impl Fingerprint {
    /// Normalises `v`; an all-zero vector maps to the first basis vector.
    pub fn from_unnormalized(mut v: Vec<f64>) -> Self {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v.iter_mut().for_each(|x| *x = 0.0);
            if let Some(first) = v.first_mut() {
                *first = 1.0;
            }
        }
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&x| x as f32).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EncoderWeights {
    config: EncoderConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PartialEq for EncoderWeights {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Fan-in scaled uniform initialisation, reproducible from `config.seed`.
pub fn init_weights(config: &EncoderConfig) -> Result<EncoderWeights> {
    let layout = Layout::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = vec![0.0; layout.num_params()];
    for t in layout.tensors() {
        let slot = &mut params[t.range()];
        match (t.init, t.fan_in) {
            (Init::FanInUniform, Some(fan_in)) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                slot.iter_mut()
                    .for_each(|p| *p = rng.random_range(-bound..bound));
            }
            (Init::Ones, _) => slot.fill(1.0),
            _ => slot.fill(0.0),
        }
    }
    Ok(EncoderWeights {
        config: config.clone(),
        layout,
        params,
    })
}

impl EncoderWeights {
    pub fn from_params(config: EncoderConfig, params: Vec<f64>) -> Result<Self> {
        let layout = Layout::new(&config)?;
        if params.len() != layout.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters supplied, layout needs {}",
                params.len(),
                layout.num_params()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.tensor(name).map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.tensor(name)?.range();
        Some(&mut self.params[range])
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn supports_frames(&self, t_in: usize) -> bool {
        self.layout.adapters.contains_key(&t_in)
    }

    fn check_input(&self, mel: &MelSpectrogram) -> Result<AdapterSlots> {
        if mel.bins() != self.config.mel_bins {
            return Err(Error::Shape(format!(
                "spectrogram has {} mel bins, encoder expects {}",
                mel.bins(),
                self.config.mel_bins
            )));
        }
        self.layout
            .adapters
            .get(&mel.frames())
            .copied()
            .ok_or(Error::NoAdapterForT(mel.frames()))
    }

    /// Adapter output `ELU(x * A + b)` of shape `(mel_bins, adapter_t0)`.
    pub fn adapter_forward(&self, mel: &MelSpectrogram) -> Result<Matrix> {
        let slots = self.check_input(mel)?;
        let (_, out) =
            kernels::adapter_forward(&self.params, &slots, &mel.values, self.config.adapter_t0);
        Ok(out)
    }

    pub fn encode(&self, mel: &MelSpectrogram) -> Result<Fingerprint> {
        let slots = self.check_input(mel)?;
        let cache = kernels::forward(self, &slots, &mel.values);
        let fp = Fingerprint(cache.fingerprint);
        debug_assert!((fp.norm() - 1.0).abs() <= 1e-9);
        Ok(fp)
    }

    pub fn encode_batch(&self, mels: &[MelSpectrogram]) -> Result<Vec<Fingerprint>> {
        mels.par_iter().map(|m| self.encode(m)).collect()
    }

    /// Forward pass that keeps every intermediate needed by [`Self::backward`].
    pub fn forward_cached(&self, mel: &MelSpectrogram) -> Result<ForwardCache> {
        let slots = self.check_input(mel)?;
        Ok(ForwardCache {
            inner: kernels::forward(self, &slots, &mel.values),
            slots,
            input: mel.values.clone(),
        })
    }

    /// Gradient of `upstream . fingerprint` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<Vec<f64>> {
        if upstream.len() != self.config.fingerprint_dim {
            return Err(Error::Shape(format!(
                "upstream gradient has {} entries, expected {}",
                upstream.len(),
                self.config.fingerprint_dim
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        kernels::backward(
            self,
            &cache.slots,
            &cache.input,
            &cache.inner,
            upstream,
            &mut grads,
        );
        Ok(grads)
    }
}

/// Saved activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inner: kernels::Cache,
    slots: AdapterSlots,
    input: Matrix,
}

impl ForwardCache {
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint(self.inner.fingerprint.clone())
    }
}

pub fn adapter_forward(mel: &MelSpectrogram, weights: &EncoderWeights) -> Result<Matrix> {
    weights.adapter_forward(mel)
}

pub fn encode(mel: &MelSpectrogram, weights: &EncoderWeights) -> Result<Fingerprint> {
    weights.encode(mel)
}

pub fn encode_batch(mels: &[MelSpectrogram], weights: &EncoderWeights) -> Result<Vec<Fingerprint>> {
    weights.encode_batch(mels)
}

/// Summed parameter gradient of `sum_i upstream[i] . encode(mels[i])`.
///
/// Items run in parallel; their gradients are reduced in index order so the
/// result does not depend on thread scheduling.
pub fn forward_backward(
    mels: &[MelSpectrogram],
    weights: &EncoderWeights,
    upstream: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if mels.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} upstream gradients",
            mels.len(),
            upstream.len()
        )));
    }
    let caches: Vec<ForwardCache> = mels
        .par_iter()
        .map(|m| weights.forward_cached(m))
        .collect::<Result<_>>()?;
    backward_batch(weights, &caches, upstream)
}

pub fn backward_batch(
    weights: &EncoderWeights,
    caches: &[ForwardCache],
    upstream: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let per_item: Vec<Vec<f64>> = caches
        .par_iter()
        .zip(upstream.par_iter())
        .map(|(c, g)| weights.backward(c, g))
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; weights.params.len()];
    for g in &per_item {
        total.iter_mut().zip(g).for_each(|(t, v)| *t += v);
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
