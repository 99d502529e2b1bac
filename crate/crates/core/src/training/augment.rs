//! Distortion chain used to build positive replicas: time offset, room
//! impulse response, background noise, then peak renormalisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::segmentation::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Background-noise SNR range in dB; an infinite SNR disables mixing.
    pub snr_db_range: [f64; 2],
    /// Maximum absolute time shift in seconds.
    pub offset_range_s: f64,
    /// Lengths in samples of the synthetic impulse responses.
    pub ir_lengths: Vec<usize>,
    /// Impulse responses generated per configured length.
    pub irs_per_length: usize,
    /// Low-pass cutoff range applied to synthetic impulse responses.
    pub cutoff_range_hz: [f64; 2],
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            snr_db_range: [0.0, 10.0],
            offset_range_s: 0.25,
            ir_lengths: vec![200, 400, 800],
            irs_per_length: 4,
            cutoff_range_hz: [1500.0, 4000.0],
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every distortion switched off: zero offset, no noise.
    pub fn disabled() -> Self {
        Self {
            snr_db_range: [f64::INFINITY, f64::INFINITY],
            offset_range_s: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, window_s: f64) -> Result<()> {
        let [lo, hi] = self.snr_db_range;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::InvalidParams(format!(
                "SNR range [{lo}, {hi}] is empty"
            )));
        }
        if !(self.offset_range_s >= 0.0 && self.offset_range_s < window_s) {
            return Err(Error::InvalidParams(format!(
                "offset range {} s must lie in [0, {window_s})",
                self.offset_range_s
            )));
        }
        let [clo, chi] = self.cutoff_range_hz;
        if !(clo > 0.0 && clo <= chi) {
            return Err(Error::InvalidParams(format!(
                "cutoff range [{clo}, {chi}] is invalid"
            )));
        }
        if self.ir_lengths.contains(&0) {
            return Err(Error::InvalidParams(
                "impulse responses need at least one tap".into(),
            ));
        }
        Ok(())
    }
}

/// Exponentially decaying white noise, one-pole low-passed at a random
/// cutoff and scaled to unit energy. The first tap carries the direct path.
pub fn synth_impulse_responses(
    config: &AugmentConfig,
    sample_rate: u32,
    seed: u64,
) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &len in &config.ir_lengths {
        for _ in 0..config.irs_per_length {
            let [clo, chi] = config.cutoff_range_hz;
            let cutoff = if chi > clo {
                rng.random_range(clo..chi)
            } else {
                clo
            };
            let alpha = 1.0 - (-2.0 * std::f64::consts::PI * cutoff / sample_rate as f64).exp();
            // decay to -60 dB over the response length
            let tau = len as f64 / 6.9;
            let mut state = 0.0;
            let mut ir: Vec<f64> = (0..len)
                .map(|n| {
                    let white: f64 = rng.sample(StandardNormal);
                    state += alpha * (white - state);
                    state * (-(n as f64) / tau).exp()
                })
                .collect();
            ir[0] = ir[0].abs() + 1.0;
            let energy = ir.iter().map(|v| v * v).sum::<f64>().sqrt();
            out.push(ir.iter().map(|v| (v / energy) as f32).collect());
        }
    }
    out
}

/// Linear convolution of `x` with `ir`, truncated to `x.len()` samples.
pub fn convolve_truncated(x: &[f32], ir: &[f32]) -> Vec<f32> {
    if ir.len() <= 32 {
        return (0..x.len())
            .map(|n| {
                let taps = ir.len().min(n + 1);
                (0..taps)
                    .map(|k| ir[k] as f64 * x[n - k] as f64)
                    .sum::<f64>() as f32
            })
            .collect();
    }
    let n = (x.len() + ir.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |s: &[f32]| -> Vec<Complex<f64>> {
        let mut v: Vec<Complex<f64>> = s.iter().map(|&a| Complex::new(a as f64, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let mut a = pad(x);
    let mut b = pad(ir);
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    a[..x.len()]
        .iter()
        .map(|c| (c.re / n as f64) as f32)
        .collect()
}

/// Mean power of a signal.
pub fn power(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// Scales `noise` so that `power(signal) / power(scaled) = 10^(snr/10)`.
/// Returns `None` when either input is silent or the SNR is infinite.
pub fn scale_noise_for_snr(signal: &[f32], noise: &[f32], snr_db: f64) -> Option<Vec<f32>> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return None;
    }
    let ps = power(signal);
    let pn = power(noise);
    if ps == 0.0 || pn == 0.0 {
        return None;
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    Some(noise.iter().map(|&v| (v as f64 * gain) as f32).collect())
}

/// A `len`-sample crop of `noise` starting at `start`, wrapping around.
fn noise_crop(noise: &[f32], start: usize, len: usize) -> Vec<f32> {
    (0..len).map(|i| noise[(start + i) % noise.len()]).collect()
}

/// Builds a distorted replica of `segment`, which must have been cut from
/// `source` at its recorded start time.
pub fn augment(
    source: &AudioClip,
    segment: &Segment,
    noise_pool: &[AudioClip],
    ir_pool: &[Vec<f32>],
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Segment> {
    if noise_pool.is_empty() || noise_pool.iter().all(|c| c.is_empty()) {
        return Err(Error::PoolEmpty("noise"));
    }
    if ir_pool.is_empty() || ir_pool.iter().any(|ir| ir.is_empty()) {
        return Err(Error::PoolEmpty("impulse response"));
    }
    let rate = source.sample_rate() as f64;
    let len = segment.samples.len();

    // (1) time offset, zero padded at the clip edges
    let shift = if config.offset_range_s > 0.0 {
        (rng.random_range(-config.offset_range_s..=config.offset_range_s) * rate).round() as i64
    } else {
        0
    };
    let start = (segment.start_time_s * rate).round() as i64 + shift;
    let src = source.samples();
    let shifted: Vec<f32> = (0..len as i64)
        .map(|i| {
            let j = start + i;
            if j >= 0 && (j as usize) < src.len() {
                src[j as usize]
            } else {
                0.0
            }
        })
        .collect();

    // (2) room response
    let ir = &ir_pool[rng.random_range(0..ir_pool.len())];
    let mut out = if ir.len() == 1 && ir[0] == 1.0 {
        shifted
    } else {
        convolve_truncated(&shifted, ir)
    };

    // (3) background noise
    let [lo, hi] = config.snr_db_range;
    let snr = if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    };
    let candidates: Vec<&AudioClip> = noise_pool.iter().filter(|c| !c.is_empty()).collect();
    let noise = candidates[rng.random_range(0..candidates.len())];
    let crop_start = rng.random_range(0..noise.len());
    let crop = noise_crop(noise.samples(), crop_start, len);
    if let Some(scaled) = scale_noise_for_snr(&out, &crop, snr) {
        out.iter_mut().zip(&scaled).for_each(|(o, n)| *o += n);
    }

    // (4) keep within [-1, 1]
    let peak = out.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > 1.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    for v in &mut out {
        *v = v.clamp(-1.0, 1.0);
    }

    Ok(Segment {
        samples: out,
        track_id: segment.track_id,
        index: segment.index,
        start_time_s: segment.start_time_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{slice_segments, SegmentationParams};

    fn clip(seconds: f64, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (seconds * 8000.0) as usize;
        AudioClip::new((0..n).map(|_| rng.random_range(-0.6..0.6)).collect(), 8000).unwrap()
    }

    #[test]
    fn disabled_chain_is_identity() {
        let src = clip(3.0, 1);
        let seg =
            &slice_segments(&src, 0, &SegmentationParams::new(1.0, 0.5).unwrap(), 8000).unwrap()[2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment(
            &src,
            seg,
            &[clip(1.0, 2)],
            &[vec![1.0]],
            &AugmentConfig::disabled(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(out, *seg);
    }

    #[test]
    fn same_rng_same_output_and_bounds() {
        let src = clip(3.0, 3);
        let segs =
            slice_segments(&src, 0, &SegmentationParams::new(1.0, 0.5).unwrap(), 8000).unwrap();
        let cfg = AugmentConfig::default();
        let irs = synth_impulse_responses(&cfg, 8000, 9);
        let noise = vec![clip(2.0, 4), clip(5.0, 5)];
        for seg in &segs {
            let a = augment(
                &src,
                seg,
                &noise,
                &irs,
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(7),
            )
            .unwrap();
            let b = augment(
                &src,
                seg,
                &noise,
                &irs,
                &cfg,
                &mut ChaCha8Rng::seed_from_u64(7),
            )
            .unwrap();
            assert_eq!(a, b);
            assert_eq!(a.samples.len(), seg.samples.len());
            assert!(a.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn snr_zero_balances_powers() {
        let signal = clip(1.0, 10).into_samples();
        let noise: Vec<f32> = clip(1.0, 11).samples().iter().map(|v| v * 0.1).collect();
        let scaled = scale_noise_for_snr(&signal, &noise, 0.0).unwrap();
        let (ps, pn) = (power(&signal), power(&scaled));
        assert!((ps - pn).abs() / ps < 0.01, "{ps} vs {pn}");
        let at10 = scale_noise_for_snr(&signal, &noise, 10.0).unwrap();
        assert!((ps / power(&at10) - 10.0).abs() < 0.1);
    }

    #[test]
    fn empty_pools() {
        let src = clip(1.0, 1);
        let seg =
            &slice_segments(&src, 0, &SegmentationParams::new(1.0, 0.5).unwrap(), 8000).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = AugmentConfig::default();
        assert!(matches!(
            augment(&src, seg, &[], &[vec![1.0]], &cfg, &mut rng),
            Err(Error::PoolEmpty(_))
        ));
        assert!(matches!(
            augment(&src, seg, &[clip(1.0, 2)], &[], &cfg, &mut rng),
            Err(Error::PoolEmpty(_))
        ));
    }

    #[test]
    fn fft_convolution_matches_direct() {
        let x = clip(0.5, 20).into_samples();
        let ir: Vec<f32> = clip(0.02, 21).into_samples();
        assert!(ir.len() > 32);
        let fast = convolve_truncated(&x, &ir);
        for n in (0..x.len()).step_by(97) {
            let direct: f64 = (0..ir.len().min(n + 1))
                .map(|k| ir[k] as f64 * x[n - k] as f64)
                .sum();
            assert!((fast[n] as f64 - direct).abs() < 1e-4);
        }
    }

    #[test]
    fn impulse_responses_have_unit_energy() {
        let cfg = AugmentConfig::default();
        let irs = synth_impulse_responses(&cfg, 8000, 1);
        assert_eq!(irs.len(), cfg.ir_lengths.len() * cfg.irs_per_length);
        for ir in &irs {
            let e: f64 = ir.iter().map(|&v| (v as f64).powi(2)).sum();
            assert!((e - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate(0.5).is_ok());
        let cfg = AugmentConfig {
            offset_range_s: 0.5,
            ..AugmentConfig::default()
        };
        assert!(cfg.validate(0.5).is_err());
        let cfg = AugmentConfig {
            snr_db_range: [10.0, 0.0],
            ..AugmentConfig::default()
        };
        assert!(cfg.validate(1.0).is_err());
    }
}
