//! Hit-rate evaluation: synthetic corpus, query derivation, scoring,
//! reports and the segment-length sweep.

pub mod corpus;
pub mod report;
pub mod sweep;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::db::FingerprintDb;
use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::query::{run_query, QueryResult, QuerySpec};
use crate::segmentation::{Segment, SegmentationParams};
use crate::training::{augment, derive_seed, AugmentConfig};

pub use corpus::{
    generate_corpus, generate_noise_pools, Corpus, CorpusSpec, CorpusTrack, NoisePools,
};
pub use report::{render_csv, render_markdown, render_svg, win_counts, Metric, WinCount};
pub use sweep::{sweep, SweepPlan, SweepResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuerySetSpec {
    pub queries_per_track: usize,
    /// Upper bound of the uniform jitter added to the aligned start, in
    /// seconds. `None` means half the hop.
    pub max_jitter_s: Option<f64>,
    /// Distortion chain applied to each query. Its offset range is ignored;
    /// misalignment comes from the jitter alone.
    pub augment: AugmentConfig,
    /// Skip jitter and distortion: queries are exact reference excerpts.
    pub clean: bool,
    pub seed: u64,
}

impl Default for QuerySetSpec {
    fn default() -> Self {
        Self {
            queries_per_track: 2,
            max_jitter_s: None,
            augment: AugmentConfig::default(),
            clean: false,
            seed: 0,
        }
    }
}

/// Ground truth for one query: the track and the database segment index
/// aligned with the query's first segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryTruth {
    pub track_id: u32,
    pub start_index: i64,
    pub jitter_s: f64,
}

/// A query excerpt long enough for the longest evaluated length; shorter
/// lengths use its prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalQuery {
    pub clip: AudioClip,
    pub truth: QueryTruth,
}

/// Draws `queries_per_track` excerpts of `max_len_s` seconds from every
/// reference track. Excerpt `k` starts at `k * hop + jitter`.
pub fn derive_query_set(
    references: &[CorpusTrack],
    spec: &QuerySetSpec,
    hop_s: f64,
    max_len_s: f64,
    noise_pool: &[AudioClip],
    ir_pool: &[Vec<f32>],
) -> Result<Vec<EvalQuery>> {
    if !(hop_s > 0.0 && max_len_s > 0.0) {
        return Err(Error::InvalidParams(
            "hop and query length must be positive".into(),
        ));
    }
    let max_jitter = spec.max_jitter_s.unwrap_or(hop_s / 2.0);
    if !(max_jitter >= 0.0) {
        return Err(Error::InvalidParams(
            "jitter bound must be non-negative".into(),
        ));
    }
    let augment_cfg = AugmentConfig {
        offset_range_s: 0.0,
        ..spec.augment.clone()
    };
    let mut jobs = Vec::new();
    for track in references {
        for q in 0..spec.queries_per_track {
            jobs.push((track, q));
        }
    }
    jobs.par_iter()
        .map(|&(track, q)| {
            let clip = &track.clip;
            let rate = clip.sample_rate() as f64;
            let duration = clip.duration_seconds();
            let room = duration - max_len_s;
            if room < 0.0 {
                return Err(Error::ClipTooShort {
                    duration_s: duration,
                    window_s: max_len_s,
                });
            }
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, track.id as u64, q as u64]));
            let k = rng.random_range(0..=(room / hop_s + 1e-9).floor() as i64);
            let jitter = if spec.clean || max_jitter == 0.0 {
                0.0
            } else {
                rng.random_range(-max_jitter..=max_jitter)
            };
            let start_s = (k as f64 * hop_s + jitter).clamp(0.0, room);
            let start = ((start_s * rate).round() as usize)
                .min(clip.len() - (max_len_s * rate).round() as usize);
            let excerpt = clip.slice(start, (max_len_s * rate).round() as usize)?;
            let audio = if spec.clean {
                excerpt
            } else {
                let seg = Segment {
                    samples: excerpt.into_samples(),
                    track_id: track.id,
                    index: 0,
                    start_time_s: start as f64 / rate,
                };
                let out = augment(clip, &seg, noise_pool, ir_pool, &augment_cfg, &mut rng)?;
                AudioClip::new(out.samples, clip.sample_rate())?
            };
            Ok(EvalQuery {
                clip: audio,
                truth: QueryTruth {
                    track_id: track.id,
                    start_index: k,
                    jitter_s: start as f64 / rate - k as f64 * hop_s,
                },
            })
        })
        .collect()
}

/// Whether the truth pair is among the first `k` ranked candidates.
pub fn hit_exact(result: &QueryResult, truth: &QueryTruth, k: usize) -> bool {
    result
        .candidates
        .iter()
        .take(k)
        .any(|c| c.track_id == truth.track_id && c.start_index == truth.start_index)
}

/// Whether the top candidate names the right track within one hop.
pub fn hit_near(result: &QueryResult, truth: &QueryTruth) -> bool {
    result.candidates.first().is_some_and(|c| {
        c.track_id == truth.track_id && (c.start_index - truth.start_index).abs() <= 1
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitCell {
    pub window_s: f64,
    pub query_len_s: f64,
    pub top1_exact: f64,
    pub top3_exact: f64,
    pub top10_exact: f64,
    pub top1_near: f64,
    pub n_queries: usize,
}

impl HitCell {
    pub fn check(&self) -> Result<()> {
        let ordered = 0.0 <= self.top1_exact
            && self.top1_exact <= self.top3_exact
            && self.top3_exact <= self.top10_exact
            && self.top10_exact <= 1.0
            && self.top1_exact <= self.top1_near
            && self.top1_near <= 1.0;
        if !ordered {
            return Err(Error::InvalidInput(format!(
                "hit rates for W={} L={} violate their ordering",
                self.window_s, self.query_len_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HitReport {
    pub cells: Vec<HitCell>,
}

impl HitReport {
    pub fn cell(&self, window_s: f64, query_len_s: f64) -> Option<&HitCell> {
        self.cells
            .iter()
            .find(|c| c.window_s == window_s && c.query_len_s == query_len_s)
    }

    /// Appends `other` and re-sorts cells by `(W, L)`.
    pub fn merge(&mut self, other: HitReport) {
        self.cells.extend(other.cells);
        self.cells.sort_by(|a, b| {
            a.window_s
                .total_cmp(&b.window_s)
                .then(a.query_len_s.total_cmp(&b.query_len_s))
        });
    }

    pub fn windows(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.cells.iter().map(|c| c.window_s).collect();
        w.sort_by(f64::total_cmp);
        w.dedup();
        w
    }

    pub fn query_lengths(&self) -> Vec<f64> {
        let mut l: Vec<f64> = self.cells.iter().map(|c| c.query_len_s).collect();
        l.sort_by(f64::total_cmp);
        l.dedup();
        l
    }
}

/// Everything needed to run queries against one segment length.
pub struct Pipeline<'a> {
    pub db: &'a FingerprintDb,
    pub weights: &'a EncoderWeights,
    pub features: &'a FeatureExtractor,
    pub params: &'a SegmentationParams,
    pub k_nn: usize,
    pub top_m: usize,
}

/// Scores every query at each length in `query_lengths`; lengths shorter
/// than the segment length are skipped.
pub fn evaluate(
    pipeline: &Pipeline<'_>,
    queries: &[EvalQuery],
    query_lengths: &[f64],
) -> Result<HitReport> {
    if queries.is_empty() {
        return Err(Error::EmptyQuerySet);
    }
    let w = pipeline.params.window_s;
    let mut report = HitReport::default();
    for &l in query_lengths.iter().filter(|&&l| l >= w) {
        let spec = QuerySpec {
            query_len_s: l,
            source_offset_s: 0.0,
            k_nn: pipeline.k_nn,
            top_m: pipeline.top_m,
        };
        let hits: Vec<[bool; 4]> = queries
            .par_iter()
            .map(|q| {
                let r = run_query(
                    &q.clip,
                    &spec,
                    pipeline.db,
                    pipeline.weights,
                    pipeline.features,
                    pipeline.params,
                )?;
                Ok([
                    hit_exact(&r, &q.truth, 1),
                    hit_exact(&r, &q.truth, 3),
                    hit_exact(&r, &q.truth, 10),
                    hit_near(&r, &q.truth),
                ])
            })
            .collect::<Result<_>>()?;
        let n = hits.len();
        let rate = |m: usize| hits.iter().filter(|h| h[m]).count() as f64 / n as f64;
        let cell = HitCell {
            window_s: w,
            query_len_s: l,
            top1_exact: rate(0),
            top3_exact: rate(1),
            top10_exact: rate(2),
            top1_near: rate(3),
            n_queries: n,
        };
        cell.check()?;
        report.cells.push(cell);
    }
    Ok(report)
}
