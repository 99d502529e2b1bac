//! Query-time retrieval: per-segment nearest neighbours combined by
//! offset-aware, similarity-weighted voting.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::db::{FingerprintDb, SegmentKey};
use crate::encoder::EncoderWeights;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, MelSpectrogram};
use crate::segmentation::{slice_segments, SegmentationParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub query_len_s: f64,
    pub source_offset_s: f64,
    pub k_nn: usize,
    pub top_m: usize,
}

impl QuerySpec {
    pub fn new(query_len_s: f64) -> Self {
        Self {
            query_len_s,
            source_offset_s: 0.0,
            k_nn: 20,
            top_m: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.query_len_s > 0.0) || !(self.source_offset_s >= 0.0) {
            return Err(Error::InvalidParams(
                "query length must be positive and offset non-negative".into(),
            ));
        }
        if self.k_nn == 0 || self.top_m == 0 {
            return Err(Error::InvalidParams(
                "k_nn and top_m must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub track_id: u32,
    /// Database segment index aligned with query segment 0.
    pub start_index: i64,
    pub vote_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryResult {
    pub candidates: Vec<Candidate>,
    pub per_segment_hits: Vec<Vec<(SegmentKey, f64)>>,
}

/// The L-second excerpt starting `source_offset_s` into `clip`.
pub fn derive_query_clip(clip: &AudioClip, spec: &QuerySpec) -> Result<AudioClip> {
    spec.validate()?;
    let rate = clip.sample_rate() as f64;
    let start = (spec.source_offset_s * rate).round() as usize;
    let len = (spec.query_len_s * rate).round() as usize;
    if start + len > clip.len() {
        return Err(Error::OutOfRange {
            start_s: spec.source_offset_s,
            end_s: spec.source_offset_s + spec.query_len_s,
            duration_s: clip.duration_seconds(),
        });
    }
    clip.slice(start, len)
}

fn rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    b.vote_weight
        .total_cmp(&a.vote_weight)
        .then(a.track_id.cmp(&b.track_id))
        .then(a.start_index.cmp(&b.start_index))
}

/// Sums similarity votes per `(track, j - i)` over all query segments `i` and
/// their retrieved neighbours `j`, ignoring non-positive scores.
///
/// Votes for a candidate are summed in sorted order so the totals do not
/// depend on the order segments or hits arrive in.
pub fn vote(per_segment_hits: &[Vec<(SegmentKey, f64)>], top_m: usize) -> Vec<Candidate> {
    let mut table: BTreeMap<(u32, i64), Vec<f64>> = BTreeMap::new();
    for (i, hits) in per_segment_hits.iter().enumerate() {
        for (key, score) in hits {
            if *score > 0.0 {
                let start = key.segment_index as i64 - i as i64;
                table.entry((key.track_id, start)).or_default().push(*score);
            }
        }
    }
    let mut candidates: Vec<Candidate> = table
        .into_iter()
        .map(|((track_id, start_index), mut votes)| {
            votes.sort_unstable_by(f64::total_cmp);
            Candidate {
                track_id,
                start_index,
                vote_weight: votes.iter().sum(),
            }
        })
        .collect();
    candidates.sort_unstable_by(rank);
    candidates.truncate(top_m);
    candidates
}

/// Segments, encodes and searches a query clip, then votes.
///
/// `params` carries the pipeline's segment length and hop; both must match
/// the database header.
pub fn run_query(
    clip: &AudioClip,
    spec: &QuerySpec,
    db: &FingerprintDb,
    weights: &EncoderWeights,
    features: &FeatureExtractor,
    params: &SegmentationParams,
) -> Result<QueryResult> {
    spec.validate()?;
    db.check_window(params.window_s)?;
    if (db.header().hop_s - params.hop_s).abs() > 1e-6 {
        return Err(Error::InvalidParams(format!(
            "database hop {} s differs from pipeline hop {} s",
            db.header().hop_s,
            params.hop_s
        )));
    }
    let query = derive_query_clip(clip, spec)?;
    let segments = slice_segments(&query, 0, params, features.config().sample_rate)?;
    let mels: Vec<MelSpectrogram> = segments
        .par_iter()
        .map(|s| features.mel_spectrogram(s))
        .collect::<Result<_>>()?;
    let fps = weights.encode_batch(&mels)?;
    let per_segment_hits = db.search_batch(&fps, spec.k_nn)?;
    Ok(QueryResult {
        candidates: vote(&per_segment_hits, spec.top_m),
        per_segment_hits,
    })
}

/// The first `k` ranked `(track, start_index)` predictions.
pub fn top_k_predictions(result: &QueryResult, k: usize) -> Vec<(u32, i64)> {
    result
        .candidates
        .iter()
        .take(k)
        .map(|c| (c.track_id, c.start_index))
        .collect()
}
