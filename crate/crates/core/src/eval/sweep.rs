//! The segment-length sweep: one encoder per segment length, a shared query
//! set, and a hit-rate report over all `(W, L)` pairs with `L >= W`.

use serde::{Deserialize, Serialize};

use super::corpus::{generate_corpus, generate_noise_pools, Corpus, CorpusSpec, NoisePools};
use super::{derive_query_set, evaluate, EvalQuery, HitReport, Pipeline, QuerySetSpec};
use crate::audio::AudioClip;
use crate::db::{build_db, DbTrack, FingerprintDb};
use crate::encoder::{EncoderConfig, EncoderWeights};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::segmentation::{num_stft_frames, SegmentationParams};
use crate::training::{
    derive_seed, synth_impulse_responses, train, AugmentConfig, TrainConfig, TrainingData,
    TrainingLog,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepPlan {
    pub corpus: CorpusSpec,
    pub features: FeatureConfig,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub hop_s: f64,
    pub windows_s: Vec<f64>,
    pub query_lengths_s: Vec<f64>,
    pub queries: QuerySetSpec,
    pub k_nn: usize,
    pub top_m: usize,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            features: FeatureConfig::default(),
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            hop_s: 0.5,
            windows_s: vec![0.5, 1.0, 2.0],
            query_lengths_s: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            queries: QuerySetSpec::default(),
            k_nn: 20,
            top_m: 10,
        }
    }
}

impl SweepPlan {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.features.validate()?;
        self.encoder.validate()?;
        self.train.validate()?;
        if self.windows_s.is_empty() || self.query_lengths_s.is_empty() {
            return Err(Error::InvalidConfig(
                "sweep needs at least one W and one L".into(),
            ));
        }
        if self.k_nn < 10 || self.top_m < 10 {
            return Err(Error::InvalidConfig(format!(
                "k_nn ({}) and top_m ({}) must cover Top-10",
                self.k_nn, self.top_m
            )));
        }
        let max_l = self.max_query_len();
        if max_l > self.corpus.clip_len_s {
            return Err(Error::InvalidConfig(format!(
                "longest query {max_l} s exceeds the {} s clips",
                self.corpus.clip_len_s
            )));
        }
        for &w in &self.windows_s {
            SegmentationParams::new(w, self.hop_s)?;
            self.augment.validate(w)?;
            let t = self.frames_for(w)?;
            if !self.encoder.adapter_inputs.contains(&t) {
                return Err(Error::NoAdapterForT(t));
            }
        }
        Ok(())
    }

    pub fn max_query_len(&self) -> f64 {
        self.query_lengths_s.iter().copied().fold(0.0, f64::max)
    }

    pub fn frames_for(&self, window_s: f64) -> Result<usize> {
        num_stft_frames(window_s, self.features.sample_rate, self.features.stft_hop)
    }

    pub fn segmentation(&self, window_s: f64) -> Result<SegmentationParams> {
        SegmentationParams::new(window_s, self.hop_s)
    }
}

/// Audio shared by every segment length of one sweep.
#[derive(Debug, Clone)]
pub struct SweepInputs {
    pub corpus: Corpus,
    pub noise: NoisePools,
    pub train_irs: Vec<Vec<f32>>,
    pub query_irs: Vec<Vec<f32>>,
    pub queries: Vec<EvalQuery>,
}

/// Impulse responses for training replicas and for query distortion, drawn
/// from separate streams.
pub fn impulse_responses(plan: &SweepPlan) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let rate = plan.corpus.sample_rate;
    let seed = plan.corpus.master_seed;
    (
        synth_impulse_responses(&plan.augment, rate, derive_seed(&[seed, 6])),
        synth_impulse_responses(&plan.queries.augment, rate, derive_seed(&[seed, 7])),
    )
}

/// Generates the corpus and noise pools, then derives the query set.
pub fn prepare(plan: &SweepPlan) -> Result<SweepInputs> {
    plan.validate()?;
    prepare_from(
        plan,
        generate_corpus(&plan.corpus)?,
        generate_noise_pools(&plan.corpus)?,
    )
}

/// Derives the query set from an existing corpus.
pub fn prepare_from(plan: &SweepPlan, corpus: Corpus, noise: NoisePools) -> Result<SweepInputs> {
    plan.validate()?;
    let (train_irs, query_irs) = impulse_responses(plan);
    let queries = derive_query_set(
        &corpus.reference,
        &plan.queries,
        plan.hop_s,
        plan.max_query_len(),
        &noise.query,
        &query_irs,
    )?;
    Ok(SweepInputs {
        corpus,
        noise,
        train_irs,
        query_irs,
        queries,
    })
}

/// Trains the encoder for one segment length on the training split.
pub fn train_window(
    plan: &SweepPlan,
    inputs: &SweepInputs,
    window_s: f64,
) -> Result<(EncoderWeights, TrainingLog)> {
    let features = FeatureExtractor::new(plan.features.clone())?;
    let clips: Vec<AudioClip> = inputs.corpus.train.iter().map(|t| t.clip.clone()).collect();
    let data = TrainingData {
        clips: &clips,
        noise_pool: &inputs.noise.train,
        ir_pool: &inputs.train_irs,
    };
    train(
        &data,
        &features,
        &plan.encoder,
        &plan.augment,
        &plan.train,
        &plan.segmentation(window_s)?,
    )
}

/// Indexes the reference and distractor splits.
pub fn index_window(
    plan: &SweepPlan,
    inputs: &SweepInputs,
    weights: &EncoderWeights,
    window_s: f64,
) -> Result<FingerprintDb> {
    let features = FeatureExtractor::new(plan.features.clone())?;
    let tracks: Vec<DbTrack> = inputs
        .corpus
        .reference
        .iter()
        .map(|t| (t, true))
        .chain(inputs.corpus.distractor.iter().map(|t| (t, false)))
        .map(|(t, is_reference)| DbTrack {
            id: t.id,
            name: t.name.clone(),
            clip: t.clip.clone(),
            is_reference,
        })
        .collect();
    build_db(&tracks, weights, &features, &plan.segmentation(window_s)?)
}

/// Hit rates of one trained encoder over every query length `>= window_s`.
pub fn evaluate_window(
    plan: &SweepPlan,
    inputs: &SweepInputs,
    weights: &EncoderWeights,
    db: &FingerprintDb,
    window_s: f64,
) -> Result<HitReport> {
    let features = FeatureExtractor::new(plan.features.clone())?;
    let params = plan.segmentation(window_s)?;
    let pipeline = Pipeline {
        db,
        weights,
        features: &features,
        params: &params,
        k_nn: plan.k_nn,
        top_m: plan.top_m,
    };
    evaluate(&pipeline, &inputs.queries, &plan.query_lengths_s)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub report: HitReport,
    pub runs: Vec<(f64, EncoderWeights, TrainingLog)>,
}

/// Runs the whole sweep in memory, training every encoder from scratch.
pub fn sweep(plan: &SweepPlan) -> Result<SweepResult> {
    let inputs = prepare(plan)?;
    let mut report = HitReport::default();
    let mut runs = Vec::new();
    for &w in &plan.windows_s {
        let (weights, log) = train_window(plan, &inputs, w)?;
        let db = index_window(plan, &inputs, &weights, w)?;
        report.merge(evaluate_window(plan, &inputs, &weights, &db, w)?);
        runs.push((w, weights, log));
    }
    Ok(SweepResult { report, runs })
}
