use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segfp_advisor::{
    parse_recommendation, score_against_empirical, summarize_model, LiveClient, LlmClient,
    PromptSpec, Recommendation, ReplayClient,
};
use segfp_core::audio::{load_wav, resample, save_wav};
use segfp_core::db::{build_db, load_db, save_db, DbTrack};
use segfp_core::encoder::{load_checkpoint, save_checkpoint, EncoderWeights};
use segfp_core::eval::corpus::Split;
use segfp_core::eval::sweep::{
    evaluate_window, impulse_responses, index_window, prepare, prepare_from,
};
use segfp_core::eval::{
    generate_corpus, generate_noise_pools, render_csv, render_markdown, render_svg, Corpus,
    CorpusSpec, CorpusTrack, HitReport, NoisePools, Pipeline,
};
use segfp_core::features::FeatureExtractor;
use segfp_core::query::{run_query, QuerySpec};
use segfp_core::training::{train_from, TrainingData};
use segfp_core::{AudioClip, SegmentationParams};

use crate::{
    require_file, seconds_label, write_artifact, CliError, ExperimentConfig, Result, Workspace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub id: u32,
    pub name: String,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub spec: CorpusSpec,
    pub entries: Vec<ManifestEntry>,
}

fn workspace(config: &ExperimentConfig) -> Workspace {
    Workspace::new(&config.paths.workspace)
}

fn extractor(config: &ExperimentConfig) -> Result<FeatureExtractor> {
    Ok(FeatureExtractor::new(config.features.clone())?)
}

/// Synthesises the corpus and noise pools and writes them as WAV files plus
/// a manifest.
pub fn cmd_gen_corpus(config: &ExperimentConfig) -> Result<PathBuf> {
    let ws = workspace(config);
    let corpus = generate_corpus(&config.corpus)?;
    let noise = generate_noise_pools(&config.corpus)?;
    let mut entries = Vec::new();
    let mut emit = |split: Split, id: u32, name: &str, clip: &AudioClip| -> Result<()> {
        let file = format!("{}/{name}.wav", split.prefix());
        let path = ws.corpus_dir().join(&file);
        std::fs::create_dir_all(path.parent().unwrap()).map_err(segfp_core::Error::from)?;
        save_wav(clip, &path)?;
        entries.push(ManifestEntry {
            split,
            id,
            name: name.to_string(),
            file,
        });
        Ok(())
    };
    for (split, tracks) in [
        (Split::Train, &corpus.train),
        (Split::Reference, &corpus.reference),
        (Split::Distractor, &corpus.distractor),
    ] {
        for t in tracks {
            emit(split, t.id, &t.name, &t.clip)?;
        }
    }
    for (split, pool) in [
        (Split::TrainNoise, &noise.train),
        (Split::QueryNoise, &noise.query),
    ] {
        for (i, clip) in pool.iter().enumerate() {
            emit(split, i as u32, &format!("{}-{i:04}", split.prefix()), clip)?;
        }
    }
    let manifest = CorpusManifest {
        spec: config.corpus.clone(),
        entries,
    };
    let path = ws.corpus_manifest();
    write_artifact(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    eprintln!(
        "wrote {} corpus files to {}",
        manifest.entries.len(),
        ws.corpus_dir().display()
    );
    Ok(path)
}

/// Reads the corpus written by `gen-corpus`, refusing one generated from a
/// different spec.
pub fn load_corpus(config: &ExperimentConfig) -> Result<(Corpus, NoisePools)> {
    let ws = workspace(config);
    let manifest_path = ws.corpus_manifest();
    require_file(&manifest_path, "run `segfp gen-corpus` first")?;
    let text = std::fs::read_to_string(&manifest_path).map_err(segfp_core::Error::from)?;
    let manifest: CorpusManifest = serde_json::from_str(&text)?;
    if manifest.spec != config.corpus {
        return Err(CliError::Argument(
            "the workspace corpus was generated from a different corpus spec; rerun gen-corpus"
                .into(),
        ));
    }
    let mut corpus = Corpus {
        train: Vec::new(),
        reference: Vec::new(),
        distractor: Vec::new(),
    };
    let mut noise = NoisePools {
        train: Vec::new(),
        query: Vec::new(),
    };
    for e in &manifest.entries {
        let path = ws.corpus_dir().join(&e.file);
        require_file(&path, "corpus is incomplete; rerun `segfp gen-corpus`")?;
        let clip = load_wav(&path)?;
        let track = || CorpusTrack {
            id: e.id,
            name: e.name.clone(),
            clip: clip.clone(),
        };
        match e.split {
            Split::Train => corpus.train.push(track()),
            Split::Reference => corpus.reference.push(track()),
            Split::Distractor => corpus.distractor.push(track()),
            Split::TrainNoise => noise.train.push(clip),
            Split::QueryNoise => noise.query.push(clip),
        }
    }
    Ok((corpus, noise))
}

fn check_window(config: &ExperimentConfig, w: f64) -> Result<SegmentationParams> {
    if !config.segmentation.windows_s.contains(&w) {
        return Err(CliError::Argument(format!(
            "segment length {w} s is not in segmentation.windows_s {:?}",
            config.segmentation.windows_s
        )));
    }
    Ok(SegmentationParams::new(w, config.segmentation.hop_s)?)
}

fn progress(w: f64, steps: usize) -> impl FnMut(usize, f64) {
    let every = (steps / 10).max(1);
    move |step, loss| {
        if (step + 1) % every == 0 || step + 1 == steps {
            eprintln!(
                "train W={} step {}/{steps} loss {loss:.4}",
                seconds_label(w),
                step + 1
            );
        }
    }
}

/// Trains the encoder for segment length `w` on the workspace corpus.
pub fn cmd_train(config: &ExperimentConfig, w: f64) -> Result<PathBuf> {
    let params = check_window(config, w)?;
    let (corpus, noise) = load_corpus(config)?;
    let plan = config.sweep_plan();
    let (train_irs, _) = impulse_responses(&plan);
    let clips: Vec<AudioClip> = corpus.train.iter().map(|t| t.clip.clone()).collect();
    let data = TrainingData {
        clips: &clips,
        noise_pool: &noise.train,
        ir_pool: &train_irs,
    };
    let weights = segfp_core::encoder::init_weights(&config.encoder)?;
    let steps = config.training.optimizer.steps;
    let (weights, log) = train_from(
        weights,
        &data,
        &extractor(config)?,
        &config.training.augment,
        &config.training.optimizer,
        &params,
        progress(w, steps),
    )?;
    let ws = workspace(config);
    write_artifact(&ws.training_log(w), log.to_csv().as_bytes())?;
    let path = ws.checkpoint(w);
    std::fs::create_dir_all(path.parent().unwrap()).map_err(segfp_core::Error::from)?;
    save_checkpoint(&weights, &path)?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

fn load_weights(path: &Path) -> Result<EncoderWeights> {
    require_file(path, "train a checkpoint with `segfp train`")?;
    Ok(load_checkpoint(path)?)
}

/// Indexes the reference and distractor tracks with a trained encoder.
pub fn cmd_build_db(config: &ExperimentConfig, w: f64, checkpoint: &Path) -> Result<PathBuf> {
    let params = check_window(config, w)?;
    let weights = load_weights(checkpoint)?;
    let (corpus, _) = load_corpus(config)?;
    let tracks: Vec<DbTrack> = corpus
        .reference
        .iter()
        .map(|t| (t, true))
        .chain(corpus.distractor.iter().map(|t| (t, false)))
        .map(|(t, is_reference)| DbTrack {
            id: t.id,
            name: t.name.clone(),
            clip: t.clip.clone(),
            is_reference,
        })
        .collect();
    let db = build_db(&tracks, &weights, &extractor(config)?, &params)?;
    let path = workspace(config).db(w);
    std::fs::create_dir_all(path.parent().unwrap()).map_err(segfp_core::Error::from)?;
    save_db(&db, &path)?;
    eprintln!(
        "indexed {} segments from {} tracks into {}",
        db.len(),
        db.tracks().len(),
        path.display()
    );
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub track: String,
    pub track_id: u32,
    pub start_index: i64,
    pub start_time_s: f64,
    pub weight: f64,
}

/// Identifies an excerpt of a WAV file, returning ranked predictions.
pub fn cmd_query(
    config: &ExperimentConfig,
    db_path: &Path,
    checkpoint: &Path,
    wav: &Path,
    query_len_s: f64,
    offset_s: f64,
) -> Result<Vec<Prediction>> {
    require_file(db_path, "build a database with `segfp build-db`")?;
    require_file(wav, "query audio not found")?;
    let db = load_db(db_path)?;
    let weights = load_weights(checkpoint)?;
    let features = extractor(config)?;
    let mut clip = load_wav(wav)?;
    if clip.sample_rate() != config.features.sample_rate {
        clip = resample(&clip, config.features.sample_rate)?;
    }
    let params = SegmentationParams::new(db.header().window_s, db.header().hop_s)?;
    let spec = QuerySpec {
        query_len_s,
        source_offset_s: offset_s,
        k_nn: config.evaluation.k_nn,
        top_m: config.evaluation.top_m,
    };
    let result = run_query(&clip, &spec, &db, &weights, &features, &params)?;
    Ok(result
        .candidates
        .iter()
        .map(|c| Prediction {
            track: db
                .track(c.track_id)
                .map(|t| t.name.clone())
                .unwrap_or_default(),
            track_id: c.track_id,
            start_index: c.start_index,
            start_time_s: c.start_index as f64 * params.hop_s,
            weight: c.vote_weight,
        })
        .collect())
}

/// Scores the workspace query set against a database and writes the CSV.
pub fn cmd_eval(
    config: &ExperimentConfig,
    db_path: &Path,
    checkpoint: &Path,
) -> Result<(PathBuf, HitReport)> {
    require_file(db_path, "build a database with `segfp build-db`")?;
    let db = load_db(db_path)?;
    let weights = load_weights(checkpoint)?;
    let w = db.header().window_s;
    let params = SegmentationParams::new(w, db.header().hop_s)?;
    let (corpus, noise) = load_corpus(config)?;
    let plan = config.sweep_plan();
    let inputs = prepare_from(&plan, corpus, noise)?;
    let features = extractor(config)?;
    let pipeline = Pipeline {
        db: &db,
        weights: &weights,
        features: &features,
        params: &params,
        k_nn: config.evaluation.k_nn,
        top_m: config.evaluation.top_m,
    };
    let report = segfp_core::eval::evaluate(
        &pipeline,
        &inputs.queries,
        &config.evaluation.query_lengths_s,
    )?;
    let path = workspace(config).eval_report(w);
    write_artifact(&path, render_csv(&report).as_bytes())?;
    eprintln!("wrote {}", path.display());
    Ok((path, report))
}

/// Trains, indexes and evaluates every configured segment length, then
/// writes per-W CSVs, the combined CSV/JSON, the Markdown table and the SVG
/// chart.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let ws = workspace(config);
    let plan = config.sweep_plan();
    let inputs = prepare(&plan)?;
    eprintln!(
        "sweep: {} training clips, {} indexed tracks, {} queries",
        inputs.corpus.train.len(),
        inputs.corpus.reference.len() + inputs.corpus.distractor.len(),
        inputs.queries.len()
    );
    let mut written = Vec::new();
    let mut combined = HitReport::default();
    for &w in &plan.windows_s {
        let steps = plan.train.steps;
        let clips: Vec<AudioClip> = inputs.corpus.train.iter().map(|t| t.clip.clone()).collect();
        let data = TrainingData {
            clips: &clips,
            noise_pool: &inputs.noise.train,
            ir_pool: &inputs.train_irs,
        };
        let (weights, log) = train_from(
            segfp_core::encoder::init_weights(&plan.encoder)?,
            &data,
            &extractor(config)?,
            &plan.augment,
            &plan.train,
            &plan.segmentation(w)?,
            progress(w, steps),
        )?;
        let checkpoint = ws.checkpoint(w);
        std::fs::create_dir_all(checkpoint.parent().unwrap()).map_err(segfp_core::Error::from)?;
        save_checkpoint(&weights, &checkpoint)?;
        write_artifact(&ws.training_log(w), log.to_csv().as_bytes())?;
        let db = index_window(&plan, &inputs, &weights, w)?;
        let db_path = ws.db(w);
        std::fs::create_dir_all(db_path.parent().unwrap()).map_err(segfp_core::Error::from)?;
        save_db(&db, &db_path)?;
        let report = evaluate_window(&plan, &inputs, &weights, &db, w)?;
        let csv = ws.sweep_csv(w);
        write_artifact(&csv, render_csv(&report).as_bytes())?;
        eprintln!(
            "W={}: {} cells -> {}",
            seconds_label(w),
            report.cells.len(),
            csv.display()
        );
        written.extend([checkpoint, db_path, csv]);
        combined.merge(report);
    }
    for (path, text) in [
        (ws.sweep_combined_csv(), render_csv(&combined)),
        (ws.sweep_markdown(), render_markdown(&combined)),
        (ws.sweep_svg(), render_svg(&combined)),
        (ws.sweep_json(), serde_json::to_string_pretty(&combined)?),
    ] {
        write_artifact(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdviseMode {
    Live,
    Replay,
}

impl AdviseMode {
    pub fn name(self) -> &'static str {
        match self {
            AdviseMode::Live => "live",
            AdviseMode::Replay => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceLine {
    pub model: String,
    /// A question number, or `"summary"` for the model's envelope.
    pub question_id: serde_json::Value,
    pub interval: Option<[f64; 2]>,
    pub raw_span: Option<String>,
    pub distance_to_empirical: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consistent: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Asks each configured model (or the live endpoint's model) all five
/// questions and scores the parsed intervals against a sweep report, when
/// one is available.
pub fn cmd_advise(
    config: &ExperimentConfig,
    mode: AdviseMode,
    report: Option<&Path>,
) -> Result<Vec<AdviceLine>> {
    let ws = workspace(config);
    let report: Option<HitReport> = match report {
        Some(path) => {
            require_file(path, "report JSON not found")?;
            Some(serde_json::from_str(
                &std::fs::read_to_string(path).map_err(segfp_core::Error::from)?,
            )?)
        }
        None if ws.sweep_json().is_file() => Some(serde_json::from_str(
            &std::fs::read_to_string(ws.sweep_json()).map_err(segfp_core::Error::from)?,
        )?),
        None => None,
    };
    let clients: Vec<Box<dyn LlmClient>> = match mode {
        AdviseMode::Live => vec![Box::new(LiveClient::from_env()?)],
        AdviseMode::Replay => config
            .advisor
            .models
            .iter()
            .map(|m| {
                Box::new(ReplayClient::new(&config.advisor.replay_dir, m)) as Box<dyn LlmClient>
            })
            .collect(),
    };
    let distance = |rec: &Recommendation| -> Result<Option<f64>> {
        match &report {
            Some(r) => Ok(Some(score_against_empirical(rec, r)?)),
            None => Ok(None),
        }
    };

    let mut lines = Vec::new();
    for client in &clients {
        let mut recs = Vec::new();
        for q in 1..=5u8 {
            let response = client.send(&PromptSpec::new(q)?)?;
            let line = match parse_recommendation(&response) {
                Ok(rec) => {
                    let line = AdviceLine {
                        model: client.model().to_string(),
                        question_id: q.into(),
                        interval: Some(rec.interval()),
                        raw_span: Some(rec.raw_span.clone()),
                        distance_to_empirical: distance(&rec)?,
                        consistent: None,
                        error: None,
                    };
                    recs.push(rec);
                    line
                }
                Err(e) => AdviceLine {
                    model: client.model().to_string(),
                    question_id: q.into(),
                    interval: None,
                    raw_span: None,
                    distance_to_empirical: None,
                    consistent: None,
                    error: Some(e.to_string()),
                },
            };
            lines.push(line);
        }
        if recs.len() == 5 {
            let summary = summarize_model(&recs)?;
            lines.push(AdviceLine {
                model: client.model().to_string(),
                question_id: "summary".into(),
                interval: Some([summary.lo, summary.hi]),
                raw_span: None,
                distance_to_empirical: distance(&summary.as_recommendation())?,
                consistent: Some(summary.consistent),
                error: None,
            });
        }
    }
    let mut text = String::new();
    for line in &lines {
        text.push_str(&serde_json::to_string(line)?);
        text.push('\n');
    }
    write_artifact(&ws.advice(mode.name()), text.as_bytes())?;
    Ok(lines)
}
