//! The experiment configuration file shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use segfp_core::encoder::EncoderConfig;
use segfp_core::eval::{CorpusSpec, QuerySetSpec, SweepPlan};
use segfp_core::features::FeatureConfig;
use segfp_core::training::{AugmentConfig, TrainConfig};

/// Ranks the hit-rate report can score.
pub const SUPPORTED_K: [usize; 3] = [1, 3, 10];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    #[serde(flatten)]
    pub optimizer: TrainConfig,
    pub augment: AugmentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationSection {
    pub windows_s: Vec<f64>,
    pub hop_s: f64,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        Self {
            windows_s: vec![0.5, 1.0, 2.0],
            hop_s: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSection {
    pub query_lengths_s: Vec<f64>,
    pub top_k: Vec<usize>,
    pub k_nn: usize,
    pub top_m: usize,
    pub queries: QuerySetSpec,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            query_lengths_s: (1..=10).map(f64::from).collect(),
            top_k: SUPPORTED_K.to_vec(),
            k_nn: 20,
            top_m: 10,
            queries: QuerySetSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorSection {
    pub replay_dir: PathBuf,
    pub models: Vec<String>,
}

impl Default for AdvisorSection {
    fn default() -> Self {
        Self {
            replay_dir: PathBuf::from("replays"),
            models: vec![
                "gpt-5-mini".into(),
                "gemini-2.5-flash".into(),
                "claude-sonnet-4.5".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsSection {
    /// Root for every generated artifact; relative paths resolve against
    /// the config file's directory.
    pub workspace: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub features: FeatureConfig,
    pub encoder: EncoderConfig,
    pub training: TrainingSection,
    pub segmentation: SegmentationSection,
    pub evaluation: EvaluationSection,
    pub advisor: AdvisorSection,
    pub paths: PathsSection,
}

impl ExperimentConfig {
    /// Parses and validates a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.paths.workspace, &mut config.advisor.replay_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        let core = |e: segfp_core::Error| ConfigError::Invalid(e.to_string());
        self.corpus.validate().map_err(core)?;
        self.features.validate().map_err(core)?;
        self.encoder.validate().map_err(core)?;
        self.training.optimizer.validate().map_err(core)?;
        if self.features.mel_bins != self.encoder.mel_bins {
            return invalid(format!(
                "features.mel_bins ({}) differs from encoder.mel_bins ({})",
                self.features.mel_bins, self.encoder.mel_bins
            ));
        }
        let ev = &self.evaluation;
        let seg = &self.segmentation;
        if ev.top_k.is_empty() || ev.top_k.iter().any(|k| !SUPPORTED_K.contains(k)) {
            return invalid(format!(
                "evaluation.top_k must be drawn from {SUPPORTED_K:?}"
            ));
        }
        let max_k = *ev.top_k.iter().max().unwrap();
        if ev.k_nn < max_k {
            return invalid(format!(
                "k_nn ({}) is smaller than the largest K ({max_k})",
                ev.k_nn
            ));
        }
        if ev.top_m < max_k {
            return invalid(format!(
                "top_m ({}) is smaller than the largest K ({max_k})",
                ev.top_m
            ));
        }
        if seg.windows_s.is_empty() || ev.query_lengths_s.is_empty() {
            return invalid("need at least one segment length and one query length".into());
        }
        let min_w = seg.windows_s.iter().copied().fold(f64::INFINITY, f64::min);
        if let Some(l) = ev.query_lengths_s.iter().find(|&&l| l < min_w) {
            return invalid(format!(
                "query length {l} s is shorter than every segment length"
            ));
        }
        self.sweep_plan().validate().map_err(core)?;
        Ok(())
    }

    pub fn sweep_plan(&self) -> SweepPlan {
        SweepPlan {
            corpus: self.corpus.clone(),
            features: self.features.clone(),
            encoder: self.encoder.clone(),
            augment: self.training.augment.clone(),
            train: self.training.optimizer.clone(),
            hop_s: self.segmentation.hop_s,
            windows_s: self.segmentation.windows_s.clone(),
            query_lengths_s: self.evaluation.query_lengths_s.clone(),
            queries: self.evaluation.queries.clone(),
            k_nn: self.evaluation.k_nn,
            top_m: self.evaluation.top_m,
        }
    }
}
