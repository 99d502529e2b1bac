//! Subcommands of the `segfp` binary, exposed as functions so they can be
//! driven from tests.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing file {path}: {hint}")]
    MissingFile { path: PathBuf, hint: &'static str },
    #[error(transparent)]
    Pipeline(#[from] segfp_core::Error),
    #[error(transparent)]
    Advisor(#[from] segfp_advisor::AdvisorError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Seconds as a short label: `0.5`, `1`, `2`.
pub fn seconds_label(x: f64) -> String {
    let s = format!("{x:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Locations of every artifact under the workspace root.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn corpus_manifest(&self) -> PathBuf {
        self.corpus_dir().join("manifest.json")
    }

    pub fn checkpoint(&self, w: f64) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("w{}.nfpw", seconds_label(w)))
    }

    pub fn training_log(&self, w: f64) -> PathBuf {
        self.root
            .join("logs")
            .join(format!("train_w{}.csv", seconds_label(w)))
    }

    pub fn db(&self, w: f64) -> PathBuf {
        self.root
            .join("db")
            .join(format!("w{}.nfpd", seconds_label(w)))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn eval_report(&self, w: f64) -> PathBuf {
        self.reports_dir()
            .join(format!("eval_w{}.csv", seconds_label(w)))
    }

    pub fn sweep_csv(&self, w: f64) -> PathBuf {
        self.reports_dir()
            .join(format!("sweep_w{}.csv", seconds_label(w)))
    }

    pub fn sweep_combined_csv(&self) -> PathBuf {
        self.reports_dir().join("sweep.csv")
    }

    pub fn sweep_markdown(&self) -> PathBuf {
        self.reports_dir().join("sweep.md")
    }

    pub fn sweep_svg(&self) -> PathBuf {
        self.reports_dir().join("sweep.svg")
    }

    pub fn sweep_json(&self) -> PathBuf {
        self.reports_dir().join("sweep.json")
    }

    pub fn advice(&self, mode: &str) -> PathBuf {
        self.root.join("advice").join(format!("{mode}.jsonl"))
    }
}

/// Writes `bytes` atomically, creating parent directories.
pub fn write_artifact(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(segfp_core::Error::from)?;
    }
    segfp_core::io::write_atomic(path, bytes)?;
    Ok(())
}

pub fn require_file(path: &Path, hint: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingFile {
            path: path.to_path_buf(),
            hint,
        })
    }
}
