use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};

use crate::{AdvisorError, PromptSpec, Result};

pub const ENV_API_BASE: &str = "ADVISOR_API_BASE";
pub const ENV_API_KEY: &str = "ADVISOR_API_KEY";
pub const ENV_MODEL: &str = "ADVISOR_MODEL";

/// Source of model responses.
pub trait LlmClient {
    fn model(&self) -> &str;
    fn send(&self, prompt: &PromptSpec) -> Result<String>;
}

/// Serves canned responses from `<dir>/<model>/<question_id>.txt`.
#[derive(Debug, Clone)]
pub struct ReplayClient {
    dir: PathBuf,
    model: String,
}

impl ReplayClient {
    pub fn new(dir: impl AsRef<Path>, model: impl Into<String>) -> Self {
        Self {
            dir: dir.as_ref().to_path_buf(),
            model: model.into(),
        }
    }

    pub fn path_for(&self, question_id: u8) -> PathBuf {
        self.dir
            .join(&self.model)
            .join(format!("{question_id}.txt"))
    }
}

impl LlmClient for ReplayClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, prompt: &PromptSpec) -> Result<String> {
        let path = self.path_for(prompt.question_id);
        std::fs::read_to_string(&path).map_err(|_| AdvisorError::MissingReplayFile(path))
    }
}

/// One-shot client for an OpenAI-compatible chat completions endpoint.
#[derive(Debug, Clone)]
pub struct LiveClient {
    api_base: String,
    api_key: String,
    model: String,
    timeout: Duration,
}

impl LiveClient {
    pub fn new(
        api_base: impl Into<String>,
        api_key: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        Self {
            api_base: api_base.into(),
            api_key: api_key.into(),
            model: model.into(),
            timeout: Duration::from_secs(120),
        }
    }

    /// Reads the endpoint, key and model name from the environment.
    pub fn from_env() -> Result<Self> {
        let var = |name: &str| {
            std::env::var(name)
                .map_err(|_| AdvisorError::TransportError(format!("{name} is not set")))
        };
        Ok(Self::new(
            var(ENV_API_BASE)?,
            var(ENV_API_KEY)?,
            var(ENV_MODEL)?,
        ))
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl LlmClient for LiveClient {
    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, prompt: &PromptSpec) -> Result<String> {
        let url = format!("{}/chat/completions", self.api_base.trim_end_matches('/'));
        let body = json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt.render() }],
        })
        .to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let transport = |e: ureq::Error| AdvisorError::TransportError(e.to_string());
        let mut response = agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .content_type("application/json")
            .send(body.as_str())
            .map_err(transport)?;
        let text = response.body_mut().read_to_string().map_err(transport)?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| AdvisorError::TransportError(format!("response is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| AdvisorError::TransportError("response has no message content".into()))
    }
}
