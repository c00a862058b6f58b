//! Provider contracts for text completion and embedding.
//!
//! Every LLM and embedding use in the pipeline goes through [`Provider`],
//! so the whole system runs deterministically offline with the mock
//! implementation and talks to a real vendor through the HTTP one. A disk
//! cache can wrap either.

pub mod cache;
pub mod http;
pub mod mock;
pub mod template;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::Embedding;

/// One completion call: a rendered prompt plus sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template_id: String,
    pub rendered_prompt: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
}

impl CompletionRequest {
    pub fn new(template_id: impl Into<String>, rendered_prompt: impl Into<String>) -> Self {
        CompletionRequest {
            template_id: template_id.into(),
            rendered_prompt: rendered_prompt.into(),
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rendered_prompt.is_empty() {
            return Err(Error::InvalidArgument(
                "completion request: rendered prompt is empty".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(Error::InvalidArgument(
                "completion request: temperature must be >= 0".into(),
            ));
        }
        if self.max_output_tokens == 0 {
            return Err(Error::InvalidArgument(
                "completion request: max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Text completion + embedding behind one object-safe contract.
pub trait Provider: Send + Sync {
    fn kind(&self) -> &'static str;
    fn model(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
    /// One unit-norm vector per input text. Empty texts are invalid.
    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Mock,
    Http,
}

/// Provider selection and transport settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model: String,
    /// Base URL, required for the HTTP provider.
    pub endpoint: Option<String>,
    pub completion_path: String,
    pub embedding_path: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    /// Additional attempts after the first failure.
    pub retries: u32,
    /// Outbound requests per second; 0 disables throttling.
    pub rate_limit_rps: f64,
    pub embedding_dim: usize,
    /// Seed for the mock provider's embeddings.
    pub seed: u64,
    /// Enables the on-disk response cache.
    pub cache: bool,
    /// Directory of prompt templates; builtin templates when absent.
    pub template_dir: Option<PathBuf>,
    /// Optional table of canned mock completions.
    pub mock_fixtures: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            kind: ProviderKind::Mock,
            model: "mock-small".into(),
            endpoint: None,
            completion_path: "/v1/complete".into(),
            embedding_path: "/v1/embed".into(),
            api_key_env: None,
            timeout_secs: 30,
            retries: 2,
            rate_limit_rps: 0.0,
            embedding_dim: 64,
            seed: 42,
            cache: true,
            template_dir: None,
            mock_fixtures: None,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kind == ProviderKind::Http && self.endpoint.is_none() {
            return Err(Error::Config(
                "provider.endpoint is required when provider.kind = \"http\"".into(),
            ));
        }
        if self.embedding_dim == 0 {
            return Err(Error::Config("provider.embedding_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Builds the configured provider, wrapped in the disk cache when
/// `cache_dir` is given and caching is enabled.
pub fn build_provider(config: &ProviderConfig, cache_dir: Option<&Path>) -> Result<Arc<dyn Provider>> {
    config.validate()?;
    let inner: Arc<dyn Provider> = match config.kind {
        ProviderKind::Mock => {
            let mut mock = mock::MockProvider::new(config.seed, config.embedding_dim);
            if let Some(path) = &config.mock_fixtures {
                mock.load_fixtures(path)?;
            }
            Arc::new(mock)
        }
        ProviderKind::Http => Arc::new(http::HttpProvider::from_config(config)?),
    };
    match cache_dir {
        Some(dir) if config.cache => Ok(Arc::new(cache::CachedProvider::new(inner, dir)?)),
        _ => Ok(inner),
    }
}

/// Parses a completion as JSON, tolerating Markdown code fences.
fn parse_json_reply<T: DeserializeOwned>(raw: &str) -> serde_json::Result<T> {
    let trimmed = raw.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    serde_json::from_str(body.trim())
}

/// Completes a request and validates the reply against the expected JSON
/// shape, reprompting once with a corrective instruction before failing.
pub fn complete_json<T: DeserializeOwned>(
    provider: &dyn Provider,
    request: &CompletionRequest,
) -> Result<T> {
    let first = provider.complete(request)?;
    match parse_json_reply(&first) {
        Ok(v) => Ok(v),
        Err(first_err) => {
            let retry = CompletionRequest {
                rendered_prompt: format!(
                    "{}\n\nThe previous reply was not valid JSON of the requested shape. \
                     Respond with valid JSON only.",
                    request.rendered_prompt
                ),
                ..request.clone()
            };
            let second = provider.complete(&retry)?;
            parse_json_reply(&second).map_err(|e| {
                Error::Format(format!(
                    "template {}: invalid JSON after reprompt ({first_err}; then {e})",
                    request.template_id
                ))
            })
        }
    }
}
