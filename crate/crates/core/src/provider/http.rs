//! HTTP-backed provider.
//!
//! Speaks a minimal JSON contract that thin gateway configs can map onto
//! real vendors: POST `{model, prompt, temperature, max_tokens}` returning
//! `{text}` for completions, and `{model, inputs}` returning `{vectors}`
//! for embeddings. The API key is read from an environment variable at
//! construction and never logged.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::vecmath::Embedding;

use super::{CompletionRequest, Provider, ProviderConfig, ProviderKind};

pub struct HttpProvider {
    client: reqwest::blocking::Client,
    completion_url: String,
    embedding_url: String,
    model: String,
    api_key: Option<String>,
    retries: u32,
    min_interval: Option<Duration>,
    last_call: Mutex<Option<Instant>>,
}

impl HttpProvider {
    pub fn from_config(config: &ProviderConfig) -> Result<Self> {
        if config.kind != ProviderKind::Http {
            return Err(Error::Config("http provider built from non-http config".into()));
        }
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Config("provider.endpoint is required for http".into()))?
            .trim_end_matches('/')
            .to_string();
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Provider(format!("failed to build HTTP client: {e}")))?;
        let min_interval = if config.rate_limit_rps > 0.0 {
            Some(Duration::from_secs_f64(1.0 / config.rate_limit_rps))
        } else {
            None
        };
        Ok(HttpProvider {
            client,
            completion_url: format!("{endpoint}{}", config.completion_path),
            embedding_url: format!("{endpoint}{}", config.embedding_path),
            model: config.model.clone(),
            api_key,
            retries: config.retries,
            min_interval,
            last_call: Mutex::new(None),
        })
    }

    /// Serializes outbound calls to the configured request rate.
    fn throttle(&self) {
        let Some(interval) = self.min_interval else {
            return;
        };
        let mut last = self.last_call.lock().unwrap();
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < interval {
                std::thread::sleep(interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value> {
        let mut attempt = 0u32;
        loop {
            self.throttle();
            let mut req = self.client.post(url).json(body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let outcome = req
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<Value>());
            match outcome {
                Ok(v) => return Ok(v),
                Err(e) if attempt < self.retries => {
                    attempt += 1;
                    tracing::warn!(url, attempt, "HTTP call failed, retrying: {e}");
                    std::thread::sleep(Duration::from_millis(50 * (1 << attempt.min(6)) as u64));
                }
                Err(e) => {
                    return Err(Error::Provider(format!(
                        "{url} failed after {} attempt(s): {e}",
                        attempt + 1
                    )))
                }
            }
        }
    }
}

impl Provider for HttpProvider {
    fn kind(&self) -> &'static str {
        "http"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        request.validate()?;
        let body = json!({
            "model": self.model,
            "prompt": request.rendered_prompt,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let reply = self.post(&self.completion_url, &body)?;
        reply
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Format("completion response is missing `text`".into()))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        if let Some(empty) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(Error::InvalidArgument(format!(
                "embed: text at index {empty} is empty"
            )));
        }
        let body = json!({ "model": self.model, "inputs": texts });
        let reply = self.post(&self.embedding_url, &body)?;
        let vectors = reply
            .get("vectors")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Format("embedding response is missing `vectors`".into()))?;
        if vectors.len() != texts.len() {
            return Err(Error::Format(format!(
                "embedding response has {} vectors for {} inputs",
                vectors.len(),
                texts.len()
            )));
        }
        vectors
            .iter()
            .map(|v| {
                let values: Vec<f64> = v
                    .as_array()
                    .ok_or_else(|| Error::Format("embedding vector is not an array".into()))?
                    .iter()
                    .map(|x| {
                        x.as_f64()
                            .ok_or_else(|| Error::Format("non-numeric embedding value".into()))
                    })
                    .collect::<Result<_>>()?;
                // vendors do not all return unit vectors; enforce the invariant here
                Embedding::from_raw(values)
            })
            .collect()
    }
}
