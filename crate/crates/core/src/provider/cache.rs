//! Persistent response cache.
//!
//! Wraps any provider with a content-addressed disk cache keyed by
//! (provider kind, model, template id, temperature, rendered prompt) for
//! completions and (kind, model, text) for embeddings. Files are written
//! atomically, so concurrent readers and a single in-flight writer share
//! the directory safely; indexing reruns become cheap.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Result;
use crate::fsutil::{sha256_hex, write_atomic};
use crate::vecmath::Embedding;

use super::{CompletionRequest, Provider};

#[derive(Serialize, Deserialize)]
struct CachedCompletion {
    template_id: String,
    model: String,
    temperature: f64,
    response: String,
}

#[derive(Serialize, Deserialize)]
struct CachedEmbedding {
    model: String,
    vector: Vec<f64>,
}

pub struct CachedProvider {
    inner: Arc<dyn Provider>,
    dir: PathBuf,
}

impl CachedProvider {
    pub fn new(inner: Arc<dyn Provider>, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(CachedProvider {
            inner,
            dir: dir.to_path_buf(),
        })
    }

    fn completion_path(&self, request: &CompletionRequest) -> PathBuf {
        let key = json!({
            "kind": self.inner.kind(),
            "model": self.inner.model(),
            "template_id": request.template_id,
            "temperature": request.temperature,
            "prompt": request.rendered_prompt,
        });
        self.dir
            .join(format!("{}.json", sha256_hex(key.to_string().as_bytes())))
    }

    fn embedding_path(&self, text: &str) -> PathBuf {
        let key = json!({
            "kind": self.inner.kind(),
            "model": self.inner.model(),
            "op": "embed",
            "text": text,
        });
        self.dir
            .join(format!("{}.json", sha256_hex(key.to_string().as_bytes())))
    }
}

impl Provider for CachedProvider {
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        request.validate()?;
        let path = self.completion_path(request);
        if let Ok(raw) = std::fs::read_to_string(&path) {
            if let Ok(hit) = serde_json::from_str::<CachedCompletion>(&raw) {
                return Ok(hit.response);
            }
        }
        let response = self.inner.complete(request)?;
        let record = CachedCompletion {
            template_id: request.template_id.clone(),
            model: self.inner.model().to_string(),
            temperature: request.temperature,
            response: response.clone(),
        };
        write_atomic(&path, serde_json::to_string(&record)?.as_bytes())?;
        Ok(response)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let mut out: Vec<Option<Embedding>> = vec![None; texts.len()];
        let mut miss_idx = Vec::new();
        for (i, text) in texts.iter().enumerate() {
            let path = self.embedding_path(text);
            if let Ok(raw) = std::fs::read_to_string(&path) {
                if let Ok(hit) = serde_json::from_str::<CachedEmbedding>(&raw) {
                    out[i] = Some(Embedding(hit.vector));
                    continue;
                }
            }
            miss_idx.push(i);
        }
        if !miss_idx.is_empty() {
            let miss_texts: Vec<String> = miss_idx.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed(&miss_texts)?;
            for (&i, embedding) in miss_idx.iter().zip(fresh) {
                let record = CachedEmbedding {
                    model: self.inner.model().to_string(),
                    vector: embedding.0.clone(),
                };
                write_atomic(
                    &self.embedding_path(&texts[i]),
                    serde_json::to_string(&record)?.as_bytes(),
                )?;
                out[i] = Some(embedding);
            }
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::MockProvider;

    #[test]
    fn second_completion_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockProvider::new(1, 16));
        let cached = CachedProvider::new(mock.clone(), dir.path()).unwrap();
        let req = CompletionRequest::new("ner", "INPUT:\nThe relay protects the breaker.");
        let a = cached.complete(&req).unwrap();
        let b = cached.complete(&req).unwrap();
        assert_eq!(a, b);
        assert_eq!(mock.completion_calls(), 1);
    }

    #[test]
    fn embeddings_round_trip_through_cache() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockProvider::new(1, 16));
        let cached = CachedProvider::new(mock.clone(), dir.path()).unwrap();
        let texts = vec!["relay".to_string(), "breaker".to_string()];
        let a = cached.embed(&texts).unwrap();
        let b = cached.embed(&texts).unwrap();
        assert_eq!(a, b);
        assert_eq!(mock.embed_calls(), 1);
        // partially cached batch only sends the misses
        let texts2 = vec!["relay".to_string(), "contact".to_string()];
        let c = cached.embed(&texts2).unwrap();
        assert_eq!(c[0], a[0]);
        assert_eq!(mock.embed_calls(), 2);
    }
}
