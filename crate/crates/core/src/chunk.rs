//! First Retrieval Granular Units.
//!
//! Hybrid chunking splits the element stream at title boundaries subject to
//! minimum/maximum token lengths; semantic merging then joins adjacent
//! chunks whose neighborhood embeddings are similar. A fixed-size sliding
//! window chunker serves as the retrieval baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::elements::{DocumentElement, ElementKind};
use crate::error::{Error, Result};
use crate::tokenize::{count_tokens, token_spans};
use crate::vecmath::Embedding;

/// A contiguous, token-bounded span of element text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub doc_id: String,
    pub element_ids: Vec<String>,
    pub text: String,
    pub token_count: usize,
    /// 0-based position within the document.
    pub seq: usize,
}

/// Knobs for hybrid + semantic chunking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingConfig {
    /// A title only opens a new chunk once the current one has this many tokens.
    pub min_tokens: usize,
    /// Chunks close before exceeding this, except single oversized elements.
    pub max_tokens: usize,
    /// Cosine threshold for merging adjacent chunks.
    pub similarity_threshold: f64,
    /// Neighbors on each side used to build combined sentences.
    pub neighbor_window: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            min_tokens: 200,
            max_tokens: 1000,
            similarity_threshold: 0.95,
            neighbor_window: 1,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_tokens == 0 || self.max_tokens == 0 {
            return Err(Error::Config(
                "chunking: min_tokens and max_tokens must be positive".into(),
            ));
        }
        if self.min_tokens >= self.max_tokens {
            return Err(Error::Config(format!(
                "chunking: min_tokens ({}) must be < max_tokens ({})",
                self.min_tokens, self.max_tokens
            )));
        }
        if !(-1.0..=1.0).contains(&self.similarity_threshold) {
            return Err(Error::Config(
                "chunking: similarity_threshold must lie in [-1, 1]".into(),
            ));
        }
        if self.neighbor_window == 0 {
            return Err(Error::Config("chunking: neighbor_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub chunk_count: usize,
    /// Token-count histogram: bin start (width 100) -> chunk count.
    pub histogram: BTreeMap<usize, usize>,
    pub mean_tokens: f64,
    pub median_tokens: f64,
}

/// Chunk-size statistics per candidate similarity threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

fn join_texts<'a, I: Iterator<Item = &'a str>>(texts: I) -> String {
    let joined: Vec<&str> = texts.collect();
    joined.join("\n").trim().to_string()
}

fn make_chunk(
    doc_id: &str,
    seq: usize,
    id: String,
    element_ids: Vec<String>,
    text: String,
) -> Chunk {
    let token_count = count_tokens(&text);
    Chunk {
        id,
        doc_id: doc_id.to_string(),
        element_ids,
        text,
        token_count,
        seq,
    }
}

/// Splits an element stream into chunks at title boundaries.
///
/// A title opens a new chunk only once the current chunk has at least
/// `min_tokens` tokens; a chunk closes before an element that would push it
/// past `max_tokens`, except that a single element longer than `max_tokens`
/// becomes its own oversized chunk. Documents are chunked independently;
/// every element lands in exactly one chunk.
pub fn hybrid_chunk(elements: &[DocumentElement], config: &ChunkingConfig) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < elements.len() {
        let doc_id = elements[i].doc_id.clone();
        let mut j = i;
        while j < elements.len() && elements[j].doc_id == doc_id {
            j += 1;
        }
        chunk_document(&elements[i..j], &doc_id, config, &mut chunks);
        i = j;
    }
    chunks
}

fn chunk_document(
    elements: &[DocumentElement],
    doc_id: &str,
    config: &ChunkingConfig,
    out: &mut Vec<Chunk>,
) {
    let mut seq = 0;
    let mut current: Vec<&DocumentElement> = Vec::new();
    let mut current_tokens = 0usize;

    let mut flush = |members: &mut Vec<&DocumentElement>, seq: &mut usize| {
        if members.is_empty() {
            return;
        }
        let text = join_texts(members.iter().map(|e| e.text.as_str()));
        let ids = members.iter().map(|e| e.id.clone()).collect();
        out.push(make_chunk(
            doc_id,
            *seq,
            format!("{doc_id}#h{seq:04}"),
            ids,
            text,
        ));
        *seq += 1;
        members.clear();
    };

    for element in elements {
        let t = count_tokens(&element.text);
        if !current.is_empty() {
            let title_split = element.kind == ElementKind::Title && current_tokens >= config.min_tokens;
            let overflow = current_tokens + t > config.max_tokens;
            if title_split || overflow {
                flush(&mut current, &mut seq);
                current_tokens = 0;
            }
        }
        current.push(element);
        current_tokens += t;
    }
    flush(&mut current, &mut seq);
}

/// Concatenates each chunk's text with its `window` predecessors and
/// successors (truncated at the boundaries): one combined sentence per chunk.
pub fn combine_neighbors(chunks: &[Chunk], window: usize) -> Result<Vec<String>> {
    if window == 0 {
        return Err(Error::InvalidArgument(
            "combine_neighbors: window must be >= 1".into(),
        ));
    }
    Ok((0..chunks.len())
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window + 1).min(chunks.len());
            chunks[lo..hi]
                .iter()
                .map(|c| c.text.as_str())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect())
}

/// Merges runs of adjacent same-document chunks whose neighborhood
/// embeddings have cosine similarity at or above `threshold`.
///
/// Merging is greedy left-to-right and transitive across a qualifying run;
/// a merged chunk keeps the first member's id and concatenates text and
/// element ids. Output seqs are renumbered per document.
pub fn semantic_merge(
    chunks: &[Chunk],
    embeddings: &[Embedding],
    threshold: f64,
) -> Result<Vec<Chunk>> {
    if chunks.len() != embeddings.len() {
        return Err(Error::InvalidArgument(format!(
            "semantic_merge: {} chunks but {} embeddings",
            chunks.len(),
            embeddings.len()
        )));
    }
    let mut out: Vec<Chunk> = Vec::new();
    let mut seq_by_doc: BTreeMap<String, usize> = BTreeMap::new();
    let mut i = 0;
    while i < chunks.len() {
        let mut j = i;
        while j + 1 < chunks.len()
            && chunks[j + 1].doc_id == chunks[i].doc_id
            && embeddings[j].cosine(&embeddings[j + 1])? >= threshold
        {
            j += 1;
        }
        let doc_id = chunks[i].doc_id.clone();
        let seq = seq_by_doc.entry(doc_id.clone()).or_insert(0);
        let members = &chunks[i..=j];
        let text = join_texts(members.iter().map(|c| c.text.as_str()));
        let element_ids = members
            .iter()
            .flat_map(|c| c.element_ids.iter().cloned())
            .collect();
        out.push(make_chunk(
            &doc_id,
            *seq,
            members[0].id.clone(),
            element_ids,
            text,
        ));
        *seq += 1;
        i = j + 1;
    }
    Ok(out)
}

fn sweep_row(threshold: f64, merged: &[Chunk]) -> SweepRow {
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    let mut counts: Vec<usize> = merged.iter().map(|c| c.token_count).collect();
    counts.sort_unstable();
    for &c in &counts {
        *histogram.entry((c / 100) * 100).or_insert(0) += 1;
    }
    let n = counts.len();
    let mean = if n == 0 {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / n as f64
    };
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => counts[n / 2] as f64,
        _ => (counts[n / 2 - 1] + counts[n / 2]) as f64 / 2.0,
    };
    SweepRow {
        threshold,
        chunk_count: n,
        histogram,
        mean_tokens: mean,
        median_tokens: median,
    }
}

/// Runs an independent [`semantic_merge`] per threshold and reports the
/// resulting chunk counts and size statistics.
pub fn threshold_sweep(
    chunks: &[Chunk],
    embeddings: &[Embedding],
    thresholds: &[f64],
) -> Result<SweepReport> {
    let mut rows = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let merged = semantic_merge(chunks, embeddings, t)?;
        rows.push(sweep_row(t, &merged));
    }
    Ok(SweepReport { rows })
}

/// Fixed-size sliding-window chunker (the vector-RAG baseline).
///
/// Windows of `size_tokens` start every `size_tokens - overlap_tokens`
/// tokens; the last window may be short. Baseline chunks carry
/// document-level provenance in `element_ids`.
pub fn fixed_chunk(
    doc_id: &str,
    element_ids: &[String],
    text: &str,
    size_tokens: usize,
    overlap_tokens: usize,
) -> Result<Vec<Chunk>> {
    if size_tokens == 0 {
        return Err(Error::InvalidArgument("fixed_chunk: size must be positive".into()));
    }
    if overlap_tokens >= size_tokens {
        return Err(Error::InvalidArgument(format!(
            "fixed_chunk: overlap ({overlap_tokens}) must be < size ({size_tokens})"
        )));
    }
    let spans = token_spans(text);
    let total = spans.len();
    let stride = size_tokens - overlap_tokens;
    let mut out = Vec::new();
    let mut start = 0usize;
    let mut seq = 0usize;
    while start < total {
        let end = (start + size_tokens).min(total);
        let slice = &text[spans[start].start..spans[end - 1].end];
        out.push(make_chunk(
            doc_id,
            seq,
            format!("{doc_id}#f{seq:04}"),
            element_ids.to_vec(),
            slice.to_string(),
        ));
        seq += 1;
        if start + size_tokens >= total {
            break;
        }
        start += stride;
    }
    Ok(out)
}
