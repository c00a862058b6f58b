//! Ontology-driven retrieval and the vector-search baseline.
//!
//! A query is decomposed into key elements (names) with the query itself
//! as the shared definition; classes at the chosen ontology level are
//! ranked by combined name/definition cosine; their source chunks are
//! gathered with a configurable expanded context window and a token
//! budget. The baseline ranks fixed-size chunks by embedding similarity
//! alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chunk::Chunk;
use crate::error::{Error, Result};
use crate::extract::KeyElementStore;
use crate::kgraph::KnowledgeGraph;
use crate::ontology::Ontology;
use crate::provider::template::TemplateStore;
use crate::provider::{complete_json, CompletionRequest, Provider};
use crate::tokenize::token_spans;
use crate::vecmath::Embedding;

/// Retrieval knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Ontology level to search (0 = coarsest).
    pub level: usize,
    pub top_k_classes: usize,
    /// Tokens of context added on each side of a retrieved chunk.
    pub context_window_tokens: usize,
    /// Hard budget on total context tokens.
    pub max_context_tokens: usize,
    /// Weight of the name cosine; the definition cosine gets the rest.
    pub name_weight: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            level: 0,
            top_k_classes: 5,
            context_window_tokens: 200,
            max_context_tokens: 8000,
            name_weight: 0.5,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k_classes == 0 {
            return Err(Error::Config("retrieval.top_k_classes must be >= 1".into()));
        }
        if self.max_context_tokens == 0 {
            return Err(Error::Config("retrieval.max_context_tokens must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.name_weight) {
            return Err(Error::Config("retrieval.name_weight must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A key element extracted from the query: a name to match class names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryKeyElement {
    pub name: String,
    pub name_embedding: Embedding,
}

/// One ranked class match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMatch {
    pub class_id: String,
    pub score: f64,
}

/// One expanded context span with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpan {
    pub chunk_id: String,
    pub text: String,
    /// Matched ontology class; absent for the vector baseline.
    pub class_id: Option<String>,
    pub score: f64,
    pub token_count: usize,
}

/// The assembled retrieval context, bounded by the token budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalContext {
    pub spans: Vec<ContextSpan>,
    pub total_tokens: usize,
}

impl RetrievalContext {
    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn joined_text(&self) -> String {
        self.spans
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// An answer with full retrieval provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub text: String,
    pub spans: Vec<ContextSpan>,
}

struct DocStream {
    /// Chunk ids in seq order with their token ranges.
    chunk_ranges: Vec<(String, usize, usize)>,
    text: String,
    token_starts: Vec<usize>,
    token_ends: Vec<usize>,
}

/// Chunks indexed by id and by document, with per-document token streams
/// for window expansion.
pub struct ChunkStore {
    chunks: Vec<Chunk>,
    by_id: BTreeMap<String, usize>,
    docs: BTreeMap<String, DocStream>,
}

impl ChunkStore {
    pub fn new(mut chunks: Vec<Chunk>) -> Result<Self> {
        chunks.sort_by(|a, b| (&a.doc_id, a.seq).cmp(&(&b.doc_id, b.seq)));
        let mut by_id = BTreeMap::new();
        for (i, c) in chunks.iter().enumerate() {
            if by_id.insert(c.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate chunk id {}", c.id)));
            }
        }
        let mut docs = BTreeMap::new();
        let mut i = 0;
        while i < chunks.len() {
            let doc_id = chunks[i].doc_id.clone();
            let mut j = i;
            while j < chunks.len() && chunks[j].doc_id == doc_id {
                j += 1;
            }
            let members = &chunks[i..j];
            let text = members
                .iter()
                .map(|c| c.text.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            let spans = token_spans(&text);
            let mut chunk_ranges = Vec::with_capacity(members.len());
            let mut cursor = 0usize;
            for c in members {
                chunk_ranges.push((c.id.clone(), cursor, cursor + c.token_count));
                cursor += c.token_count;
            }
            if cursor != spans.len() {
                return Err(Error::Integrity(format!(
                    "document {doc_id}: chunk token counts sum to {cursor} but the stream has {}",
                    spans.len()
                )));
            }
            docs.insert(
                doc_id,
                DocStream {
                    chunk_ranges,
                    token_starts: spans.iter().map(|s| s.start).collect(),
                    token_ends: spans.iter().map(|s| s.end).collect(),
                    text,
                },
            );
            i = j;
        }
        Ok(ChunkStore { chunks, by_id, docs })
    }

    pub fn get(&self, id: &str) -> Option<&Chunk> {
        self.by_id.get(id).map(|&i| &self.chunks[i])
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    fn slice_tokens(&self, doc_id: &str, start: usize, end: usize) -> Option<&str> {
        let doc = self.docs.get(doc_id)?;
        if start >= end || end > doc.token_starts.len() {
            return None;
        }
        Some(&doc.text[doc.token_starts[start]..doc.token_ends[end - 1]])
    }
}

/// Chunk provenance per ontology member: candidate class id -> source
/// chunk ids, flowing through member key elements.
pub struct ProvenanceIndex {
    chunks_of_candidate: BTreeMap<String, Vec<String>>,
}

impl ProvenanceIndex {
    pub fn build(kg: &KnowledgeGraph, store: &KeyElementStore) -> Result<Self> {
        let mut chunks_of_candidate = BTreeMap::new();
        for class in &kg.classes {
            let mut chunk_ids: Vec<String> = Vec::new();
            for member in &class.member_ids {
                let element = store.get(member).ok_or_else(|| {
                    Error::Integrity(format!(
                        "candidate class {} references missing key element {member}",
                        class.id
                    ))
                })?;
                for cid in &element.source_chunk_ids {
                    if !chunk_ids.contains(cid) {
                        chunk_ids.push(cid.clone());
                    }
                }
            }
            chunk_ids.sort();
            chunks_of_candidate.insert(class.id.clone(), chunk_ids);
        }
        Ok(ProvenanceIndex { chunks_of_candidate })
    }

    /// Source chunks of an ontology class, in sorted id order.
    pub fn chunks_of(&self, class: &crate::ontology::OntologyClass) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for member in &class.member_ids {
            if let Some(ids) = self.chunks_of_candidate.get(member) {
                for id in ids {
                    if !out.contains(id) {
                        out.push(id.clone());
                    }
                }
            }
        }
        out.sort();
        out
    }
}

/// Extracts query key elements via the provider and embeds them, plus the
/// whole query as the shared definition vector. An empty extraction falls
/// back to the whole query as one key.
pub fn extract_query_keys(
    provider: &dyn Provider,
    templates: &TemplateStore,
    query: &str,
) -> Result<(Vec<QueryKeyElement>, Embedding)> {
    if query.trim().is_empty() {
        return Err(Error::InvalidArgument("query is empty".into()));
    }
    let prompt = templates.render("extract_query_keys", &[("query", query)])?;
    let raw: Vec<String> = complete_json(
        provider,
        &CompletionRequest::new("extract_query_keys", prompt),
    )?;
    let mut names: Vec<String> = Vec::new();
    for name in raw {
        let name = name.trim().to_string();
        if !name.is_empty() && !names.contains(&name) {
            names.push(name);
        }
    }
    if names.is_empty() {
        names.push(query.trim().to_string());
    }
    let mut texts = names.clone();
    texts.push(query.trim().to_string());
    let mut embeddings = provider.embed(&texts)?;
    let query_embedding = embeddings.pop().expect("query embedding present");
    let keys = names
        .into_iter()
        .zip(embeddings)
        .map(|(name, name_embedding)| QueryKeyElement {
            name,
            name_embedding,
        })
        .collect();
    Ok((keys, query_embedding))
}

/// Ranks ontology classes at the configured level: per key, score is the
/// weighted mean of name and definition cosines; the union of per-key
/// top-k classes is returned sorted by best score, ties by class id.
pub fn match_classes(
    keys: &[QueryKeyElement],
    query_embedding: &Embedding,
    config: &RetrievalConfig,
    ontology: &Ontology,
) -> Result<Vec<ClassMatch>> {
    config.validate()?;
    let level = ontology.level(config.level).ok_or_else(|| {
        Error::Config(format!(
            "ontology has no level {} (available: {})",
            config.level,
            ontology
                .levels
                .iter()
                .map(|l| l.level.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ))
    })?;
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for key in keys {
        let mut scored: Vec<(&str, f64)> = Vec::new();
        for class in &level.classes {
            let (Some(name_emb), Some(def_emb)) = (&class.name_embedding, &class.def_embedding)
            else {
                return Err(Error::Integrity(format!(
                    "class {} lacks embeddings; run naming first",
                    class.id
                )));
            };
            let score = config.name_weight * key.name_embedding.cosine(name_emb)?
                + (1.0 - config.name_weight) * query_embedding.cosine(def_emb)?;
            scored.push((class.id.as_str(), score));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(b.0))
        });
        for (id, score) in scored.into_iter().take(config.top_k_classes) {
            let entry = best.entry(id).or_insert(f64::NEG_INFINITY);
            if score > *entry {
                *entry = score;
            }
        }
    }
    let mut matches: Vec<ClassMatch> = best
        .into_iter()
        .map(|(class_id, score)| ClassMatch {
            class_id: class_id.to_string(),
            score,
        })
        .collect();
    matches.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.class_id.cmp(&b.class_id))
    });
    Ok(matches)
}

struct PendingSpan {
    doc_id: String,
    start: usize,
    end: usize,
    chunk_id: String,
    class_id: String,
    score: f64,
}

/// Gathers the source chunks of the matched classes, expands each by the
/// context window inside its document token stream, coalesces overlapping
/// spans per document, and fills the token budget in score order (the
/// span that would overflow is truncated and ends the fill).
pub fn gather_chunks(
    matches: &[ClassMatch],
    config: &RetrievalConfig,
    store: &ChunkStore,
    ontology: &Ontology,
    provenance: &ProvenanceIndex,
) -> Result<RetrievalContext> {
    config.validate()?;
    let mut pending: Vec<PendingSpan> = Vec::new();
    for m in matches {
        let class = ontology
            .class(&m.class_id)
            .ok_or_else(|| Error::Integrity(format!("matched class {} not in ontology", m.class_id)))?;
        for chunk_id in provenance.chunks_of(class) {
            let chunk = store
                .get(&chunk_id)
                .ok_or_else(|| Error::Integrity(format!("chunk {chunk_id} not in store")))?;
            if chunk.token_count == 0 {
                continue;
            }
            let doc = store
                .docs
                .get(&chunk.doc_id)
                .ok_or_else(|| Error::Integrity(format!("document {} not indexed", chunk.doc_id)))?;
            let (_, start, end) = doc
                .chunk_ranges
                .iter()
                .find(|(id, _, _)| *id == chunk_id)
                .expect("chunk registered in its document");
            let total = doc.token_starts.len();
            pending.push(PendingSpan {
                doc_id: chunk.doc_id.clone(),
                start: start.saturating_sub(config.context_window_tokens),
                end: (end + config.context_window_tokens).min(total),
                chunk_id,
                class_id: m.class_id.clone(),
                score: m.score,
            });
        }
    }

    // coalesce overlapping spans per document (touching spans stay
    // separate, so window 0 returns chunks verbatim); the best-scoring
    // contributor represents the merged span
    let mut by_doc: BTreeMap<String, Vec<PendingSpan>> = BTreeMap::new();
    for span in pending {
        by_doc.entry(span.doc_id.clone()).or_default().push(span);
    }
    let mut coalesced: Vec<PendingSpan> = Vec::new();
    for (_, mut spans) in by_doc {
        spans.sort_by_key(|s| (s.start, s.end));
        let mut iter = spans.into_iter();
        let mut current = iter.next().expect("non-empty group");
        for span in iter {
            if span.start < current.end {
                current.end = current.end.max(span.end);
                if span.score > current.score {
                    current.score = span.score;
                    current.chunk_id = span.chunk_id;
                    current.class_id = span.class_id;
                }
            } else {
                coalesced.push(current);
                current = span;
            }
        }
        coalesced.push(current);
    }
    coalesced.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then_with(|| a.start.cmp(&b.start))
    });

    let mut spans = Vec::new();
    let mut total_tokens = 0usize;
    for span in coalesced {
        let remaining = config.max_context_tokens - total_tokens;
        if remaining == 0 {
            break;
        }
        let len = span.end - span.start;
        let (end, truncated) = if len > remaining {
            (span.start + remaining, true)
        } else {
            (span.end, false)
        };
        let text = store
            .slice_tokens(&span.doc_id, span.start, end)
            .unwrap_or_default()
            .to_string();
        let token_count = end - span.start;
        total_tokens += token_count;
        spans.push(ContextSpan {
            chunk_id: span.chunk_id,
            text,
            class_id: Some(span.class_id),
            score: span.score,
            token_count,
        });
        if truncated {
            break;
        }
    }
    Ok(RetrievalContext {
        spans,
        total_tokens,
    })
}

/// Generates the answer over the assembled context, or returns the
/// refusal template verbatim when the context is empty. Provenance rides
/// along in the record.
pub fn answer(
    provider: &dyn Provider,
    templates: &TemplateStore,
    query: &str,
    context: &RetrievalContext,
) -> Result<AnswerRecord> {
    if context.is_empty() {
        let text = templates.render("refusal", &[("query", query)])?;
        return Ok(AnswerRecord {
            text,
            spans: Vec::new(),
        });
    }
    let joined = context.joined_text();
    let prompt = templates.render("answer", &[("query", query), ("context", &joined)])?;
    let text = provider
        .complete(&CompletionRequest::new("answer", prompt))?
        .trim()
        .to_string();
    Ok(AnswerRecord {
        text,
        spans: context.spans.clone(),
    })
}

/// One entry of the vector baseline index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    pub token_count: usize,
    pub embedding: Embedding,
}

/// The vector baseline index: fixed-size chunks with embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    pub dim: usize,
    pub entries: Vec<IndexEntry>,
}

impl VectorIndex {
    pub fn build(chunks: &[Chunk], provider: &dyn Provider) -> Result<Self> {
        let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
        let embeddings = provider.embed(&texts)?;
        let dim = embeddings.first().map_or(0, Embedding::dim);
        Ok(VectorIndex {
            dim,
            entries: chunks
                .iter()
                .zip(embeddings)
                .map(|(c, embedding)| IndexEntry {
                    id: c.id.clone(),
                    doc_id: c.doc_id.clone(),
                    seq: c.seq,
                    text: c.text.clone(),
                    token_count: c.token_count,
                    embedding,
                })
                .collect(),
        })
    }
}

/// Top-k chunks by query-embedding cosine, ties by chunk id; no window
/// expansion. The same token budget applies.
pub fn vector_search(
    query_embedding: &Embedding,
    index: &VectorIndex,
    top_k: usize,
    max_context_tokens: usize,
) -> Result<RetrievalContext> {
    if index.entries.is_empty() {
        return Err(Error::Config("vector index is empty".into()));
    }
    let mut scored: Vec<(f64, &IndexEntry)> = index
        .entries
        .iter()
        .map(|e| Ok((query_embedding.cosine(&e.embedding)?, e)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.1.id.cmp(&b.1.id))
    });
    let mut spans = Vec::new();
    let mut total_tokens = 0usize;
    for (score, entry) in scored.into_iter().take(top_k) {
        let remaining = max_context_tokens - total_tokens;
        if remaining == 0 {
            break;
        }
        let (text, token_count, truncated) = if entry.token_count > remaining {
            let spans_e = token_spans(&entry.text);
            let text = entry.text[..spans_e[remaining - 1].end].to_string();
            (text, remaining, true)
        } else {
            (entry.text.clone(), entry.token_count, false)
        };
        total_tokens += token_count;
        spans.push(ContextSpan {
            chunk_id: entry.id.clone(),
            text,
            class_id: None,
            score,
            token_count,
        });
        if truncated {
            break;
        }
    }
    Ok(RetrievalContext {
        spans,
        total_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::MockProvider;
    use crate::tokenize::count_tokens;

    fn chunk(id: &str, doc: &str, seq: usize, text: &str) -> Chunk {
        Chunk {
            id: id.into(),
            doc_id: doc.into(),
            element_ids: vec![format!("{id}-el")],
            text: text.into(),
            token_count: count_tokens(text),
            seq,
        }
    }

    fn unit(v: Vec<f64>) -> Embedding {
        Embedding::from_raw(v).unwrap()
    }

    #[test]
    fn query_keys_fall_back_to_whole_query() {
        let provider = MockProvider::new(9, 32);
        let templates = TemplateStore::builtin();
        // query whose tokens are all too short for the mock entity rule
        let (keys, _) = extract_query_keys(&provider, &templates, "an od to it").unwrap();
        assert_eq!(keys.len(), 1);
        assert_eq!(keys[0].name, "an od to it");
    }

    #[test]
    fn query_keys_use_fixture_when_registered() {
        let provider = MockProvider::new(9, 32);
        let templates = TemplateStore::builtin();
        let query = "What are common failure modes of electrical relays?";
        let prompt = templates.render("extract_query_keys", &[("query", query)]).unwrap();
        provider.add_fixture(
            "extract_query_keys",
            &prompt,
            "[\"failure modes\", \"electrical relays\"]",
        );
        let (keys, query_emb) = extract_query_keys(&provider, &templates, query).unwrap();
        let names: Vec<&str> = keys.iter().map(|k| k.name.as_str()).collect();
        assert_eq!(names, vec!["failure modes", "electrical relays"]);
        assert!(query_emb.is_unit_norm(1e-6));
        // determinism
        let (keys2, emb2) = extract_query_keys(&provider, &templates, query).unwrap();
        assert_eq!(keys, keys2);
        assert_eq!(query_emb, emb2);
    }

    fn tiny_ontology(embs: &[(&str, Embedding, Embedding)]) -> Ontology {
        use crate::ontology::{OntologyClass, OntologyLevel};
        use std::collections::BTreeSet;
        Ontology {
            seed: 0,
            depth: 1,
            resolutions: vec![1.0],
            levels: vec![OntologyLevel {
                level: 0,
                classes: embs
                    .iter()
                    .map(|(id, n, d)| OntologyClass {
                        id: id.to_string(),
                        level: 0,
                        member_ids: [format!("{id}-cc")].into_iter().collect(),
                        aggregated_properties: BTreeSet::new(),
                        synthesized_properties: ["p".to_string()].into_iter().collect(),
                        name: format!("{id} name"),
                        definition: format!("{id} definition"),
                        name_embedding: Some(n.clone()),
                        def_embedding: Some(d.clone()),
                    })
                    .collect(),
                relationships: Vec::new(),
            }],
            hierarchy: Vec::new(),
            modularity_report: Vec::new(),
            warnings: Vec::new(),
            config_digest: String::new(),
        }
    }

    #[test]
    fn exact_match_scores_one_and_ranks_first() {
        let n1 = unit(vec![1.0, 0.0, 0.0]);
        let d1 = unit(vec![0.0, 1.0, 0.0]);
        let n2 = unit(vec![0.0, 0.0, 1.0]);
        let ontology = tiny_ontology(&[
            ("o0-0001", n1.clone(), d1.clone()),
            ("o0-0002", n2.clone(), n2.clone()),
        ]);
        let keys = vec![QueryKeyElement {
            name: "k".into(),
            name_embedding: n1,
        }];
        let config = RetrievalConfig::default();
        let matches = match_classes(&keys, &d1, &config, &ontology).unwrap();
        assert_eq!(matches[0].class_id, "o0-0001");
        assert!((matches[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_key_union_returns_both_classes() {
        let n1 = unit(vec![1.0, 0.0, 0.0]);
        let n2 = unit(vec![0.0, 1.0, 0.0]);
        let d = unit(vec![0.0, 0.0, 1.0]);
        let ontology = tiny_ontology(&[
            ("o0-0001", n1.clone(), d.clone()),
            ("o0-0002", n2.clone(), d.clone()),
        ]);
        let keys = vec![
            QueryKeyElement { name: "a".into(), name_embedding: n1 },
            QueryKeyElement { name: "b".into(), name_embedding: n2 },
        ];
        let config = RetrievalConfig {
            top_k_classes: 1,
            ..RetrievalConfig::default()
        };
        let matches = match_classes(&keys, &d, &config, &ontology).unwrap();
        assert_eq!(matches.len(), 2);
    }

    #[test]
    fn equal_scores_order_by_class_id() {
        let n = unit(vec![1.0, 0.0]);
        let d = unit(vec![0.0, 1.0]);
        let ontology = tiny_ontology(&[
            ("o0-0002", n.clone(), d.clone()),
            ("o0-0001", n.clone(), d.clone()),
        ]);
        let keys = vec![QueryKeyElement { name: "k".into(), name_embedding: n }];
        let matches = match_classes(&keys, &d, &RetrievalConfig::default(), &ontology).unwrap();
        assert_eq!(matches[0].class_id, "o0-0001");
        assert_eq!(matches[1].class_id, "o0-0002");
    }

    #[test]
    fn missing_level_is_a_config_error() {
        let n = unit(vec![1.0, 0.0]);
        let ontology = tiny_ontology(&[("o0-0001", n.clone(), n.clone())]);
        let config = RetrievalConfig {
            level: 3,
            ..RetrievalConfig::default()
        };
        let err = match_classes(&[], &n, &config, &ontology).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    /// Store with one document of three chunks plus provenance mapping a
    /// single class to the middle chunk.
    fn gather_fixture() -> (ChunkStore, Ontology, ProvenanceIndex) {
        use crate::extract::KeyElement;
        use crate::kgraph::CandidateClass;
        use std::collections::BTreeSet;
        let chunks = vec![
            chunk("d1#h0000", "d1", 0, "alpha beta gamma delta"),
            chunk("d1#h0001", "d1", 1, "epsilon zeta eta theta"),
            chunk("d1#h0002", "d1", 2, "iota kappa lambda mu"),
        ];
        let store = ChunkStore::new(chunks).unwrap();
        let e = unit(vec![1.0, 0.0]);
        let mut ontology = tiny_ontology(&[("o0-0001", e.clone(), e.clone())]);
        // align the ontology member id with the candidate class below
        ontology.levels[0].classes[0].member_ids =
            ["cc-0001".to_string()].into_iter().collect();
        let kg = KnowledgeGraph {
            classes: vec![CandidateClass {
                id: "cc-0001".into(),
                member_ids: ["ke-1".to_string()].into_iter().collect(),
                properties: BTreeSet::new(),
                name_centroid: e.clone(),
                def_centroid: e.clone(),
            }],
            edges: BTreeSet::new(),
        };
        let ke_store = KeyElementStore {
            elements: vec![KeyElement {
                id: "ke-1".into(),
                name: "zeta".into(),
                definition: "d".into(),
                name_embedding: e.clone(),
                def_embedding: Some(e),
                source_chunk_ids: ["d1#h0001".to_string()].into_iter().collect(),
                properties: BTreeSet::new(),
            }],
        };
        let provenance = ProvenanceIndex::build(&kg, &ke_store).unwrap();
        (store, ontology, provenance)
    }

    #[test]
    fn window_zero_returns_the_chunk_verbatim() {
        let (store, ontology, provenance) = gather_fixture();
        let matches = vec![ClassMatch { class_id: "o0-0001".into(), score: 0.9 }];
        let config = RetrievalConfig {
            context_window_tokens: 0,
            ..RetrievalConfig::default()
        };
        let ctx = gather_chunks(&matches, &config, &store, &ontology, &provenance).unwrap();
        assert_eq!(ctx.spans.len(), 1);
        assert_eq!(ctx.spans[0].text, "epsilon zeta eta theta");
        assert_eq!(ctx.total_tokens, 4);
    }

    #[test]
    fn window_expansion_reaches_neighbor_chunks() {
        let (store, ontology, provenance) = gather_fixture();
        let matches = vec![ClassMatch { class_id: "o0-0001".into(), score: 0.9 }];
        let config = RetrievalConfig {
            context_window_tokens: 2,
            ..RetrievalConfig::default()
        };
        let ctx = gather_chunks(&matches, &config, &store, &ontology, &provenance).unwrap();
        assert_eq!(ctx.spans.len(), 1);
        assert_eq!(ctx.spans[0].text, "gamma delta\nepsilon zeta eta theta\niota kappa");
        assert_eq!(ctx.total_tokens, 8);
    }

    #[test]
    fn budget_truncates_the_first_span_and_stops() {
        let (store, ontology, provenance) = gather_fixture();
        let matches = vec![ClassMatch { class_id: "o0-0001".into(), score: 0.9 }];
        let config = RetrievalConfig {
            context_window_tokens: 200,
            max_context_tokens: 3,
            ..RetrievalConfig::default()
        };
        let ctx = gather_chunks(&matches, &config, &store, &ontology, &provenance).unwrap();
        assert_eq!(ctx.spans.len(), 1);
        assert_eq!(ctx.total_tokens, 3);
        assert_eq!(ctx.spans[0].text, "alpha beta gamma");
    }

    #[test]
    fn answer_uses_refusal_template_on_empty_context() {
        let provider = MockProvider::new(2, 16);
        let templates = TemplateStore::builtin();
        let empty = RetrievalContext {
            spans: Vec::new(),
            total_tokens: 0,
        };
        let record = answer(&provider, &templates, "what now?", &empty).unwrap();
        assert!(record.text.contains("cannot be answered"));
        assert!(record.spans.is_empty());
    }

    #[test]
    fn vector_search_ranks_by_cosine_with_id_ties() {
        let provider = MockProvider::new(2, 32);
        let chunks = vec![
            chunk("d1#f0000", "d1", 0, "relay coil winding"),
            chunk("d1#f0001", "d1", 1, "sensor meter telemetry"),
        ];
        let index = VectorIndex::build(&chunks, &provider).unwrap();
        let q = provider.embed(&["relay coil winding".to_string()]).unwrap().remove(0);
        let ctx = vector_search(&q, &index, 1, 8000).unwrap();
        assert_eq!(ctx.spans[0].chunk_id, "d1#f0000");
        assert!((ctx.spans[0].score - 1.0).abs() < 1e-9);
        assert!(ctx.spans[0].class_id.is_none());

        // top_k beyond the corpus returns everything, ranked
        let ctx = vector_search(&q, &index, 10, 8000).unwrap();
        assert_eq!(ctx.spans.len(), 2);

        // exact ties order by chunk id
        let same = vec![
            IndexEntry {
                id: "b".into(),
                doc_id: "d".into(),
                seq: 1,
                text: "x".into(),
                token_count: 1,
                embedding: unit(vec![1.0, 0.0]),
            },
            IndexEntry {
                id: "a".into(),
                doc_id: "d".into(),
                seq: 0,
                text: "x".into(),
                token_count: 1,
                embedding: unit(vec![1.0, 0.0]),
            },
        ];
        let index = VectorIndex { dim: 2, entries: same };
        let ctx = vector_search(&unit(vec![1.0, 0.0]), &index, 2, 8000).unwrap();
        assert_eq!(ctx.spans[0].chunk_id, "a");
    }

    #[test]
    fn empty_index_is_a_config_error() {
        let index = VectorIndex {
            dim: 2,
            entries: Vec::new(),
        };
        let err = vector_search(&unit(vec![1.0, 0.0]), &index, 3, 100).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
