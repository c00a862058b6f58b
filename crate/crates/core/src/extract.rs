//! Information extraction: cleaning, disambiguation, NER, atomic facts,
//! chunk graphs, canonical key-element mapping, and term definitions.
//!
//! Per-chunk steps are provider-driven and independent across chunks; the
//! canonical map is a serialized fold in chunk order so runs are
//! reproducible.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chunk::Chunk;
use crate::error::{Error, Result};
use crate::provider::template::TemplateStore;
use crate::provider::{complete_json, CompletionRequest, Provider};
use crate::tokenize::count_tokens;
use crate::vecmath::Embedding;

/// A subject-predicate-object statement extracted from one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposition {
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub chunk_id: String,
    pub key_entities: Vec<String>,
}

/// A node of a per-chunk graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub name: String,
    pub part_of_speech: String,
    /// Extra node properties, e.g. the canonical id annotation.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

/// A typed, directed relationship between two named nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRelationship {
    pub relationship_type: String,
    pub source_node: String,
    pub target_node: String,
}

/// The per-chunk graph of propositions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkGraph {
    pub chunk_id: String,
    pub nodes: Vec<GraphNode>,
    pub relationships: Vec<GraphRelationship>,
}

impl ChunkGraph {
    /// Every relationship endpoint must name an existing node; node names
    /// must be unique.
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !names.insert(n.name.as_str()) {
                return Err(Error::Integrity(format!(
                    "chunk graph {}: duplicate node name {}",
                    self.chunk_id, n.name
                )));
            }
        }
        for r in &self.relationships {
            for endpoint in [&r.source_node, &r.target_node] {
                if !names.contains(endpoint.as_str()) {
                    return Err(Error::Integrity(format!(
                        "chunk graph {}: relationship ({}, {}, {}) references missing node {}",
                        self.chunk_id, r.relationship_type, r.source_node, r.target_node, endpoint
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A canonical entity with name/definition embeddings and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyElement {
    pub id: String,
    pub name: String,
    /// Filled by [`Extractor::define_and_embed`]; empty until then.
    pub definition: String,
    pub name_embedding: Embedding,
    pub def_embedding: Option<Embedding>,
    pub source_chunk_ids: BTreeSet<String>,
    pub properties: BTreeSet<(String, String)>,
}

/// Ordered store of canonical key elements; ids grow monotonically.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyElementStore {
    pub elements: Vec<KeyElement>,
}

impl KeyElementStore {
    pub fn get(&self, id: &str) -> Option<&KeyElement> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut KeyElement> {
        self.elements.iter_mut().find(|e| e.id == id)
    }

    fn next_id(&self) -> String {
        format!("ke-{:06}", self.elements.len() + 1)
    }
}

/// One canonical-map entry: where a raw mention points and how confidently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalEntry {
    pub canonical_id: String,
    pub confidence: f64,
}

/// Mapping from raw mention strings to canonical key elements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalMap {
    pub threshold: f64,
    pub entries: BTreeMap<String, CanonicalEntry>,
}

impl CanonicalMap {
    pub fn new(threshold: f64) -> Self {
        CanonicalMap {
            threshold,
            entries: BTreeMap::new(),
        }
    }

    pub fn resolve(&self, mention: &str) -> Option<&CanonicalEntry> {
        self.entries.get(mention)
    }
}

/// A raw mention with its embedding and source chunk.
#[derive(Debug, Clone)]
pub struct Mention {
    pub text: String,
    pub embedding: Embedding,
    pub chunk_id: String,
}

/// Maps mentions onto canonical key elements.
///
/// Each unseen mention maps to the existing element with the highest
/// name-embedding cosine at or above `threshold` (ties broken by lower id),
/// or becomes a new canonical element. Already-mapped mention strings are
/// left untouched, so re-mapping is idempotent and ids only grow.
pub fn map_key_elements(
    mentions: &[Mention],
    canon: &mut CanonicalMap,
    store: &mut KeyElementStore,
    threshold: f64,
) -> Result<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "confidence threshold must lie in [0, 1], got {threshold}"
        )));
    }
    for mention in mentions {
        if let Some(entry) = canon.entries.get(&mention.text) {
            let id = entry.canonical_id.clone();
            if let Some(element) = store.get_mut(&id) {
                element.source_chunk_ids.insert(mention.chunk_id.clone());
            }
            continue;
        }
        let mut best: Option<(f64, String)> = None;
        for element in &store.elements {
            let cos = mention.embedding.cosine(&element.name_embedding)?;
            if cos >= threshold {
                let better = match &best {
                    Some((b, _)) => cos > *b,
                    None => true,
                };
                if better {
                    best = Some((cos, element.id.clone()));
                }
            }
        }
        match best {
            Some((confidence, id)) => {
                store
                    .get_mut(&id)
                    .expect("best id from store")
                    .source_chunk_ids
                    .insert(mention.chunk_id.clone());
                canon.entries.insert(
                    mention.text.clone(),
                    CanonicalEntry {
                        canonical_id: id,
                        confidence,
                    },
                );
            }
            None => {
                let id = store.next_id();
                store.elements.push(KeyElement {
                    id: id.clone(),
                    name: mention.text.clone(),
                    definition: String::new(),
                    name_embedding: mention.embedding.clone(),
                    def_embedding: None,
                    source_chunk_ids: [mention.chunk_id.clone()].into_iter().collect(),
                    properties: BTreeSet::new(),
                });
                canon.entries.insert(
                    mention.text.clone(),
                    CanonicalEntry {
                        canonical_id: id,
                        confidence: 1.0,
                    },
                );
            }
        }
    }
    Ok(())
}

/// Builds a chunk graph from propositions sharing one chunk id: one node
/// per distinct subject/object, one relationship per proposition with the
/// predicate as its type. Exact-duplicate relationships are dropped.
pub fn build_chunk_graph(propositions: &[Proposition]) -> Result<ChunkGraph> {
    let Some(first) = propositions.first() else {
        return Ok(ChunkGraph {
            chunk_id: String::new(),
            nodes: Vec::new(),
            relationships: Vec::new(),
        });
    };
    let chunk_id = first.chunk_id.clone();
    if propositions.iter().any(|p| p.chunk_id != chunk_id) {
        return Err(Error::InvalidArgument(
            "build_chunk_graph: propositions span multiple chunks".into(),
        ));
    }
    let mut nodes: Vec<GraphNode> = Vec::new();
    let mut seen_nodes = BTreeSet::new();
    let mut relationships = Vec::new();
    let mut seen_rels = BTreeSet::new();
    for p in propositions {
        for slot in [&p.subject, &p.object] {
            if slot.is_empty() {
                return Err(Error::Validation(format!(
                    "chunk {chunk_id}: proposition has an empty slot"
                )));
            }
            if seen_nodes.insert(slot.clone()) {
                nodes.push(GraphNode {
                    name: slot.clone(),
                    part_of_speech: "noun".into(),
                    extra: BTreeMap::new(),
                });
            }
        }
        if p.predicate.is_empty() {
            return Err(Error::Validation(format!(
                "chunk {chunk_id}: proposition has an empty predicate"
            )));
        }
        let key = (p.predicate.clone(), p.subject.clone(), p.object.clone());
        if seen_rels.insert(key) {
            relationships.push(GraphRelationship {
                relationship_type: p.predicate.clone(),
                source_node: p.subject.clone(),
                target_node: p.object.clone(),
            });
        }
    }
    let graph = ChunkGraph {
        chunk_id,
        nodes,
        relationships,
    };
    graph.validate()?;
    Ok(graph)
}

/// Writes canonical-id annotations onto the nodes of a chunk graph.
pub fn annotate_chunk_graph(graph: &mut ChunkGraph, canon: &CanonicalMap) {
    for node in &mut graph.nodes {
        if let Some(entry) = canon.resolve(&node.name) {
            node.extra
                .insert("canonical_id".into(), entry.canonical_id.clone());
        }
    }
}

#[derive(Debug, Deserialize)]
struct FactReply {
    subject: String,
    predicate: String,
    object: String,
    #[serde(default)]
    key_entities: Vec<String>,
}

/// Provider-driven extraction steps over chunks.
pub struct Extractor<'a> {
    pub provider: &'a dyn Provider,
    pub templates: &'a TemplateStore,
}

impl<'a> Extractor<'a> {
    pub fn new(provider: &'a dyn Provider, templates: &'a TemplateStore) -> Self {
        Extractor {
            provider,
            templates,
        }
    }

    fn rewrite(&self, template_id: &str, chunk: &Chunk) -> Result<Chunk> {
        if chunk.text.trim().is_empty() {
            return Ok(chunk.clone());
        }
        let prompt = self.templates.render(template_id, &[("text", &chunk.text)])?;
        let text = self
            .provider
            .complete(&CompletionRequest::new(template_id, prompt))?
            .trim()
            .to_string();
        let mut out = chunk.clone();
        out.token_count = count_tokens(&text);
        out.text = text;
        Ok(out)
    }

    /// Provider pass that removes spelling/grammar/punctuation errors.
    pub fn clean_text(&self, chunk: &Chunk) -> Result<Chunk> {
        self.rewrite("clean_text", chunk)
    }

    /// Provider pass that replaces pronouns with the nouns they refer to.
    pub fn disambiguate(&self, chunk: &Chunk) -> Result<Chunk> {
        self.rewrite("disambiguate", chunk)
    }

    /// Named entities of one chunk, deduplicated in first-seen order.
    pub fn ner(&self, chunk: &Chunk) -> Result<Vec<String>> {
        if chunk.text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let prompt = self.templates.render("ner", &[("text", &chunk.text)])?;
        let raw: Vec<String> =
            complete_json(self.provider, &CompletionRequest::new("ner", prompt))?;
        let mut out = Vec::new();
        for entity in raw {
            let entity = entity.trim().to_string();
            if !entity.is_empty() && !out.contains(&entity) {
                out.push(entity);
            }
        }
        Ok(out)
    }

    /// Atomic subject-predicate-object facts for one (cleaned,
    /// disambiguated) chunk, with key entities restricted to the NER list
    /// and the proposition's own slots.
    pub fn extract_atomic_facts(&self, chunk: &Chunk) -> Result<Vec<Proposition>> {
        if chunk.text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let known = self.ner(chunk)?;
        let prompt = self
            .templates
            .render("atomic_facts", &[("text", &chunk.text)])?;
        let raw: Vec<FactReply> =
            complete_json(self.provider, &CompletionRequest::new("atomic_facts", prompt))?;
        let mut out = Vec::new();
        for fact in raw {
            if fact.subject.is_empty() || fact.predicate.is_empty() || fact.object.is_empty() {
                return Err(Error::Format(format!(
                    "chunk {}: provider returned a proposition with an empty slot",
                    chunk.id
                )));
            }
            let allowed: BTreeSet<&str> = known
                .iter()
                .map(String::as_str)
                .chain([fact.subject.as_str(), fact.object.as_str()])
                .collect();
            let key_entities = fact
                .key_entities
                .into_iter()
                .filter(|e| allowed.contains(e.as_str()))
                .collect();
            out.push(Proposition {
                subject: fact.subject,
                predicate: fact.predicate,
                object: fact.object,
                chunk_id: chunk.id.clone(),
                key_entities,
            });
        }
        Ok(out)
    }

    /// Generates a definition for every canonical element lacking one and
    /// embeds both name and definition. Contexts are the element's source
    /// chunks, in id order.
    pub fn define_and_embed(
        &self,
        store: &mut KeyElementStore,
        chunks_by_id: &BTreeMap<String, &Chunk>,
    ) -> Result<()> {
        for idx in 0..store.elements.len() {
            let (name, contexts) = {
                let element = &store.elements[idx];
                let mut contexts = String::new();
                for chunk_id in &element.source_chunk_ids {
                    if let Some(chunk) = chunks_by_id.get(chunk_id) {
                        contexts.push_str(&chunk.text);
                        contexts.push('\n');
                    }
                }
                (element.name.clone(), contexts)
            };
            let prompt = self.templates.render(
                "define_term",
                &[("term", name.as_str()), ("contexts", contexts.trim())],
            )?;
            let definition = self
                .provider
                .complete(&CompletionRequest::new("define_term", prompt))?
                .trim()
                .to_string();
            if definition.is_empty() {
                return Err(Error::Format(format!(
                    "define_term returned an empty definition for {name}"
                )));
            }
            let embeddings = self.provider.embed(&[name, definition.clone()])?;
            let element = &mut store.elements[idx];
            element.definition = definition;
            element.name_embedding = embeddings[0].clone();
            element.def_embedding = Some(embeddings[1].clone());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::mock::MockProvider;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            id: id.into(),
            doc_id: "d1".into(),
            element_ids: vec![format!("{id}-el")],
            text: text.into(),
            token_count: count_tokens(text),
            seq: 0,
        }
    }

    fn setup() -> (MockProvider, TemplateStore) {
        (MockProvider::new(3, 32), TemplateStore::builtin())
    }

    fn unit(v: Vec<f64>) -> Embedding {
        Embedding::from_raw(v).unwrap()
    }

    #[test]
    fn clean_text_uses_fixture_and_is_idempotent() {
        let (provider, templates) = setup();
        let c = chunk("c1", "The realy trips the breaker.");
        let prompt = templates.render("clean_text", &[("text", &c.text)]).unwrap();
        provider.add_fixture("clean_text", &prompt, "The relay trips the breaker.");
        let fixed_prompt = templates
            .render("clean_text", &[("text", "The relay trips the breaker.")])
            .unwrap();
        provider.add_fixture("clean_text", &fixed_prompt, "The relay trips the breaker.");
        let ex = Extractor::new(&provider, &templates);
        let once = ex.clean_text(&c).unwrap();
        assert_eq!(once.text, "The relay trips the breaker.");
        assert_eq!(once.element_ids, c.element_ids);
        assert_eq!(once.id, c.id);
        let twice = ex.clean_text(&once).unwrap();
        assert_eq!(twice, once);
    }

    #[test]
    fn empty_chunk_passes_through_unchanged() {
        let (provider, templates) = setup();
        let ex = Extractor::new(&provider, &templates);
        let c = chunk("c1", "");
        assert_eq!(ex.clean_text(&c).unwrap(), c);
        assert_eq!(ex.disambiguate(&c).unwrap(), c);
        assert!(ex.ner(&c).unwrap().is_empty());
    }

    #[test]
    fn disambiguate_resolves_fixture_pronoun() {
        let (provider, templates) = setup();
        let c = chunk("c1", "It trips the breaker.");
        let prompt = templates.render("disambiguate", &[("text", &c.text)]).unwrap();
        provider.add_fixture("disambiguate", &prompt, "The relay trips the breaker.");
        let ex = Extractor::new(&provider, &templates);
        assert_eq!(ex.disambiguate(&c).unwrap().text, "The relay trips the breaker.");
    }

    #[test]
    fn disambiguate_leaves_pronoun_free_text_unchanged_under_mock() {
        let (provider, templates) = setup();
        let ex = Extractor::new(&provider, &templates);
        let c = chunk("c1", "The relay trips the breaker.");
        assert_eq!(ex.disambiguate(&c).unwrap().text, c.text);
    }

    #[test]
    fn ner_dedups_provider_output() {
        let (provider, templates) = setup();
        let c = chunk("c1", "relay stuff");
        let prompt = templates.render("ner", &[("text", &c.text)]).unwrap();
        provider.add_fixture("ner", &prompt, "[\"relay\", \"relay\"]");
        let ex = Extractor::new(&provider, &templates);
        assert_eq!(ex.ner(&c).unwrap(), vec!["relay"]);
    }

    #[test]
    fn facts_are_stamped_and_validated() {
        let (provider, templates) = setup();
        let c = chunk("c7", "The relay protects the breaker.");
        let ex = Extractor::new(&provider, &templates);
        let facts = ex.extract_atomic_facts(&c).unwrap();
        assert!(!facts.is_empty());
        for f in &facts {
            assert_eq!(f.chunk_id, "c7");
            assert!(!f.subject.is_empty() && !f.predicate.is_empty() && !f.object.is_empty());
            let ner = ex.ner(&c).unwrap();
            for k in &f.key_entities {
                assert!(ner.contains(k) || *k == f.subject || *k == f.object);
            }
        }
    }

    fn prop(s: &str, p: &str, o: &str) -> Proposition {
        Proposition {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
            chunk_id: "c1".into(),
            key_entities: vec![s.into(), o.into()],
        }
    }

    #[test]
    fn chunk_graph_direct_construction() {
        let g = build_chunk_graph(&[prop("A", "controls", "B")]).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.relationships.len(), 1);
        assert_eq!(g.relationships[0].relationship_type, "controls");
        g.validate().unwrap();
    }

    #[test]
    fn chunk_graph_keeps_directed_pair() {
        let g = build_chunk_graph(&[prop("A", "controls", "B"), prop("B", "controls", "A")]).unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.relationships.len(), 2);
    }

    #[test]
    fn chunk_graph_dedups_exact_duplicates() {
        let g = build_chunk_graph(&[prop("A", "controls", "B"), prop("A", "controls", "B")]).unwrap();
        assert_eq!(g.relationships.len(), 1);
    }

    #[test]
    fn chunk_graph_empty_input() {
        let g = build_chunk_graph(&[]).unwrap();
        assert!(g.nodes.is_empty() && g.relationships.is_empty());
    }

    fn mention(text: &str, e: Embedding) -> Mention {
        Mention {
            text: text.into(),
            embedding: e,
            chunk_id: "c1".into(),
        }
    }

    #[test]
    fn identical_mention_maps_with_confidence_one() {
        let mut canon = CanonicalMap::new(0.9);
        let mut store = KeyElementStore::default();
        let e = unit(vec![1.0, 0.0]);
        map_key_elements(&[mention("relay", e.clone())], &mut canon, &mut store, 0.9).unwrap();
        map_key_elements(
            &[Mention {
                text: "relay".into(),
                embedding: e.clone(),
                chunk_id: "c2".into(),
            }],
            &mut canon,
            &mut store,
            0.9,
        )
        .unwrap();
        assert_eq!(store.elements.len(), 1);
        assert_eq!(canon.entries["relay"].confidence, 1.0);
        assert!(store.elements[0].source_chunk_ids.contains("c2"));

        // a distinct string with an identical embedding maps at cosine 1
        map_key_elements(&[mention("Relay", e)], &mut canon, &mut store, 0.9).unwrap();
        assert_eq!(store.elements.len(), 1);
        assert!((canon.entries["Relay"].confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_mention_becomes_new_canonical() {
        let mut canon = CanonicalMap::new(0.9);
        let mut store = KeyElementStore::default();
        map_key_elements(&[mention("relay", unit(vec![1.0, 0.0]))], &mut canon, &mut store, 0.9)
            .unwrap();
        map_key_elements(&[mention("meter", unit(vec![0.0, 1.0]))], &mut canon, &mut store, 0.9)
            .unwrap();
        assert_eq!(store.elements.len(), 2);
        assert_eq!(canon.entries["meter"].canonical_id, "ke-000002");
    }

    #[test]
    fn equal_cosine_tie_prefers_lower_id() {
        let mut canon = CanonicalMap::new(0.5);
        let mut store = KeyElementStore::default();
        // two canonicals symmetric around the x axis
        map_key_elements(
            &[
                mention("alpha", unit(vec![1.0, 0.2])),
                mention("beta", unit(vec![1.0, -0.2])),
            ],
            &mut canon,
            &mut store,
            0.999,
        )
        .unwrap();
        assert_eq!(store.elements.len(), 2);
        // equidistant mention: cos(alpha) == cos(beta)
        map_key_elements(&[mention("gamma", unit(vec![1.0, 0.0]))], &mut canon, &mut store, 0.5)
            .unwrap();
        assert_eq!(canon.entries["gamma"].canonical_id, "ke-000001");
    }

    #[test]
    fn remapping_is_idempotent_and_ids_grow() {
        let mut canon = CanonicalMap::new(0.9);
        let mut store = KeyElementStore::default();
        let ms = vec![
            mention("relay", unit(vec![1.0, 0.0])),
            mention("meter", unit(vec![0.0, 1.0])),
        ];
        map_key_elements(&ms, &mut canon, &mut store, 0.9).unwrap();
        let snapshot = (canon.clone(), store.elements.len());
        map_key_elements(&ms, &mut canon, &mut store, 0.9).unwrap();
        assert_eq!(canon, snapshot.0);
        assert_eq!(store.elements.len(), snapshot.1);
    }

    #[test]
    fn define_and_embed_uses_fixture_definition() {
        let (provider, templates) = setup();
        let ex = Extractor::new(&provider, &templates);
        let mut canon = CanonicalMap::new(0.9);
        let mut store = KeyElementStore::default();
        let e = provider.embed(&["relay".into()]).unwrap().remove(0);
        map_key_elements(&[mention("relay", e)], &mut canon, &mut store, 0.9).unwrap();
        let c = chunk("c1", "The relay protects the breaker.");
        let prompt = templates
            .render("define_term", &[("term", "relay"), ("contexts", &c.text)])
            .unwrap();
        provider.add_fixture(
            "define_term",
            &prompt,
            "relay: a switch that opens a circuit on overcurrent.",
        );
        let chunks: BTreeMap<String, &Chunk> = [("c1".to_string(), &c)].into_iter().collect();
        ex.define_and_embed(&mut store, &chunks).unwrap();
        assert_eq!(
            store.elements[0].definition,
            "relay: a switch that opens a circuit on overcurrent."
        );
    }

    #[test]
    fn define_and_embed_fills_definitions() {
        let (provider, templates) = setup();
        let ex = Extractor::new(&provider, &templates);
        let mut canon = CanonicalMap::new(0.9);
        let mut store = KeyElementStore::default();
        let e = provider.embed(&["relay".into()]).unwrap().remove(0);
        map_key_elements(&[mention("relay", e)], &mut canon, &mut store, 0.9).unwrap();
        let c = chunk("c1", "The relay protects the breaker.");
        let chunks: BTreeMap<String, &Chunk> = [("c1".to_string(), &c)].into_iter().collect();
        ex.define_and_embed(&mut store, &chunks).unwrap();
        let el = &store.elements[0];
        assert!(!el.definition.is_empty());
        assert!(el.def_embedding.as_ref().unwrap().is_unit_norm(1e-6));
        assert!(el.name_embedding.is_unit_norm(1e-6));

        // determinism: same inputs give the same element
        let mut store2 = KeyElementStore::default();
        let mut canon2 = CanonicalMap::new(0.9);
        let e2 = provider.embed(&["relay".into()]).unwrap().remove(0);
        map_key_elements(&[mention("relay", e2)], &mut canon2, &mut store2, 0.9).unwrap();
        ex.define_and_embed(&mut store2, &chunks).unwrap();
        assert_eq!(store.elements, store2.elements);
    }

    #[test]
    fn annotation_adds_canonical_ids() {
        let mut g = build_chunk_graph(&[prop("relay", "protects", "breaker")]).unwrap();
        let mut canon = CanonicalMap::new(0.9);
        canon.entries.insert(
            "relay".into(),
            CanonicalEntry {
                canonical_id: "ke-000001".into(),
                confidence: 1.0,
            },
        );
        annotate_chunk_graph(&mut g, &canon);
        assert_eq!(g.nodes[0].extra["canonical_id"], "ke-000001");
        assert!(!g.nodes[1].extra.contains_key("canonical_id"));
    }
}
