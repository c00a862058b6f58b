//! Knowledge-graph construction: clustering key elements into candidate
//! classes with a disjoint-set structure, taking property unions, and
//! projecting chunk-graph relationships onto class edges.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{CanonicalMap, ChunkGraph, KeyElement, KeyElementStore};
use crate::vecmath::{renormalized_mean, Embedding};

/// Cosine thresholds for the name/definition similarity test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub theta_name: f64,
    pub theta_def: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            theta_name: 0.85,
            theta_def: 0.80,
        }
    }
}

/// A cluster of key elements: one node of the knowledge graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateClass {
    pub id: String,
    pub member_ids: BTreeSet<String>,
    pub properties: BTreeSet<(String, String)>,
    pub name_centroid: Embedding,
    pub def_centroid: Embedding,
}

/// Directed edge between candidate classes, labeled with a relationship type.
pub type ClassEdge = (String, String, String);

/// The knowledge graph: candidate classes plus labeled directed edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeGraph {
    pub classes: Vec<CandidateClass>,
    pub edges: BTreeSet<ClassEdge>,
}

impl KnowledgeGraph {
    pub fn class(&self, id: &str) -> Option<&CandidateClass> {
        self.classes.iter().find(|c| c.id == id)
    }

    /// Classes must partition their members and edges must reference
    /// existing classes.
    pub fn validate(&self) -> Result<()> {
        let mut seen_members = BTreeSet::new();
        let mut ids = BTreeSet::new();
        for class in &self.classes {
            if !ids.insert(class.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate class id {}", class.id)));
            }
            if class.member_ids.is_empty() {
                return Err(Error::Integrity(format!("class {} has no members", class.id)));
            }
            for m in &class.member_ids {
                if !seen_members.insert(m.clone()) {
                    return Err(Error::Integrity(format!(
                        "key element {m} belongs to more than one class"
                    )));
                }
            }
        }
        for (src, dst, label) in &self.edges {
            if !ids.contains(src.as_str()) || !ids.contains(dst.as_str()) {
                return Err(Error::Integrity(format!(
                    "edge ({src}, {dst}, {label}) references a missing class"
                )));
            }
        }
        Ok(())
    }
}

/// The pairwise similarity test: 1 iff both the name and the definition
/// cosines clear their thresholds.
pub fn sim(a: &KeyElement, b: &KeyElement, t: &Thresholds) -> Result<bool> {
    let name_cos = a.name_embedding.cosine(&b.name_embedding)?;
    if name_cos < t.theta_name {
        return Ok(false);
    }
    let (da, db) = match (&a.def_embedding, &b.def_embedding) {
        (Some(da), Some(db)) => (da, db),
        _ => {
            return Err(Error::Integrity(format!(
                "sim: key element {} or {} is missing a definition embedding",
                a.id, b.id
            )))
        }
    };
    Ok(da.cosine(db)? >= t.theta_def)
}

/// Disjoint-set structure with path compression and union by size.
struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            let root = self.find(self.parent[x]);
            self.parent[x] = root;
        }
        self.parent[x]
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        // attach smaller under larger; ties keep the lower root
        let (hi, lo) = if self.size[ra] > self.size[rb] || (self.size[ra] == self.size[rb] && ra < rb)
        {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[lo] = hi;
        self.size[hi] += self.size[lo];
    }
}

fn next_class_id(existing: &[CandidateClass]) -> String {
    format!("cc-{:04}", existing.len() + 1)
}

fn centroids_of(
    member_ids: &BTreeSet<String>,
    store: &KeyElementStore,
) -> Result<(Embedding, Embedding)> {
    let mut names = Vec::new();
    let mut defs = Vec::new();
    for id in member_ids {
        let el = store
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("key element {id} missing from store")))?;
        names.push(el.name_embedding.0.as_slice());
        defs.push(
            el.def_embedding
                .as_ref()
                .ok_or_else(|| {
                    Error::Integrity(format!("key element {id} has no definition embedding"))
                })?
                .0
                .as_slice(),
        );
    }
    Ok((
        Embedding(renormalized_mean(&names)?),
        Embedding(renormalized_mean(&defs)?),
    ))
}

/// Clusters one batch of key elements and merges the result into the
/// existing classes.
///
/// Phase 1 runs union-find over all in-batch pairs passing the similarity
/// test. Phase 2 merges each batch cluster into the existing class whose
/// centroids pass the same test against the cluster's centroids (highest
/// name cosine wins), or opens a new class. Centroids and property unions
/// are recomputed from the store after every merge.
pub fn cluster_batch(
    batch: &[KeyElement],
    existing: Vec<CandidateClass>,
    t: &Thresholds,
    store: &KeyElementStore,
) -> Result<Vec<CandidateClass>> {
    for el in batch {
        if existing.iter().any(|c| c.member_ids.contains(&el.id)) {
            return Err(Error::InvalidArgument(format!(
                "cluster_batch: key element {} is already clustered",
                el.id
            )));
        }
    }

    // phase 1: in-batch union-find over the pairwise sim graph
    let mut uf = UnionFind::new(batch.len());
    for i in 0..batch.len() {
        for j in (i + 1)..batch.len() {
            if sim(&batch[i], &batch[j], t)? {
                uf.union(i, j);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..batch.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    // deterministic order: by the smallest member index of each group
    let mut ordered: Vec<Vec<usize>> = groups.into_values().collect();
    ordered.sort_by_key(|g| g[0]);

    // phase 2: merge each batch cluster into a pre-existing class or open
    // one; classes opened by this batch are not merge candidates
    let mut classes = existing;
    let existing_len = classes.len();
    for group in ordered {
        let member_ids: BTreeSet<String> =
            group.iter().map(|&i| batch[i].id.clone()).collect();
        let (name_centroid, def_centroid) = centroids_of(&member_ids, store)?;
        let mut best: Option<(f64, usize)> = None;
        for (idx, class) in classes.iter().take(existing_len).enumerate() {
            let name_cos = name_centroid.cosine(&class.name_centroid)?;
            if name_cos < t.theta_name {
                continue;
            }
            if def_centroid.cosine(&class.def_centroid)? < t.theta_def {
                continue;
            }
            let better = match &best {
                Some((b, _)) => name_cos > *b,
                None => true,
            };
            if better {
                best = Some((name_cos, idx));
            }
        }
        match best {
            Some((_, idx)) => {
                let class = &mut classes[idx];
                class.member_ids.extend(member_ids);
                let (nc, dc) = centroids_of(&class.member_ids, store)?;
                class.name_centroid = nc;
                class.def_centroid = dc;
                class.properties = union_properties_of(&class.member_ids, store)?;
            }
            None => {
                let id = next_class_id(&classes);
                let properties = union_properties_of(&member_ids, store)?;
                classes.push(CandidateClass {
                    id,
                    member_ids,
                    properties,
                    name_centroid,
                    def_centroid,
                });
            }
        }
    }
    Ok(classes)
}

fn union_properties_of(
    member_ids: &BTreeSet<String>,
    store: &KeyElementStore,
) -> Result<BTreeSet<(String, String)>> {
    let mut out = BTreeSet::new();
    for id in member_ids {
        let el = store
            .get(id)
            .ok_or_else(|| Error::Integrity(format!("key element {id} missing from store")))?;
        out.insert(("name".to_string(), el.name.clone()));
        if !el.definition.is_empty() {
            out.insert(("definition".to_string(), el.definition.clone()));
        }
        out.extend(el.properties.iter().cloned());
    }
    Ok(out)
}

/// Exact set union of member properties, with each member's name and
/// definition included as properties.
pub fn union_properties(
    class: &CandidateClass,
    store: &KeyElementStore,
) -> Result<BTreeSet<(String, String)>> {
    union_properties_of(&class.member_ids, store)
}

/// Projects chunk-graph relationships onto class edges via the canonical
/// map. Exact duplicates collapse; self-loops are kept as intra-community
/// evidence.
pub fn project_edges(
    graphs: &[ChunkGraph],
    canon: &CanonicalMap,
    classes: &[CandidateClass],
) -> Result<BTreeSet<ClassEdge>> {
    let mut class_of: BTreeMap<&str, &str> = BTreeMap::new();
    for class in classes {
        for member in &class.member_ids {
            if class_of.insert(member.as_str(), class.id.as_str()).is_some() {
                return Err(Error::Integrity(format!(
                    "key element {member} belongs to more than one class"
                )));
            }
        }
    }
    let resolve = |mention: &str, graph: &ChunkGraph, rel: &crate::extract::GraphRelationship| {
        let entry = canon.resolve(mention).ok_or_else(|| {
            Error::Integrity(format!(
                "chunk {}: relationship ({}, {}, {}) references unmapped mention `{mention}`",
                graph.chunk_id, rel.relationship_type, rel.source_node, rel.target_node
            ))
        })?;
        class_of
            .get(entry.canonical_id.as_str())
            .copied()
            .ok_or_else(|| {
                Error::Integrity(format!(
                    "canonical element {} (mention `{mention}`) belongs to no class",
                    entry.canonical_id
                ))
            })
    };
    let mut edges = BTreeSet::new();
    for graph in graphs {
        for rel in &graph.relationships {
            let src = resolve(&rel.source_node, graph, rel)?;
            let dst = resolve(&rel.target_node, graph, rel)?;
            edges.insert((
                src.to_string(),
                dst.to_string(),
                rel.relationship_type.clone(),
            ));
        }
    }
    Ok(edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{build_chunk_graph, CanonicalEntry, Proposition};

    fn unit(v: Vec<f64>) -> Embedding {
        Embedding::from_raw(v).unwrap()
    }

    fn element(id: &str, name_v: Vec<f64>, def_v: Vec<f64>) -> KeyElement {
        KeyElement {
            id: id.into(),
            name: format!("name-{id}"),
            definition: format!("definition of {id}"),
            name_embedding: unit(name_v),
            def_embedding: Some(unit(def_v)),
            source_chunk_ids: BTreeSet::new(),
            properties: BTreeSet::new(),
        }
    }

    fn store_of(elements: Vec<KeyElement>) -> KeyElementStore {
        KeyElementStore { elements }
    }

    #[test]
    fn sim_is_the_threshold_conjunction() {
        let t = Thresholds {
            theta_name: 0.90,
            theta_def: 0.85,
        };
        // name cosine 0.95, def cosine ~0.90
        let a = element("ke-1", vec![1.0, 0.0], vec![1.0, 0.0]);
        let close = element(
            "ke-2",
            vec![0.95, (1.0 - 0.95f64 * 0.95).sqrt()],
            vec![0.90, (1.0 - 0.90f64 * 0.90).sqrt()],
        );
        assert!(sim(&a, &close, &t).unwrap());
        // def cosine 0.5 fails the conjunction
        let far_def = element("ke-3", vec![1.0, 0.0], vec![0.5, (0.75f64).sqrt()]);
        assert!(!sim(&a, &far_def, &t).unwrap());
        // self-similarity
        assert!(sim(&a, &a, &t).unwrap());
    }

    #[test]
    fn union_find_transitivity_clusters_a_chain() {
        // 1~2 and 2~3 but 1!~3 (name cosines decay along a chain)
        let t = Thresholds {
            theta_name: 0.9,
            theta_def: -1.0,
        };
        let step = 0.3f64;
        let es: Vec<KeyElement> = (0..3)
            .map(|i| {
                let a = i as f64 * step;
                element(&format!("ke-{i}"), vec![a.cos(), a.sin()], vec![1.0, 0.0])
            })
            .collect();
        assert!(sim(&es[0], &es[1], &t).unwrap());
        assert!(sim(&es[1], &es[2], &t).unwrap());
        assert!(!sim(&es[0], &es[2], &t).unwrap());
        let store = store_of(es.clone());
        let classes = cluster_batch(&es, Vec::new(), &t, &store).unwrap();
        assert_eq!(classes.len(), 1);
        assert_eq!(classes[0].member_ids.len(), 3);
    }

    #[test]
    fn dissimilar_batch_gives_singletons() {
        let t = Thresholds::default();
        let es = vec![
            element("ke-1", vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]),
            element("ke-2", vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]),
            element("ke-3", vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]),
        ];
        let store = store_of(es.clone());
        let classes = cluster_batch(&es, Vec::new(), &t, &store).unwrap();
        assert_eq!(classes.len(), 3);
        assert!(classes.iter().all(|c| c.member_ids.len() == 1));
        KnowledgeGraph {
            classes,
            edges: BTreeSet::new(),
        }
        .validate()
        .unwrap();
    }

    #[test]
    fn already_clustered_member_is_rejected() {
        let t = Thresholds::default();
        let es = vec![element("ke-1", vec![1.0, 0.0], vec![1.0, 0.0])];
        let store = store_of(es.clone());
        let classes = cluster_batch(&es, Vec::new(), &t, &store).unwrap();
        assert!(cluster_batch(&es, classes, &t, &store).is_err());
    }

    #[test]
    fn cross_batch_merge_picks_highest_name_cosine() {
        let t = Thresholds {
            theta_name: 0.8,
            theta_def: 0.8,
        };
        let first = vec![
            element("ke-1", vec![1.0, 0.0, 0.0], vec![1.0, 0.0]),
            element("ke-2", vec![0.0, 0.0, 1.0], vec![1.0, 0.0]),
        ];
        let second = vec![element(
            "ke-3",
            vec![0.99, 0.0, (1.0 - 0.99f64 * 0.99).sqrt()],
            vec![1.0, 0.0],
        )];
        let mut all = first.clone();
        all.extend(second.clone());
        let store = store_of(all);
        let classes = cluster_batch(&first, Vec::new(), &t, &store).unwrap();
        assert_eq!(classes.len(), 2);
        let classes = cluster_batch(&second, classes, &t, &store).unwrap();
        assert_eq!(classes.len(), 2);
        // ke-3 is closest to ke-1's class
        let c1 = classes.iter().find(|c| c.member_ids.contains("ke-1")).unwrap();
        assert!(c1.member_ids.contains("ke-3"));
    }

    #[test]
    fn properties_union_includes_names_and_definitions() {
        let mut a = element("ke-1", vec![1.0, 0.0], vec![1.0, 0.0]);
        a.properties.insert(("p".into(), "1".into()));
        let mut b = element("ke-2", vec![1.0, 0.0], vec![1.0, 0.0]);
        b.properties.insert(("p".into(), "2".into()));
        b.properties.insert(("p".into(), "1".into()));
        let store = store_of(vec![a, b]);
        let class = CandidateClass {
            id: "cc-0001".into(),
            member_ids: ["ke-1".to_string(), "ke-2".to_string()].into_iter().collect(),
            properties: BTreeSet::new(),
            name_centroid: unit(vec![1.0, 0.0]),
            def_centroid: unit(vec![1.0, 0.0]),
        };
        let props = union_properties(&class, &store).unwrap();
        assert!(props.contains(&("p".to_string(), "1".to_string())));
        assert!(props.contains(&("p".to_string(), "2".to_string())));
        assert!(props.contains(&("name".to_string(), "name-ke-1".to_string())));
        assert!(props.contains(&("definition".to_string(), "definition of ke-2".to_string())));
        // duplicate property appears once
        assert_eq!(props.iter().filter(|(k, v)| k == "p" && v == "1").count(), 1);
    }

    #[test]
    fn missing_member_is_an_integrity_error() {
        let store = store_of(vec![]);
        let class = CandidateClass {
            id: "cc-0001".into(),
            member_ids: ["ke-9".to_string()].into_iter().collect(),
            properties: BTreeSet::new(),
            name_centroid: unit(vec![1.0]),
            def_centroid: unit(vec![1.0]),
        };
        assert!(matches!(
            union_properties(&class, &store),
            Err(Error::Integrity(_))
        ));
    }

    fn canon_with(entries: &[(&str, &str)]) -> CanonicalMap {
        let mut canon = CanonicalMap::new(0.9);
        for (mention, id) in entries {
            canon.entries.insert(
                mention.to_string(),
                CanonicalEntry {
                    canonical_id: id.to_string(),
                    confidence: 1.0,
                },
            );
        }
        canon
    }

    fn class_with(id: &str, members: &[&str]) -> CandidateClass {
        CandidateClass {
            id: id.into(),
            member_ids: members.iter().map(|m| m.to_string()).collect(),
            properties: BTreeSet::new(),
            name_centroid: unit(vec![1.0]),
            def_centroid: unit(vec![1.0]),
        }
    }

    fn prop(chunk: &str, s: &str, p: &str, o: &str) -> Proposition {
        Proposition {
            subject: s.into(),
            predicate: p.into(),
            object: o.into(),
            chunk_id: chunk.into(),
            key_entities: vec![],
        }
    }

    #[test]
    fn projection_maps_mentions_to_class_edges() {
        let g = build_chunk_graph(&[prop("c1", "a", "controls", "b")]).unwrap();
        let canon = canon_with(&[("a", "ke-1"), ("b", "ke-2")]);
        let classes = vec![class_with("cc-1", &["ke-1"]), class_with("cc-2", &["ke-2"])];
        let edges = project_edges(&[g], &canon, &classes).unwrap();
        assert_eq!(edges.len(), 1);
        assert!(edges.contains(&("cc-1".to_string(), "cc-2".to_string(), "controls".to_string())));
    }

    #[test]
    fn projection_keeps_self_loops() {
        let g = build_chunk_graph(&[prop("c1", "a", "controls", "b")]).unwrap();
        let canon = canon_with(&[("a", "ke-1"), ("b", "ke-2")]);
        let classes = vec![class_with("cc-1", &["ke-1", "ke-2"])];
        let edges = project_edges(&[g], &canon, &classes).unwrap();
        assert!(edges.contains(&("cc-1".to_string(), "cc-1".to_string(), "controls".to_string())));
    }

    #[test]
    fn projection_dedups_across_chunks() {
        let g1 = build_chunk_graph(&[prop("c1", "a", "controls", "b")]).unwrap();
        let g2 = build_chunk_graph(&[prop("c2", "a", "controls", "b")]).unwrap();
        let canon = canon_with(&[("a", "ke-1"), ("b", "ke-2")]);
        let classes = vec![class_with("cc-1", &["ke-1"]), class_with("cc-2", &["ke-2"])];
        let edges = project_edges(&[g1, g2], &canon, &classes).unwrap();
        assert_eq!(edges.len(), 1);
    }

    #[test]
    fn unmapped_mention_is_reported_with_its_relationship() {
        let g = build_chunk_graph(&[prop("c1", "a", "controls", "mystery")]).unwrap();
        let canon = canon_with(&[("a", "ke-1")]);
        let classes = vec![class_with("cc-1", &["ke-1"])];
        let err = project_edges(&[g], &canon, &classes).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mystery") && msg.contains("controls"), "{msg}");
    }
}
