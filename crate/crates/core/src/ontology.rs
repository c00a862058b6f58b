//! Ontology creation: Leiden partitioning of the knowledge graph into
//! leveled classes, property aggregation and synthesis, relationship
//! projection with symmetric merging, and the IS-A/HAS-A hierarchy from
//! recursive sub-community detection.
//!
//! Level 0 is the root abstraction (coarsest); deeper levels refine it.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use crate::community::{leiden, modularity, modularity_with_resolution, Partition, UGraph};
use crate::error::{Error, Result};
use crate::fsutil::derive_seed;
use crate::kgraph::{ClassEdge, KnowledgeGraph};
use crate::provider::template::TemplateStore;
use crate::provider::{complete_json, CompletionRequest, Provider};
use crate::vecmath::Embedding;

/// One ontology class: a community of candidate classes at some level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyClass {
    pub id: String,
    /// 0 = root abstraction; larger = finer.
    pub level: usize,
    /// Candidate-class ids covered by this community.
    pub member_ids: BTreeSet<String>,
    /// Union of member properties plus intra-community relationship labels.
    pub aggregated_properties: BTreeSet<String>,
    /// Provider-synthesized generalization of the aggregated set.
    pub synthesized_properties: BTreeSet<String>,
    pub name: String,
    pub definition: String,
    pub name_embedding: Option<Embedding>,
    pub def_embedding: Option<Embedding>,
}

/// Class-level relationship; directed unless a symmetric pair was merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyRelationship {
    pub source: String,
    pub target: String,
    pub labels: BTreeSet<String>,
    pub directed: bool,
}

/// IS-A edge from child to parent (the inverse reading is HAS-A).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyEdge {
    pub parent: String,
    pub child: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OntologyLevel {
    pub level: usize,
    pub classes: Vec<OntologyClass>,
    pub relationships: Vec<OntologyRelationship>,
}

/// Modularity bookkeeping for one detection scope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModularityEntry {
    /// "root" or the parent class id that was split.
    pub scope: String,
    pub communities: usize,
    pub q: f64,
}

/// The leveled ontology with hierarchy edges and build provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    pub seed: u64,
    pub depth: usize,
    pub resolutions: Vec<f64>,
    pub levels: Vec<OntologyLevel>,
    pub hierarchy: Vec<HierarchyEdge>,
    pub modularity_report: Vec<ModularityEntry>,
    pub warnings: Vec<String>,
    /// Digest of the pipeline config that produced this file.
    pub config_digest: String,
}

impl Ontology {
    pub fn level(&self, level: usize) -> Option<&OntologyLevel> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn class(&self, id: &str) -> Option<&OntologyClass> {
        self.levels
            .iter()
            .flat_map(|l| l.classes.iter())
            .find(|c| c.id == id)
    }

    /// Structural invariants: per-level partitions, no intra-community
    /// relationships, hierarchy set inclusion, forest shape.
    pub fn validate(&self) -> Result<()> {
        for level in &self.levels {
            let mut seen: BTreeSet<&str> = BTreeSet::new();
            let ids: BTreeSet<&str> = level.classes.iter().map(|c| c.id.as_str()).collect();
            for class in &level.classes {
                if class.member_ids.is_empty() {
                    return Err(Error::Integrity(format!("class {} has no members", class.id)));
                }
                for m in &class.member_ids {
                    if !seen.insert(m) {
                        return Err(Error::Integrity(format!(
                            "level {}: candidate class {m} appears in two communities",
                            level.level
                        )));
                    }
                }
            }
            for rel in &level.relationships {
                if rel.source == rel.target {
                    return Err(Error::Integrity(format!(
                        "level {}: intra-community relationship on {}",
                        level.level, rel.source
                    )));
                }
                if rel.labels.is_empty() {
                    return Err(Error::Integrity(format!(
                        "level {}: relationship {} -> {} has no labels",
                        level.level, rel.source, rel.target
                    )));
                }
                if !ids.contains(rel.source.as_str()) || !ids.contains(rel.target.as_str()) {
                    return Err(Error::Integrity(format!(
                        "level {}: relationship references a class outside the level",
                        level.level
                    )));
                }
            }
        }
        let mut child_seen: BTreeSet<&str> = BTreeSet::new();
        for edge in &self.hierarchy {
            let parent = self.class(&edge.parent).ok_or_else(|| {
                Error::Integrity(format!("hierarchy references missing parent {}", edge.parent))
            })?;
            let child = self.class(&edge.child).ok_or_else(|| {
                Error::Integrity(format!("hierarchy references missing child {}", edge.child))
            })?;
            if !child.member_ids.is_subset(&parent.member_ids) {
                return Err(Error::Integrity(format!(
                    "hierarchy edge {} -> {} violates set inclusion",
                    edge.parent, edge.child
                )));
            }
            if !child_seen.insert(edge.child.as_str()) {
                return Err(Error::Integrity(format!(
                    "class {} has more than one parent",
                    edge.child
                )));
            }
        }
        Ok(())
    }
}

/// Symmetrizes the knowledge graph for community detection: nodes are the
/// candidate classes in id order; an undirected edge exists wherever a
/// directed edge exists either way. Parallel labels collapse and
/// self-loops are dropped.
pub fn symmetrize(kg: &KnowledgeGraph) -> (UGraph, Vec<String>) {
    let mut ids: Vec<String> = kg.classes.iter().map(|c| c.id.clone()).collect();
    ids.sort();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut g = UGraph::new(ids.len());
    for (src, dst, _) in &kg.edges {
        if let (Some(&a), Some(&b)) = (index.get(src.as_str()), index.get(dst.as_str())) {
            g.add_edge(a, b);
        }
    }
    (g, ids)
}

/// Union of member candidate-class properties (rendered `key: value`) plus
/// the labels of relationships internal to the community, self-loops
/// included.
pub fn aggregate_properties(
    members: &BTreeSet<String>,
    kg: &KnowledgeGraph,
) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for id in members {
        let class = kg
            .class(id)
            .ok_or_else(|| Error::Integrity(format!("candidate class {id} not in graph")))?;
        for (k, v) in &class.properties {
            out.insert(format!("{k}: {v}"));
        }
    }
    for (src, dst, label) in &kg.edges {
        if members.contains(src) && members.contains(dst) {
            out.insert(label.clone());
        }
    }
    Ok(out)
}

/// Provider synthesis of generalized class properties.
///
/// Provider or format failures (after the one automatic reprompt) fall
/// back to the raw set; the returned flag reports that fallback so the
/// caller can record a warning.
pub fn synthesize_properties(
    provider: &dyn Provider,
    templates: &TemplateStore,
    raw: &BTreeSet<String>,
) -> Result<(BTreeSet<String>, bool)> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument(
            "synthesize_properties: aggregated set is empty".into(),
        ));
    }
    let listing = raw.iter().cloned().collect::<Vec<_>>().join("\n");
    let prompt = templates.render("synthesize_properties", &[("properties", &listing)])?;
    let request = CompletionRequest::new("synthesize_properties", prompt);
    match complete_json::<Vec<String>>(provider, &request) {
        Ok(list) => {
            let set: BTreeSet<String> = list
                .into_iter()
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if set.is_empty() {
                Ok((raw.clone(), true))
            } else {
                Ok((set, false))
            }
        }
        Err(Error::Provider(_)) | Err(Error::Format(_)) => Ok((raw.clone(), true)),
        Err(e) => Err(e),
    }
}

/// Projects knowledge-graph edges between different communities onto
/// class-level relationships; intra-community edges are excluded (they feed
/// property aggregation instead).
pub fn project_relationships(
    edges: &BTreeSet<ClassEdge>,
    community_of: &BTreeMap<String, String>,
) -> Vec<OntologyRelationship> {
    let mut labels: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for (src, dst, label) in edges {
        let (Some(a), Some(b)) = (community_of.get(src), community_of.get(dst)) else {
            continue;
        };
        if a == b {
            continue;
        }
        labels
            .entry((a.clone(), b.clone()))
            .or_default()
            .insert(label.clone());
    }
    labels
        .into_iter()
        .map(|((source, target), labels)| OntologyRelationship {
            source,
            target,
            labels,
            directed: true,
        })
        .collect()
}

/// Replaces directed label pairs that exist in both directions with a
/// single undirected relationship; unmatched labels stay directed.
pub fn merge_symmetric(relationships: Vec<OntologyRelationship>) -> Vec<OntologyRelationship> {
    let mut directed: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    let mut undirected: BTreeMap<(String, String), BTreeSet<String>> = BTreeMap::new();
    for rel in relationships {
        if rel.directed {
            directed
                .entry((rel.source, rel.target))
                .or_default()
                .extend(rel.labels);
        } else {
            let key = if rel.source <= rel.target {
                (rel.source, rel.target)
            } else {
                (rel.target, rel.source)
            };
            undirected.entry(key).or_default().extend(rel.labels);
        }
    }
    let pairs: Vec<(String, String)> = directed
        .keys()
        .filter(|(a, b)| a < b && directed.contains_key(&(b.clone(), a.clone())))
        .cloned()
        .collect();
    for (a, b) in pairs {
        let forward = directed.get(&(a.clone(), b.clone())).cloned().unwrap_or_default();
        let backward = directed.get(&(b.clone(), a.clone())).cloned().unwrap_or_default();
        let shared: BTreeSet<String> = forward.intersection(&backward).cloned().collect();
        if shared.is_empty() {
            continue;
        }
        if let Some(f) = directed.get_mut(&(a.clone(), b.clone())) {
            f.retain(|l| !shared.contains(l));
        }
        if let Some(r) = directed.get_mut(&(b.clone(), a.clone())) {
            r.retain(|l| !shared.contains(l));
        }
        undirected.entry((a, b)).or_default().extend(shared);
    }
    let mut out: Vec<OntologyRelationship> = Vec::new();
    for ((source, target), labels) in undirected {
        if !labels.is_empty() {
            out.push(OntologyRelationship {
                source,
                target,
                labels,
                directed: false,
            });
        }
    }
    for ((source, target), labels) in directed {
        if !labels.is_empty() {
            out.push(OntologyRelationship {
                source,
                target,
                labels,
                directed: true,
            });
        }
    }
    out.sort_by(|x, y| {
        (&x.source, &x.target, x.directed).cmp(&(&y.source, &y.target, y.directed))
    });
    out
}

/// Structural knobs for hierarchy construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyParams {
    pub max_depth: usize,
    /// Per-level Leiden resolutions; the last entry repeats for deeper levels.
    pub resolutions: Vec<f64>,
    pub seed: u64,
}

impl Default for HierarchyParams {
    fn default() -> Self {
        HierarchyParams {
            max_depth: 3,
            resolutions: vec![1.0],
            seed: 42,
        }
    }
}

impl HierarchyParams {
    fn resolution(&self, level: usize) -> f64 {
        self.resolutions
            .get(level)
            .or_else(|| self.resolutions.last())
            .copied()
            .unwrap_or(1.0)
    }
}

/// Builds the leveled ontology structure from the knowledge graph:
/// Leiden at level 0, then recursive sub-community detection per
/// community, with IS-A edges and per-level relationships. Recursion stops
/// for communities of size <= 2 or splits that yield one community.
/// Properties are aggregated here; synthesis and naming are separate,
/// provider-driven passes.
pub fn build_hierarchy(kg: &KnowledgeGraph, params: &HierarchyParams) -> Result<Ontology> {
    if params.max_depth < 1 {
        return Err(Error::InvalidArgument("max_depth must be >= 1".into()));
    }
    kg.validate()?;
    let (graph, node_ids) = symmetrize(kg);
    let mut ontology = Ontology {
        seed: params.seed,
        depth: params.max_depth,
        resolutions: params.resolutions.clone(),
        levels: Vec::new(),
        hierarchy: Vec::new(),
        modularity_report: Vec::new(),
        warnings: Vec::new(),
        config_digest: String::new(),
    };
    if node_ids.is_empty() {
        return Ok(ontology);
    }

    // (class id, node indices) pending a deeper split
    let mut frontier: Vec<(String, Vec<usize>)> = Vec::new();

    let partition = leiden(&graph, params.resolution(0), params.seed);
    if graph.edge_count() > 0 {
        ontology.modularity_report.push(ModularityEntry {
            scope: "root".into(),
            communities: partition.count(),
            q: modularity(&graph, &partition)?,
        });
    }
    let mut level0 = OntologyLevel {
        level: 0,
        classes: Vec::new(),
        relationships: Vec::new(),
    };
    let mut community_of: BTreeMap<String, String> = BTreeMap::new();
    for (idx, nodes) in partition.communities().into_iter().enumerate() {
        let id = format!("o0-{:04}", idx + 1);
        let member_ids: BTreeSet<String> =
            nodes.iter().map(|&v| node_ids[v].clone()).collect();
        for m in &member_ids {
            community_of.insert(m.clone(), id.clone());
        }
        let aggregated = aggregate_properties(&member_ids, kg)?;
        level0.classes.push(OntologyClass {
            id: id.clone(),
            level: 0,
            member_ids,
            aggregated_properties: aggregated,
            synthesized_properties: BTreeSet::new(),
            name: String::new(),
            definition: String::new(),
            name_embedding: None,
            def_embedding: None,
        });
        frontier.push((id, nodes));
    }
    level0.relationships = merge_symmetric(project_relationships(&kg.edges, &community_of));
    ontology.levels.push(level0);

    for level in 1..params.max_depth {
        let mut next_frontier: Vec<(String, Vec<usize>)> = Vec::new();
        let mut classes: Vec<OntologyClass> = Vec::new();
        let mut community_of: BTreeMap<String, String> = BTreeMap::new();
        let mut counter = 0usize;
        for (parent_id, nodes) in &frontier {
            if nodes.len() <= 2 {
                continue;
            }
            let (sub, original) = graph.induced(nodes);
            let sub_seed = derive_seed(params.seed, &format!("{level}:{parent_id}"));
            let sub_partition = leiden(&sub, params.resolution(level), sub_seed);
            if sub_partition.count() <= 1 {
                continue;
            }
            if sub.edge_count() > 0 {
                ontology.modularity_report.push(ModularityEntry {
                    scope: parent_id.clone(),
                    communities: sub_partition.count(),
                    q: modularity(&sub, &sub_partition)?,
                });
            }
            for sub_nodes in sub_partition.communities() {
                counter += 1;
                let id = format!("o{level}-{counter:04}");
                let nodes: Vec<usize> = sub_nodes.iter().map(|&v| original[v]).collect();
                let member_ids: BTreeSet<String> =
                    nodes.iter().map(|&v| node_ids[v].clone()).collect();
                for m in &member_ids {
                    community_of.insert(m.clone(), id.clone());
                }
                let aggregated = aggregate_properties(&member_ids, kg)?;
                classes.push(OntologyClass {
                    id: id.clone(),
                    level,
                    member_ids,
                    aggregated_properties: aggregated,
                    synthesized_properties: BTreeSet::new(),
                    name: String::new(),
                    definition: String::new(),
                    name_embedding: None,
                    def_embedding: None,
                });
                ontology.hierarchy.push(HierarchyEdge {
                    parent: parent_id.clone(),
                    child: id.clone(),
                });
                next_frontier.push((id, nodes));
            }
        }
        if classes.is_empty() {
            break;
        }
        let relationships = merge_symmetric(project_relationships(&kg.edges, &community_of));
        ontology.levels.push(OntologyLevel {
            level,
            classes,
            relationships,
        });
        frontier = next_frontier;
    }

    ontology.validate()?;
    Ok(ontology)
}

/// Fills `synthesized_properties` for every class via the provider,
/// recording a warning per fallback.
pub fn synthesize_ontology(
    ontology: &mut Ontology,
    provider: &dyn Provider,
    templates: &TemplateStore,
) -> Result<()> {
    let mut warnings = Vec::new();
    for level in &mut ontology.levels {
        for class in &mut level.classes {
            let (synth, fell_back) =
                synthesize_properties(provider, templates, &class.aggregated_properties)?;
            if fell_back {
                warnings.push(format!(
                    "class {}: property synthesis failed; synthesized set equals the raw aggregate",
                    class.id
                ));
            }
            class.synthesized_properties = synth;
        }
    }
    ontology.warnings.extend(warnings);
    Ok(())
}

#[derive(Debug, Deserialize)]
struct NameReply {
    name: String,
    definition: String,
}

/// Generates a display name and definition per class and embeds both.
/// Classes must already carry synthesized properties.
pub fn name_and_embed_classes(
    ontology: &mut Ontology,
    kg: &KnowledgeGraph,
    provider: &dyn Provider,
    templates: &TemplateStore,
) -> Result<()> {
    for level in &mut ontology.levels {
        for class in &mut level.classes {
            if class.synthesized_properties.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "class {}: synthesized properties missing; run synthesis first",
                    class.id
                )));
            }
            let mut member_names: Vec<String> = Vec::new();
            for member in &class.member_ids {
                if let Some(c) = kg.class(member) {
                    for (k, v) in &c.properties {
                        if k == "name" && !member_names.contains(v) {
                            member_names.push(v.clone());
                        }
                    }
                }
            }
            member_names.sort();
            member_names.truncate(5);
            let members = member_names.join(", ");
            let properties = class
                .synthesized_properties
                .iter()
                .cloned()
                .collect::<Vec<_>>()
                .join("\n");
            let prompt = templates.render(
                "name_class",
                &[("members", members.as_str()), ("properties", properties.as_str())],
            )?;
            let reply: NameReply =
                complete_json(provider, &CompletionRequest::new("name_class", prompt))?;
            if reply.name.trim().is_empty() || reply.definition.trim().is_empty() {
                return Err(Error::Format(format!(
                    "name_class returned an empty name or definition for {}",
                    class.id
                )));
            }
            class.name = reply.name.trim().to_string();
            class.definition = reply.definition.trim().to_string();
            let embeddings = provider.embed(&[class.name.clone(), class.definition.clone()])?;
            class.name_embedding = Some(embeddings[0].clone());
            class.def_embedding = Some(embeddings[1].clone());
        }
    }
    Ok(())
}
