//! Resumable pipeline orchestration.
//!
//! Stages run in a fixed order over a single workdir, each reading and
//! writing the persisted artifacts. A manifest records input/output/config
//! digests per stage; a stage whose digests all match is skipped. Outputs
//! are written via temp files and atomic renames, and a lock file enforces
//! one run per workdir.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::info;

use crate::chunk::{
    combine_neighbors, fixed_chunk, hybrid_chunk, semantic_merge, Chunk, ChunkingConfig,
};
use crate::elements::{
    extract_table_region, load_elements, to_canonical_jsonl, DocumentElement, ElementKind,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    build_report, extract_claims, generate_questions, judge_pairwise, ClaimSet, EvalReport,
    JudgeVerdict, Metric, Question,
};
use crate::extract::{
    annotate_chunk_graph, build_chunk_graph, map_key_elements, CanonicalMap, ChunkGraph,
    Extractor, KeyElementStore, Mention,
};
use crate::fsutil::{sha256_file, sha256_hex, write_atomic};
use crate::geometry::{default_page_bounds, BBox};
use crate::kgraph::{cluster_batch, project_edges, KnowledgeGraph, Thresholds};
use crate::ontology::{
    build_hierarchy, name_and_embed_classes, synthesize_ontology, HierarchyParams, Ontology,
};
use crate::provider::template::TemplateStore;
use crate::provider::{build_provider, Provider, ProviderConfig};
use crate::retrieve::{
    answer, extract_query_keys, gather_chunks, match_classes, vector_search, AnswerRecord,
    ChunkStore, ProvenanceIndex, RetrievalConfig, VectorIndex,
};

/// Filesystem locations of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathsConfig {
    pub workdir: PathBuf,
    /// Element JSONL file, or a directory of them.
    pub corpus: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Target unit scale for table crop requests.
    pub crop_target_units: f64,
    /// Page bounds in target units; the common portrait page when absent.
    pub page_bounds: Option<BBox<f64>>,
    /// Per-document page-bounds overrides, keyed by doc_id.
    pub page_bounds_by_doc: BTreeMap<String, BBox<f64>>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            crop_target_units: 72.0,
            page_bounds: None,
            page_bounds_by_doc: BTreeMap::new(),
        }
    }
}

impl IngestConfig {
    fn bounds_for(&self, doc_id: &str) -> BBox<f64> {
        self.page_bounds_by_doc
            .get(doc_id)
            .copied()
            .or(self.page_bounds)
            .unwrap_or_else(default_page_bounds)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub size_tokens: usize,
    pub overlap_tokens: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            size_tokens: 600,
            overlap_tokens: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub confidence_threshold: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            confidence_threshold: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgraphConfig {
    pub theta_name: f64,
    pub theta_def: f64,
    pub batch_size: usize,
}

impl Default for KgraphConfig {
    fn default() -> Self {
        KgraphConfig {
            theta_name: 0.85,
            theta_def: 0.80,
            batch_size: 256,
        }
    }
}

impl KgraphConfig {
    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            theta_name: self.theta_name,
            theta_def: self.theta_def,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OntologyConfig {
    pub depth: usize,
    pub resolutions: Vec<f64>,
}

impl Default for OntologyConfig {
    fn default() -> Self {
        OntologyConfig {
            depth: 3,
            resolutions: vec![1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub dataset_description: String,
    pub personas: usize,
    pub tasks: usize,
    pub questions: usize,
    pub replicates: usize,
    pub conditions: Vec<String>,
    pub claim_threshold: f64,
    /// Metric names, or the single entry "all".
    pub metrics: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            dataset_description: String::new(),
            personas: 5,
            tasks: 5,
            questions: 5,
            replicates: 5,
            conditions: vec!["O0".into(), "SS".into()],
            claim_threshold: 0.5,
            metrics: vec!["all".into()],
        }
    }
}

impl EvalConfig {
    pub fn resolved_metrics(&self) -> Result<Vec<Metric>> {
        if self.metrics.iter().any(|m| m == "all") {
            return Ok(Metric::ALL.to_vec());
        }
        self.metrics.iter().map(|m| Metric::parse(m)).collect()
    }
}

/// The single pipeline configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub chunking: ChunkingConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub kgraph: KgraphConfig,
    #[serde(default)]
    pub ontology: OntologyConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Replaces `${VAR}` with the environment variable's value; unset
/// variables are configuration errors.
fn interpolate_env(raw: &str) -> Result<String> {
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(pos) = rest.find("${") {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| Error::Config("unterminated ${...} in configuration".to_string()))?;
        let name = &after[..end];
        let value = std::env::var(name)
            .map_err(|_| Error::Config(format!("environment variable {name} is not set")))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

impl PipelineConfig {
    /// Loads and validates a TOML config; relative paths resolve against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {path:?}: {e}")))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&raw, base)
    }

    pub fn from_toml_str(raw: &str, base_dir: &Path) -> Result<Self> {
        let interpolated = interpolate_env(raw)?;
        let mut config: PipelineConfig = toml::from_str(&interpolated)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        let resolve = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                p.clone()
            } else {
                base_dir.join(p)
            }
        };
        config.paths.workdir = resolve(&config.paths.workdir);
        config.paths.corpus = resolve(&config.paths.corpus);
        config.provider.template_dir = config.provider.template_dir.as_ref().map(resolve);
        config.provider.mock_fixtures = config.provider.mock_fixtures.as_ref().map(resolve);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.paths.corpus.exists() {
            return Err(Error::Config(format!(
                "paths.corpus: {:?} does not exist",
                self.paths.corpus
            )));
        }
        self.provider.validate()?;
        self.chunking.validate()?;
        self.retrieval.validate()?;
        if self.ingest.crop_target_units <= 0.0 {
            return Err(Error::Config("ingest.crop_target_units must be positive".into()));
        }
        if self.baseline.overlap_tokens >= self.baseline.size_tokens {
            return Err(Error::Config(
                "baseline.overlap_tokens must be < baseline.size_tokens".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.extract.confidence_threshold) {
            return Err(Error::Config(
                "extract.confidence_threshold must lie in [0, 1]".into(),
            ));
        }
        if self.kgraph.batch_size == 0 {
            return Err(Error::Config("kgraph.batch_size must be >= 1".into()));
        }
        if self.ontology.depth == 0 {
            return Err(Error::Config("ontology.depth must be >= 1".into()));
        }
        if self.ontology.resolutions.is_empty() {
            return Err(Error::Config("ontology.resolutions must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.claim_threshold) {
            return Err(Error::Config("eval.claim_threshold must lie in [0, 1]".into()));
        }
        self.eval.resolved_metrics()?;
        for condition in &self.eval.conditions {
            parse_condition(condition)?;
        }
        Ok(())
    }

    /// Digest of the semantic configuration (paths excluded), embedded in
    /// artifacts for provenance.
    pub fn digest(&self) -> String {
        let semantic = json!({
            "seed": self.seed,
            "provider": provider_signature(&self.provider),
            "ingest": &self.ingest,
            "chunking": &self.chunking,
            "baseline": &self.baseline,
            "extract": &self.extract,
            "kgraph": &self.kgraph,
            "ontology": &self.ontology,
            "retrieval": &self.retrieval,
            "eval": &self.eval,
        });
        sha256_hex(semantic.to_string().as_bytes())
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.paths.workdir.join(name)
    }
}

fn provider_signature(p: &ProviderConfig) -> serde_json::Value {
    json!({
        "kind": p.kind,
        "model": p.model,
        "embedding_dim": p.embedding_dim,
        "seed": p.seed,
    })
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Chunk,
    Extract,
    BuildGraph,
    BuildOntology,
    IndexBaseline,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Chunk,
        Stage::Extract,
        Stage::BuildGraph,
        Stage::BuildOntology,
        Stage::IndexBaseline,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Chunk => "chunk",
            Stage::Extract => "extract",
            Stage::BuildGraph => "build-graph",
            Stage::BuildOntology => "build-ontology",
            Stage::IndexBaseline => "index-baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage: {s}")))
    }

    /// Workdir artifacts this stage reads.
    fn inputs(&self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[],
            Stage::Chunk => &["elements.jsonl"],
            Stage::Extract => &["chunks.jsonl"],
            Stage::BuildGraph => &[
                "chunks.jsonl",
                "chunkgraphs.jsonl",
                "keyelements.jsonl",
                "canonmap.json",
            ],
            Stage::BuildOntology => &["kg.json"],
            Stage::IndexBaseline => &["elements.jsonl"],
        }
    }

    /// Workdir artifacts this stage writes.
    fn outputs(&self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["elements.jsonl", "crops.jsonl"],
            Stage::Chunk => &["chunks.jsonl"],
            Stage::Extract => &["chunkgraphs.jsonl", "keyelements.jsonl", "canonmap.json"],
            Stage::BuildGraph => &["kg.json"],
            Stage::BuildOntology => &["ontology.json"],
            Stage::IndexBaseline => &["index.json"],
        }
    }
}

/// Digest bookkeeping for one completed stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_digests: BTreeMap<String, String>,
    pub output_digests: BTreeMap<String, String>,
    pub config_digest: String,
    pub completed_at: String,
}

/// Per-stage records; a stage is fresh iff all digests match current state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl StageManifest {
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(raw) => Ok(serde_json::from_str(&raw)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(StageManifest::default()),
            Err(e) => Err(e.into()),
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

struct WorkdirLock {
    path: PathBuf,
}

impl WorkdirLock {
    fn acquire(workdir: &Path) -> Result<Self> {
        let path = workdir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = write!(f, "{}", std::process::id());
                Ok(WorkdirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Validation(
                format!("workdir is locked by another run (remove {path:?} if stale)"),
            )),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for WorkdirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Reads a JSONL artifact into typed records.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let raw = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Which retrieval path serves a condition label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// `O<level>`: ontology retrieval at a level.
    Ontology(usize),
    /// `SS`: the vector baseline.
    VectorBaseline,
}

pub fn parse_condition(s: &str) -> Result<Condition> {
    if s == "SS" {
        return Ok(Condition::VectorBaseline);
    }
    if let Some(level) = s.strip_prefix('O') {
        if let Ok(level) = level.parse() {
            return Ok(Condition::Ontology(level));
        }
    }
    Err(Error::Config(format!(
        "unknown condition `{s}` (expected O<level> or SS)"
    )))
}

/// Everything queries need from a built workdir.
pub struct QueryArtifacts {
    pub store: ChunkStore,
    pub ontology: Ontology,
    pub provenance: ProvenanceIndex,
    pub index: Option<VectorIndex>,
}

/// The configured pipeline: provider, templates, and stage execution.
pub struct Pipeline {
    pub config: PipelineConfig,
    provider: Arc<dyn Provider>,
    templates: TemplateStore,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(&config.paths.workdir)?;
        let cache_dir = config.artifact("cache");
        let provider = build_provider(&config.provider, Some(&cache_dir))?;
        let templates = match &config.provider.template_dir {
            Some(dir) => TemplateStore::from_dir(dir)?,
            None => TemplateStore::builtin(),
        };
        Ok(Pipeline {
            config,
            provider,
            templates,
        })
    }

    pub fn provider(&self) -> &dyn Provider {
        self.provider.as_ref()
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    fn corpus_files(&self) -> Result<Vec<PathBuf>> {
        let corpus = &self.config.paths.corpus;
        if corpus.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(corpus)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!(
                    "corpus directory {corpus:?} contains no .jsonl files"
                )));
            }
            Ok(files)
        } else {
            Ok(vec![corpus.clone()])
        }
    }

    fn stage_config_digest(&self, stage: Stage) -> String {
        let c = &self.config;
        let slice = match stage {
            Stage::Ingest => json!({ "ingest": &c.ingest }),
            Stage::Chunk => json!({
                "chunking": &c.chunking,
                "provider": provider_signature(&c.provider),
            }),
            Stage::Extract => json!({
                "extract": &c.extract,
                "provider": provider_signature(&c.provider),
            }),
            Stage::BuildGraph => json!({ "kgraph": &c.kgraph }),
            Stage::BuildOntology => json!({
                "ontology": &c.ontology,
                "seed": c.seed,
                "provider": provider_signature(&c.provider),
            }),
            Stage::IndexBaseline => json!({
                "baseline": &c.baseline,
                "provider": provider_signature(&c.provider),
            }),
        };
        sha256_hex(slice.to_string().as_bytes())
    }

    fn input_digests(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut digests = BTreeMap::new();
        if stage == Stage::Ingest {
            for file in self.corpus_files()? {
                digests.insert(format!("corpus:{}", file.display()), sha256_file(&file)?);
            }
            return Ok(digests);
        }
        for name in stage.inputs() {
            let path = self.config.artifact(name);
            if !path.exists() {
                return Err(Error::Validation(format!(
                    "stage {}: missing input {name}; run the producing stage first",
                    stage.name()
                )));
            }
            digests.insert(name.to_string(), sha256_file(&path)?);
        }
        Ok(digests)
    }

    fn output_digests(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut digests = BTreeMap::new();
        for name in stage.outputs() {
            digests.insert(name.to_string(), sha256_file(&self.config.artifact(name))?);
        }
        Ok(digests)
    }

    fn is_fresh(
        &self,
        record: Option<&StageRecord>,
        stage: Stage,
        inputs: &BTreeMap<String, String>,
    ) -> bool {
        let Some(record) = record else { return false };
        if record.input_digests != *inputs || record.config_digest != self.stage_config_digest(stage)
        {
            return false;
        }
        for name in stage.outputs() {
            match sha256_file(&self.config.artifact(name)) {
                Ok(digest) => {
                    if record.output_digests.get(*name) != Some(&digest) {
                        return false;
                    }
                }
                Err(_) => return false,
            }
        }
        true
    }

    /// Runs the requested stages in canonical order, skipping fresh ones.
    /// The manifest is updated atomically after each stage.
    pub fn run(&self, stages: &[Stage]) -> Result<StageManifest> {
        let _lock = WorkdirLock::acquire(&self.config.paths.workdir)?;
        let manifest_path = self.config.artifact("manifest.json");
        let mut manifest = StageManifest::load(&manifest_path)?;
        let requested: BTreeSet<Stage> = stages.iter().copied().collect();
        for stage in Stage::ALL {
            if !requested.contains(&stage) {
                continue;
            }
            let inputs = self.input_digests(stage)?;
            if self.is_fresh(manifest.stages.get(stage.name()), stage, &inputs) {
                info!(stage = stage.name(), "fresh, skipping");
                continue;
            }
            let started = Instant::now();
            let summary = self.exec(stage)?;
            let record = StageRecord {
                input_digests: inputs,
                output_digests: self.output_digests(stage)?,
                config_digest: self.stage_config_digest(stage),
                completed_at: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs().to_string())
                    .unwrap_or_default(),
            };
            manifest.stages.insert(stage.name().to_string(), record);
            manifest.save(&manifest_path)?;
            info!(
                stage = stage.name(),
                duration_ms = started.elapsed().as_millis() as u64,
                "{summary}"
            );
        }
        Ok(manifest)
    }

    fn exec(&self, stage: Stage) -> Result<String> {
        match stage {
            Stage::Ingest => self.exec_ingest(),
            Stage::Chunk => self.exec_chunk(),
            Stage::Extract => self.exec_extract(),
            Stage::BuildGraph => self.exec_build_graph(),
            Stage::BuildOntology => self.exec_build_ontology(),
            Stage::IndexBaseline => self.exec_index_baseline(),
        }
    }

    fn exec_ingest(&self) -> Result<String> {
        let mut elements: Vec<DocumentElement> = Vec::new();
        let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
        for file in self.corpus_files()? {
            for element in load_elements(&file)? {
                if !seen.insert((element.doc_id.clone(), element.id.clone())) {
                    return Err(Error::Validation(format!(
                        "duplicate element id {} in document {} across corpus files",
                        element.id, element.doc_id
                    )));
                }
                elements.push(element);
            }
        }
        let crops: Vec<_> = elements
            .iter()
            .filter(|e| e.kind == ElementKind::Table)
            .map(|e| {
                let bounds = self.config.ingest.bounds_for(&e.doc_id);
                extract_table_region(e, self.config.ingest.crop_target_units, &bounds)
            })
            .collect::<Result<_>>()?;
        write_atomic(
            &self.config.artifact("elements.jsonl"),
            to_canonical_jsonl(&elements)?.as_bytes(),
        )?;
        write_atomic(
            &self.config.artifact("crops.jsonl"),
            to_canonical_jsonl(&crops)?.as_bytes(),
        )?;
        Ok(format!(
            "{} elements, {} crop requests",
            elements.len(),
            crops.len()
        ))
    }

    fn exec_chunk(&self) -> Result<String> {
        let elements = load_elements(&self.config.artifact("elements.jsonl"))?;
        let chunks = hybrid_chunk(&elements, &self.config.chunking);
        let merged = if chunks.is_empty() {
            chunks
        } else {
            let combined = combine_neighbors(&chunks, self.config.chunking.neighbor_window)?;
            let embeddings = self.provider.embed(&combined)?;
            semantic_merge(&chunks, &embeddings, self.config.chunking.similarity_threshold)?
        };
        write_atomic(
            &self.config.artifact("chunks.jsonl"),
            to_canonical_jsonl(&merged)?.as_bytes(),
        )?;
        Ok(format!("{} chunks", merged.len()))
    }

    fn exec_extract(&self) -> Result<String> {
        let chunks: Vec<Chunk> = load_jsonl(&self.config.artifact("chunks.jsonl"))?;
        let extractor = Extractor::new(self.provider.as_ref(), &self.templates);

        // independent per-chunk passes, order preserved
        struct ChunkOutput {
            processed: Chunk,
            graph: ChunkGraph,
            mentions: Vec<String>,
        }
        let outputs: Vec<ChunkOutput> = chunks
            .par_iter()
            .map(|chunk| -> Result<ChunkOutput> {
                let cleaned = extractor.clean_text(chunk)?;
                let processed = extractor.disambiguate(&cleaned)?;
                let entities = extractor.ner(&processed)?;
                let facts = extractor.extract_atomic_facts(&processed)?;
                let mut graph = build_chunk_graph(&facts)?;
                if graph.chunk_id.is_empty() {
                    graph.chunk_id = chunk.id.clone();
                }
                let mut mentions = entities;
                for node in &graph.nodes {
                    if !mentions.contains(&node.name) {
                        mentions.push(node.name.clone());
                    }
                }
                Ok(ChunkOutput {
                    processed,
                    graph,
                    mentions,
                })
            })
            .collect::<Result<_>>()?;

        // canonical mapping is a serialized fold in chunk order
        let mut canon = CanonicalMap::new(self.config.extract.confidence_threshold);
        let mut store = KeyElementStore::default();
        for (chunk, output) in chunks.iter().zip(&outputs) {
            if output.mentions.is_empty() {
                continue;
            }
            let embeddings = self.provider.embed(&output.mentions)?;
            let mentions: Vec<Mention> = output
                .mentions
                .iter()
                .zip(embeddings)
                .map(|(text, embedding)| Mention {
                    text: text.clone(),
                    embedding,
                    chunk_id: chunk.id.clone(),
                })
                .collect();
            map_key_elements(
                &mentions,
                &mut canon,
                &mut store,
                self.config.extract.confidence_threshold,
            )?;
        }

        // node part-of-speech becomes a key-element property
        let mut graphs: Vec<ChunkGraph> = outputs.iter().map(|o| o.graph.clone()).collect();
        for graph in &mut graphs {
            annotate_chunk_graph(graph, &canon);
            for node in &graph.nodes {
                if let Some(id) = node.extra.get("canonical_id") {
                    if let Some(element) = store.get_mut(id) {
                        element
                            .properties
                            .insert(("part_of_speech".into(), node.part_of_speech.clone()));
                    }
                }
            }
        }

        let by_id: BTreeMap<String, &Chunk> = outputs
            .iter()
            .map(|o| (o.processed.id.clone(), &o.processed))
            .collect();
        extractor.define_and_embed(&mut store, &by_id)?;

        write_atomic(
            &self.config.artifact("chunkgraphs.jsonl"),
            to_canonical_jsonl(&graphs)?.as_bytes(),
        )?;
        write_atomic(
            &self.config.artifact("keyelements.jsonl"),
            to_canonical_jsonl(&store.elements)?.as_bytes(),
        )?;
        write_atomic(
            &self.config.artifact("canonmap.json"),
            serde_json::to_string_pretty(&canon)?.as_bytes(),
        )?;
        Ok(format!(
            "{} chunk graphs, {} key elements, {} canonical entries",
            graphs.len(),
            store.elements.len(),
            canon.entries.len()
        ))
    }

    fn exec_build_graph(&self) -> Result<String> {
        let elements: Vec<crate::extract::KeyElement> =
            load_jsonl(&self.config.artifact("keyelements.jsonl"))?;
        let store = KeyElementStore { elements };
        let canon: CanonicalMap =
            serde_json::from_str(&fs::read_to_string(self.config.artifact("canonmap.json"))?)?;
        let graphs: Vec<ChunkGraph> = load_jsonl(&self.config.artifact("chunkgraphs.jsonl"))?;
        let thresholds = self.config.kgraph.thresholds();
        let mut classes = Vec::new();
        for batch in store.elements.chunks(self.config.kgraph.batch_size.max(1)) {
            classes = cluster_batch(batch, classes, &thresholds, &store)?;
        }
        let edges = project_edges(&graphs, &canon, &classes)?;
        let kg = KnowledgeGraph { classes, edges };
        kg.validate()?;
        write_atomic(
            &self.config.artifact("kg.json"),
            serde_json::to_string_pretty(&kg)?.as_bytes(),
        )?;
        Ok(format!(
            "{} candidate classes, {} edges",
            kg.classes.len(),
            kg.edges.len()
        ))
    }

    fn exec_build_ontology(&self) -> Result<String> {
        let kg: KnowledgeGraph =
            serde_json::from_str(&fs::read_to_string(self.config.artifact("kg.json"))?)?;
        let params = HierarchyParams {
            max_depth: self.config.ontology.depth,
            resolutions: self.config.ontology.resolutions.clone(),
            seed: self.config.seed,
        };
        let mut ontology = build_hierarchy(&kg, &params)?;
        synthesize_ontology(&mut ontology, self.provider.as_ref(), &self.templates)?;
        name_and_embed_classes(&mut ontology, &kg, self.provider.as_ref(), &self.templates)?;
        ontology.config_digest = self.config.digest();
        write_atomic(
            &self.config.artifact("ontology.json"),
            serde_json::to_string_pretty(&ontology)?.as_bytes(),
        )?;
        let classes: usize = ontology.levels.iter().map(|l| l.classes.len()).sum();
        Ok(format!(
            "{} levels, {} classes, {} hierarchy edges",
            ontology.levels.len(),
            classes,
            ontology.hierarchy.len()
        ))
    }

    fn exec_index_baseline(&self) -> Result<String> {
        let elements = load_elements(&self.config.artifact("elements.jsonl"))?;
        let mut fixed: Vec<Chunk> = Vec::new();
        let mut i = 0;
        while i < elements.len() {
            let doc_id = elements[i].doc_id.clone();
            let mut j = i;
            while j < elements.len() && elements[j].doc_id == doc_id {
                j += 1;
            }
            let members = &elements[i..j];
            let text = members
                .iter()
                .map(|e| e.text.as_str())
                .collect::<Vec<_>>()
                .join("\n")
                .trim()
                .to_string();
            let ids: Vec<String> = members.iter().map(|e| e.id.clone()).collect();
            fixed.extend(fixed_chunk(
                &doc_id,
                &ids,
                &text,
                self.config.baseline.size_tokens,
                self.config.baseline.overlap_tokens,
            )?);
            i = j;
        }
        let index = VectorIndex::build(&fixed, self.provider.as_ref())?;
        write_atomic(
            &self.config.artifact("index.json"),
            serde_json::to_string_pretty(&index)?.as_bytes(),
        )?;
        Ok(format!("{} baseline chunks indexed", index.entries.len()))
    }

    /// Loads the artifacts needed to serve queries.
    pub fn load_query_artifacts(&self) -> Result<QueryArtifacts> {
        let chunks: Vec<Chunk> = load_jsonl(&self.config.artifact("chunks.jsonl"))?;
        let store = ChunkStore::new(chunks)?;
        let ontology: Ontology =
            serde_json::from_str(&fs::read_to_string(self.config.artifact("ontology.json"))?)?;
        let kg: KnowledgeGraph =
            serde_json::from_str(&fs::read_to_string(self.config.artifact("kg.json"))?)?;
        let elements: Vec<crate::extract::KeyElement> =
            load_jsonl(&self.config.artifact("keyelements.jsonl"))?;
        let provenance = ProvenanceIndex::build(&kg, &KeyElementStore { elements })?;
        let index_path = self.config.artifact("index.json");
        let index = if index_path.exists() {
            Some(serde_json::from_str(&fs::read_to_string(index_path)?)?)
        } else {
            None
        };
        Ok(QueryArtifacts {
            store,
            ontology,
            provenance,
            index,
        })
    }

    /// Answers one query under a condition (ontology level or baseline).
    pub fn answer_query(
        &self,
        artifacts: &QueryArtifacts,
        condition: Condition,
        query: &str,
        overrides: Option<RetrievalConfig>,
    ) -> Result<AnswerRecord> {
        let retrieval = overrides.unwrap_or_else(|| self.config.retrieval.clone());
        match condition {
            Condition::Ontology(level) => {
                let config = RetrievalConfig { level, ..retrieval };
                let (keys, query_embedding) =
                    extract_query_keys(self.provider.as_ref(), &self.templates, query)?;
                let matches =
                    match_classes(&keys, &query_embedding, &config, &artifacts.ontology)?;
                let context = gather_chunks(
                    &matches,
                    &config,
                    &artifacts.store,
                    &artifacts.ontology,
                    &artifacts.provenance,
                )?;
                answer(self.provider.as_ref(), &self.templates, query, &context)
            }
            Condition::VectorBaseline => {
                let index = artifacts.index.as_ref().ok_or_else(|| {
                    Error::Config("index.json missing; run the index-baseline stage".into())
                })?;
                let query_embedding = self
                    .provider
                    .embed(&[query.to_string()])?
                    .pop()
                    .expect("one embedding per text");
                let context = vector_search(
                    &query_embedding,
                    index,
                    retrieval.top_k_classes,
                    retrieval.max_context_tokens,
                )?;
                answer(self.provider.as_ref(), &self.templates, query, &context)
            }
        }
    }

    /// Generates the question set and writes `questions.jsonl`.
    pub fn eval_generate_questions(&self) -> Result<Vec<Question>> {
        if self.config.eval.dataset_description.trim().is_empty() {
            return Err(Error::Config("eval.dataset_description is empty".into()));
        }
        let questions = generate_questions(
            self.provider.as_ref(),
            &self.templates,
            &self.config.eval.dataset_description,
            self.config.eval.personas,
            self.config.eval.tasks,
            self.config.eval.questions,
        )?;
        write_atomic(
            &self.config.artifact("questions.jsonl"),
            to_canonical_jsonl(&questions)?.as_bytes(),
        )?;
        Ok(questions)
    }

    fn answer_path(&self, condition: &str, question_id: &str) -> PathBuf {
        self.config
            .artifact("answers")
            .join(condition)
            .join(format!("{question_id}.json"))
    }

    /// Answers every question under every given condition, writing
    /// `answers/<condition>/<qid>.json`. Questions run in parallel; the
    /// files are independent, so output is deterministic either way.
    pub fn eval_run(&self, conditions: &[String]) -> Result<usize> {
        let questions: Vec<Question> = load_jsonl(&self.config.artifact("questions.jsonl"))?;
        let artifacts = self.load_query_artifacts()?;
        let mut written = 0;
        for condition_name in conditions {
            let condition = parse_condition(condition_name)?;
            questions
                .par_iter()
                .map(|question| -> Result<()> {
                    let record =
                        self.answer_query(&artifacts, condition, &question.text, None)?;
                    let payload = json!({
                        "question_id": question.id,
                        "condition": condition_name,
                        "question": question.text,
                        "answer": record.text,
                        "spans": record.spans,
                    });
                    write_atomic(
                        &self.answer_path(condition_name, &question.id),
                        serde_json::to_string_pretty(&payload)?.as_bytes(),
                    )
                })
                .collect::<Result<Vec<()>>>()?;
            written += questions.len();
        }
        Ok(written)
    }

    fn load_answer(&self, condition: &str, question_id: &str) -> Result<String> {
        let path = self.answer_path(condition, question_id);
        let raw = fs::read_to_string(&path).map_err(|e| {
            Error::Validation(format!("missing answer {path:?} (run `eval run` first): {e}"))
        })?;
        let value: serde_json::Value = serde_json::from_str(&raw)?;
        value
            .get("answer")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| Error::Format(format!("{path:?} has no `answer` field")))
    }

    /// Judges all condition pairs on the requested metrics and writes
    /// `verdicts.jsonl`. Judge calls run in parallel per question; the
    /// verdict log is an ordered collect, so it stays deterministic.
    pub fn eval_judge(
        &self,
        metrics: &[Metric],
        replicates: usize,
        conditions: &[String],
    ) -> Result<Vec<JudgeVerdict>> {
        let questions: Vec<Question> = load_jsonl(&self.config.artifact("questions.jsonl"))?;
        let mut verdicts = Vec::new();
        for i in 0..conditions.len() {
            for j in (i + 1)..conditions.len() {
                let (ca, cb) = (&conditions[i], &conditions[j]);
                let per_question: Vec<Vec<JudgeVerdict>> = questions
                    .par_iter()
                    .map(|question| -> Result<Vec<JudgeVerdict>> {
                        let answer_a = self.load_answer(ca, &question.id)?;
                        let answer_b = self.load_answer(cb, &question.id)?;
                        let mut out = Vec::new();
                        for &metric in metrics {
                            out.extend(judge_pairwise(
                                self.provider.as_ref(),
                                &self.templates,
                                question,
                                ca,
                                &answer_a,
                                cb,
                                &answer_b,
                                metric,
                                replicates,
                                self.config.seed,
                            )?);
                        }
                        Ok(out)
                    })
                    .collect::<Result<_>>()?;
                verdicts.extend(per_question.into_iter().flatten());
            }
        }
        write_atomic(
            &self.config.artifact("verdicts.jsonl"),
            to_canonical_jsonl(&verdicts)?.as_bytes(),
        )?;
        Ok(verdicts)
    }

    /// Extracts claims per answer, clusters them, aggregates win rates,
    /// and writes `report.json`.
    pub fn eval_report(&self, conditions: &[String]) -> Result<EvalReport> {
        let questions: Vec<Question> = load_jsonl(&self.config.artifact("questions.jsonl"))?;
        let verdicts: Vec<JudgeVerdict> = load_jsonl(&self.config.artifact("verdicts.jsonl"))?;
        let mut claims_by_condition: BTreeMap<String, Vec<ClaimSet>> = BTreeMap::new();
        for condition in conditions {
            let mut sets = Vec::new();
            for question in &questions {
                let text = self.load_answer(condition, &question.id)?;
                sets.push(extract_claims(
                    self.provider.as_ref(),
                    &self.templates,
                    &format!("{condition}/{}", question.id),
                    &text,
                )?);
            }
            claims_by_condition.insert(condition.clone(), sets);
        }
        let report = build_report(
            &claims_by_condition,
            &verdicts,
            self.config.eval.claim_threshold,
        );
        write_atomic(
            &self.config.artifact("report.json"),
            serde_json::to_string_pretty(&report)?.as_bytes(),
        )?;
        Ok(report)
    }
}

/// One cross-file integrity violation or missing artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub file: String,
    pub kind: String,
    pub message: String,
}

/// Referential-integrity report over a workdir.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, file: &str, kind: &str, message: String) {
        self.findings.push(Finding {
            file: file.to_string(),
            kind: kind.to_string(),
            message,
        });
    }
}

/// Checks cross-file referential integrity of the standard artifacts.
/// Findings are reported, never raised as errors.
pub fn validate_artifacts(workdir: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let required = [
        "elements.jsonl",
        "chunks.jsonl",
        "chunkgraphs.jsonl",
        "keyelements.jsonl",
        "canonmap.json",
        "kg.json",
        "ontology.json",
        "index.json",
    ];
    for name in required {
        if !workdir.join(name).exists() {
            report.push(name, "missing-input", format!("{name} is absent from {workdir:?}"));
        }
    }

    let elements: Vec<DocumentElement> = match load_elements(&workdir.join("elements.jsonl")) {
        Ok(e) => e,
        Err(e) => {
            if workdir.join("elements.jsonl").exists() {
                report.push("elements.jsonl", "parse", e.to_string());
            }
            return report;
        }
    };
    let element_ids: BTreeSet<String> = elements.iter().map(|e| e.id.clone()).collect();

    let chunks: Vec<Chunk> = match load_jsonl(&workdir.join("chunks.jsonl")) {
        Ok(c) => c,
        Err(e) => {
            if workdir.join("chunks.jsonl").exists() {
                report.push("chunks.jsonl", "parse", e.to_string());
            }
            return report;
        }
    };
    let chunk_ids: BTreeSet<String> = chunks.iter().map(|c| c.id.clone()).collect();
    let mut covered: BTreeMap<&str, usize> = BTreeMap::new();
    for chunk in &chunks {
        for eid in &chunk.element_ids {
            if !element_ids.contains(eid) {
                report.push(
                    "chunks.jsonl",
                    "integrity",
                    format!("chunk {} references missing element {eid}", chunk.id),
                );
            }
            *covered.entry(eid.as_str()).or_insert(0) += 1;
        }
    }
    for (eid, count) in &covered {
        if *count > 1 {
            report.push(
                "chunks.jsonl",
                "integrity",
                format!("element {eid} appears in {count} chunks"),
            );
        }
    }
    for eid in &element_ids {
        if !covered.contains_key(eid.as_str()) {
            report.push(
                "chunks.jsonl",
                "integrity",
                format!("element {eid} is not covered by any chunk"),
            );
        }
    }

    let graphs: Vec<ChunkGraph> =
        load_jsonl(&workdir.join("chunkgraphs.jsonl")).unwrap_or_default();
    for graph in &graphs {
        if !chunk_ids.contains(&graph.chunk_id) {
            report.push(
                "chunkgraphs.jsonl",
                "integrity",
                format!("chunk graph references missing chunk {}", graph.chunk_id),
            );
        }
        if let Err(e) = graph.validate() {
            report.push("chunkgraphs.jsonl", "integrity", e.to_string());
        }
    }

    let key_elements: Vec<crate::extract::KeyElement> =
        load_jsonl(&workdir.join("keyelements.jsonl")).unwrap_or_default();
    let key_ids: BTreeSet<String> = key_elements.iter().map(|k| k.id.clone()).collect();
    for element in &key_elements {
        if element.definition.trim().is_empty() {
            report.push(
                "keyelements.jsonl",
                "integrity",
                format!("key element {} has no definition", element.id),
            );
        }
        if !element.name_embedding.is_unit_norm(1e-6)
            || !element
                .def_embedding
                .as_ref()
                .is_some_and(|e| e.is_unit_norm(1e-6))
        {
            report.push(
                "keyelements.jsonl",
                "integrity",
                format!("key element {} has a non-unit embedding", element.id),
            );
        }
        for cid in &element.source_chunk_ids {
            if !chunk_ids.contains(cid) {
                report.push(
                    "keyelements.jsonl",
                    "integrity",
                    format!("key element {} references missing chunk {cid}", element.id),
                );
            }
        }
    }

    if let Ok(raw) = fs::read_to_string(workdir.join("canonmap.json")) {
        match serde_json::from_str::<CanonicalMap>(&raw) {
            Ok(canon) => {
                for (mention, entry) in &canon.entries {
                    if !key_ids.contains(&entry.canonical_id) {
                        report.push(
                            "canonmap.json",
                            "integrity",
                            format!(
                                "mention `{mention}` maps to missing element {}",
                                entry.canonical_id
                            ),
                        );
                    }
                    if entry.confidence < canon.threshold && entry.confidence != 1.0 {
                        report.push(
                            "canonmap.json",
                            "integrity",
                            format!("mention `{mention}` stored below the confidence threshold"),
                        );
                    }
                }
            }
            Err(e) => report.push("canonmap.json", "parse", e.to_string()),
        }
    }

    let mut kg_class_ids: BTreeSet<String> = BTreeSet::new();
    if let Ok(raw) = fs::read_to_string(workdir.join("kg.json")) {
        match serde_json::from_str::<KnowledgeGraph>(&raw) {
            Ok(kg) => {
                if let Err(e) = kg.validate() {
                    report.push("kg.json", "integrity", e.to_string());
                }
                let mut members: BTreeSet<&String> = BTreeSet::new();
                for class in &kg.classes {
                    kg_class_ids.insert(class.id.clone());
                    for m in &class.member_ids {
                        members.insert(m);
                        if !key_ids.contains(m) {
                            report.push(
                                "kg.json",
                                "integrity",
                                format!("class {} references missing key element {m}", class.id),
                            );
                        }
                    }
                }
                for id in &key_ids {
                    if !members.contains(id) {
                        report.push(
                            "kg.json",
                            "integrity",
                            format!("key element {id} belongs to no candidate class"),
                        );
                    }
                }
            }
            Err(e) => report.push("kg.json", "parse", e.to_string()),
        }
    }

    if let Ok(raw) = fs::read_to_string(workdir.join("ontology.json")) {
        match serde_json::from_str::<Ontology>(&raw) {
            Ok(ontology) => {
                if let Err(e) = ontology.validate() {
                    report.push("ontology.json", "integrity", e.to_string());
                }
                for level in &ontology.levels {
                    for class in &level.classes {
                        for m in &class.member_ids {
                            if !kg_class_ids.contains(m) {
                                report.push(
                                    "ontology.json",
                                    "integrity",
                                    format!(
                                        "class {} references missing candidate class {m}",
                                        class.id
                                    ),
                                );
                            }
                        }
                    }
                }
                if let Some(level0) = ontology.level(0) {
                    let covered: BTreeSet<&String> = level0
                        .classes
                        .iter()
                        .flat_map(|c| c.member_ids.iter())
                        .collect();
                    for id in &kg_class_ids {
                        if !covered.contains(id) {
                            report.push(
                                "ontology.json",
                                "integrity",
                                format!("candidate class {id} is missing from level 0"),
                            );
                        }
                    }
                }
            }
            Err(e) => report.push("ontology.json", "parse", e.to_string()),
        }
    }

    if let Ok(raw) = fs::read_to_string(workdir.join("index.json")) {
        match serde_json::from_str::<VectorIndex>(&raw) {
            Ok(index) => {
                let mut ids = BTreeSet::new();
                for entry in &index.entries {
                    if !ids.insert(&entry.id) {
                        report.push(
                            "index.json",
                            "integrity",
                            format!("duplicate baseline chunk id {}", entry.id),
                        );
                    }
                    if entry.embedding.dim() != index.dim {
                        report.push(
                            "index.json",
                            "integrity",
                            format!(
                                "entry {} has dimension {}",
                                entry.id,
                                entry.embedding.dim()
                            ),
                        );
                    }
                }
            }
            Err(e) => report.push("index.json", "parse", e.to_string()),
        }
    }

    report
}
