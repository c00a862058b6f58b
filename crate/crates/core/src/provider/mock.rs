//! Deterministic mock provider.
//!
//! Completions are table-driven: a fixture map from (template id, prompt
//! digest) to canned output, with per-template fallback rules that derive a
//! plausible structured reply from the prompt text itself. Embeddings hash
//! the lowercased token multiset of the input into a seeded random
//! projection, so equal texts embed identically and unrelated texts are
//! near-orthogonal in expectation.
//!
//! The fallback rules parse the builtin templates' `INPUT:` payload marker
//! and `KEY: value` header lines; custom template sets that drop those
//! markers still work, falling back to the whole prompt as payload.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::fsutil::sha256_hex;
use crate::tokenize::tokens;
use crate::vecmath::Embedding;

use super::{CompletionRequest, Provider};

/// Words the fallback entity rule ignores.
const STOPWORDS: &[&str] = &[
    "about", "above", "across", "after", "against", "also", "among", "another", "because",
    "been", "before", "being", "below", "between", "both", "collection", "corpus", "could",
    "document", "documents", "during", "each", "either", "every", "explain", "from", "have",
    "into", "many", "more", "most", "must", "often", "only", "other", "over", "several",
    "shall", "should", "some", "such", "than", "that", "their", "them", "then", "there",
    "these", "they", "this", "those", "through", "under", "upon", "used", "using", "very",
    "what", "when", "where", "which", "while", "will", "with", "within", "without", "would",
];

/// Verbs the fallback fact rule treats as predicates (and excludes from
/// entities).
const PREDICATES: &[&str] = &[
    "activates", "carries", "causes", "closes", "connects", "contains", "controls", "detects",
    "drives", "energizes", "exceeds", "feeds", "includes", "interrupts", "isolates", "limits",
    "measures", "monitors", "opens", "prevents", "protects", "records", "regulates", "reports",
    "requires", "senses", "signals", "supplies", "supports", "triggers", "trips", "uses",
];

const PERSONA_ROLES: &[&str] = &[
    "protection engineer",
    "field technician",
    "maintenance planner",
    "commissioning specialist",
    "reliability analyst",
    "design reviewer",
    "training coordinator",
];

const TASK_KINDS: &[&str] = &[
    "troubleshooting reported faults",
    "configuring device settings",
    "comparing equipment models",
    "planning preventive maintenance",
    "reviewing documentation for gaps",
    "auditing installed systems",
    "preparing training material",
];

#[derive(Debug, Deserialize)]
struct FixtureEntry {
    template_id: String,
    /// Exact rendered prompt; digested on load.
    #[serde(default)]
    prompt: Option<String>,
    /// Alternatively, the prompt digest itself.
    #[serde(default)]
    digest: Option<String>,
    output: String,
}

/// Offline, bitwise-deterministic provider for tests and fixture runs.
pub struct MockProvider {
    seed: u64,
    dim: usize,
    model: String,
    fixtures: RwLock<HashMap<(String, String), String>>,
    completion_calls: AtomicUsize,
    embed_calls: AtomicUsize,
}

impl MockProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        MockProvider {
            seed,
            dim,
            model: "mock-small".into(),
            fixtures: RwLock::new(HashMap::new()),
            completion_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
        }
    }

    /// Registers a canned completion for an exact rendered prompt.
    pub fn add_fixture(&self, template_id: &str, rendered_prompt: &str, output: &str) {
        self.fixtures.write().unwrap().insert(
            (template_id.to_string(), sha256_hex(rendered_prompt.as_bytes())),
            output.to_string(),
        );
    }

    /// Loads fixtures from a JSON array of {template_id, prompt|digest, output}.
    pub fn load_fixtures(&mut self, path: &Path) -> Result<()> {
        let raw = std::fs::read_to_string(path)?;
        let entries: Vec<FixtureEntry> = serde_json::from_str(&raw)?;
        let mut fixtures = self.fixtures.write().unwrap();
        for e in entries {
            let digest = match (&e.prompt, &e.digest) {
                (Some(p), _) => sha256_hex(p.as_bytes()),
                (None, Some(d)) => d.clone(),
                (None, None) => {
                    return Err(Error::Config(format!(
                        "mock fixture for {} needs a prompt or a digest",
                        e.template_id
                    )))
                }
            };
            fixtures.insert((e.template_id, digest), e.output);
        }
        Ok(())
    }

    /// Number of completion calls that reached this provider.
    pub fn completion_calls(&self) -> usize {
        self.completion_calls.load(Ordering::SeqCst)
    }

    /// Number of embed calls that reached this provider.
    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut material = self.seed.to_le_bytes().to_vec();
        material.extend_from_slice(token.as_bytes());
        let digest = sha256_hex(&material);
        let sub_seed = u64::from_str_radix(&digest[..16], 16).unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn embed_one(&self, text: &str) -> Result<Embedding> {
        let toks = tokens(text);
        if toks.is_empty() {
            return Err(Error::InvalidArgument(
                "embed: cannot embed empty text".into(),
            ));
        }
        let mut acc = vec![0.0f64; self.dim];
        for t in toks {
            let v = self.token_vector(&t.to_lowercase());
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
        }
        Embedding::from_raw(acc)
    }

    fn fallback(&self, request: &CompletionRequest) -> String {
        let prompt = &request.rendered_prompt;
        let body = payload(prompt);
        match request.template_id.as_str() {
            "clean_text" | "disambiguate" => body.trim().to_string(),
            "ner" | "extract_query_keys" => {
                serde_json::to_string(&entities(body)).unwrap()
            }
            "atomic_facts" => {
                let facts: Vec<serde_json::Value> = fact_triples(body)
                    .into_iter()
                    .map(|(s, p, o)| {
                        json!({
                            "subject": s,
                            "predicate": p,
                            "object": o.clone(),
                            "key_entities": [s, o],
                        })
                    })
                    .collect();
                serde_json::to_string(&facts).unwrap()
            }
            "define_term" => {
                let term = field(prompt, "TERM").unwrap_or("the term");
                let co: Vec<String> = entities(body)
                    .into_iter()
                    .filter(|e| e != &term.to_lowercase())
                    .take(3)
                    .collect();
                if co.is_empty() {
                    format!("{term}: a recurring concept in the corpus.")
                } else {
                    format!(
                        "{term}: a recurring concept in the corpus, discussed alongside {}.",
                        co.join(", ")
                    )
                }
            }
            "synthesize_properties" => {
                let mut props: Vec<String> = body
                    .lines()
                    .map(|l| l.trim().to_lowercase())
                    .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
                    .filter(|l| !l.is_empty())
                    .collect();
                props.sort();
                props.dedup();
                serde_json::to_string(&props).unwrap()
            }
            "name_class" => {
                let members = field(prompt, "MEMBERS").unwrap_or("unnamed");
                let member_list: Vec<&str> =
                    members.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
                let head = member_list.first().copied().unwrap_or("unnamed");
                let props: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty()).take(3).collect();
                let reply = json!({
                    "name": format!("{head} group"),
                    "definition": format!(
                        "A class covering {} member concept(s) such as {}. Characteristic properties: {}.",
                        member_list.len(),
                        member_list.iter().take(3).cloned().collect::<Vec<_>>().join(", "),
                        if props.is_empty() { "none recorded".to_string() } else { props.join("; ") }
                    ),
                });
                serde_json::to_string(&reply).unwrap()
            }
            "answer" => {
                let question = field(prompt, "QUESTION").unwrap_or("the question");
                let lines: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
                let snippets: Vec<&str> = lines
                    .iter()
                    .take(5)
                    .map(|l| l.split('.').next().unwrap_or(l).trim())
                    .collect();
                format!(
                    "Regarding \"{question}\": drawing on {} retrieved passage(s): {}.",
                    lines.len(),
                    snippets.join("; ")
                )
            }
            "personas" => {
                let n = count_field(prompt);
                let items: Vec<String> = (0..n)
                    .map(|i| {
                        let role = PERSONA_ROLES[i % PERSONA_ROLES.len()];
                        if i < PERSONA_ROLES.len() {
                            format!("a {role}")
                        } else {
                            format!("a {role} ({})", i / PERSONA_ROLES.len() + 1)
                        }
                    })
                    .collect();
                serde_json::to_string(&items).unwrap()
            }
            "tasks" => {
                let n = count_field(prompt);
                let items: Vec<String> = (0..n)
                    .map(|i| {
                        let task = TASK_KINDS[i % TASK_KINDS.len()];
                        if i < TASK_KINDS.len() {
                            task.to_string()
                        } else {
                            format!("{task} ({})", i / TASK_KINDS.len() + 1)
                        }
                    })
                    .collect();
                serde_json::to_string(&items).unwrap()
            }
            "questions" => {
                let n = count_field(prompt);
                let persona = field(prompt, "PERSONA").unwrap_or("a reader");
                let ents = entities(body);
                let items: Vec<String> = (0..n)
                    .map(|i| match ents.get(i) {
                        Some(e) => format!(
                            "As {persona}: what does the document collection explain about {e}?"
                        ),
                        None => format!(
                            "As {persona}: summarize overarching theme {} of the document collection.",
                            i + 1
                        ),
                    })
                    .collect();
                serde_json::to_string(&items).unwrap()
            }
            "extract_claims" => {
                let claims: Vec<String> = split_sentences(body)
                    .into_iter()
                    .map(|s| s.to_string())
                    .collect();
                serde_json::to_string(&claims).unwrap()
            }
            id if id.starts_with("judge_") => {
                let first = section(prompt, "FIRST:", "SECOND:").unwrap_or("");
                let second = section(prompt, "SECOND:", "\u{0}").unwrap_or("");
                let winner = match first.trim().chars().count().cmp(&second.trim().chars().count()) {
                    std::cmp::Ordering::Greater => "first",
                    std::cmp::Ordering::Less => "second",
                    std::cmp::Ordering::Equal => "tie",
                };
                serde_json::to_string(&json!({ "winner": winner })).unwrap()
            }
            other => serde_json::to_string(&json!({
                "template": other,
                "note": "mock stub",
                "digest": &sha256_hex(prompt.as_bytes())[..8],
            }))
            .unwrap(),
        }
    }
}

impl Provider for MockProvider {
    fn kind(&self) -> &'static str {
        "mock"
    }

    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        request.validate()?;
        self.completion_calls.fetch_add(1, Ordering::SeqCst);
        let key = (
            request.template_id.clone(),
            sha256_hex(request.rendered_prompt.as_bytes()),
        );
        if let Some(canned) = self.fixtures.read().unwrap().get(&key) {
            return Ok(canned.clone());
        }
        Ok(self.fallback(request))
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// Everything after the last `INPUT:` marker line, or the whole prompt.
fn payload(prompt: &str) -> &str {
    match prompt.rfind("INPUT:") {
        Some(pos) => prompt[pos + "INPUT:".len()..].trim(),
        None => prompt.trim(),
    }
}

/// Value of a `KEY: value` header line.
fn field<'a>(prompt: &'a str, key: &str) -> Option<&'a str> {
    let marker = format!("{key}: ");
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(&marker))
        .map(str::trim)
}

fn count_field(prompt: &str) -> usize {
    field(prompt, "COUNT")
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

/// Text between two marker lines (`end` = unmatched sentinel for "rest").
fn section<'a>(prompt: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = prompt.find(start)? + start.len();
    let rest = &prompt[s..];
    match rest.find(end) {
        Some(e) => Some(rest[..e].trim()),
        None => Some(rest.trim()),
    }
}

fn is_entity_token(t: &str) -> bool {
    t.chars().count() >= 4
        && t.chars().all(char::is_alphabetic)
        && !STOPWORDS.contains(&t)
        && !PREDICATES.contains(&t)
}

/// Deterministic stand-in for NER: lowercased alphabetic tokens of length
/// >= 4 that are neither stopwords nor predicate verbs, in first-seen order.
fn entities(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for tok in tokens(text) {
        let t = tok.to_lowercase();
        if is_entity_token(&t) && !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

fn split_sentences(text: &str) -> Vec<&str> {
    text.split(['.', '?', '!'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Subject-predicate-object triples: consecutive entity pairs per sentence,
/// labeled with the sentence's first predicate verb.
fn fact_triples(text: &str) -> Vec<(String, String, String)> {
    let mut out = Vec::new();
    for sentence in split_sentences(text) {
        let ents = entities(sentence);
        let predicate = tokens(sentence)
            .iter()
            .map(|t| t.to_lowercase())
            .find(|t| PREDICATES.contains(&t.as_str()))
            .unwrap_or_else(|| "related_to".to_string());
        for pair in ents.windows(2) {
            out.push((pair[0].clone(), predicate.clone(), pair[1].clone()));
        }
    }
    out
}
