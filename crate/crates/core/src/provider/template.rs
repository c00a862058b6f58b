//! Versioned prompt templates.
//!
//! Prompts live in template files, not code. The builtin set is embedded
//! from `templates/` at the repository root; a directory of `.txt` files
//! can replace it wholesale at runtime.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

macro_rules! builtin {
    ($($id:literal),+ $(,)?) => {
        [$(($id, include_str!(concat!("../../../../templates/", $id, ".txt")))),+]
    };
}

const BUILTIN: &[(&str, &str)] = &builtin![
    "clean_text",
    "disambiguate",
    "ner",
    "atomic_facts",
    "define_term",
    "synthesize_properties",
    "name_class",
    "extract_query_keys",
    "answer",
    "refusal",
    "personas",
    "tasks",
    "questions",
    "extract_claims",
    "judge_comprehensiveness",
    "judge_diversity",
    "judge_empowerment",
    "judge_directness",
];

/// In-memory set of prompt templates, keyed by id.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

impl TemplateStore {
    /// The templates shipped with the repository.
    pub fn builtin() -> Self {
        TemplateStore {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    /// Loads every `*.txt` file in `dir` as a template named by its stem.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("txt") {
                let id = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .ok_or_else(|| Error::Config(format!("bad template filename: {path:?}")))?
                    .to_string();
                templates.insert(id, fs::read_to_string(&path)?);
            }
        }
        if templates.is_empty() {
            return Err(Error::Config(format!(
                "template directory {dir:?} contains no .txt templates"
            )));
        }
        Ok(TemplateStore { templates })
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(|s| s.as_str())
    }

    /// Renders template `id`, substituting each `{{name}}` placeholder.
    /// Unknown templates and unfilled placeholders are errors.
    pub fn render(&self, id: &str, vars: &[(&str, &str)]) -> Result<String> {
        let raw = self
            .templates
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown prompt template: {id}")))?;
        let mut out = raw.clone();
        for (name, value) in vars {
            out = out.replace(&format!("{{{{{name}}}}}"), value);
        }
        if let Some(pos) = out.find("{{") {
            let tail: String = out[pos..].chars().take(40).collect();
            return Err(Error::Format(format!(
                "template {id}: unfilled placeholder near `{tail}`"
            )));
        }
        Ok(out.trim_end().to_string())
    }
}
