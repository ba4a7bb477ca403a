//! Prompt templates that turn a candidate label into a premise sentence.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PLACEHOLDER: &str = "{}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: String,
    template: String,
}

impl PromptTemplate {
    /// The template must contain exactly one `{}`.
    pub fn new(id: impl Into<String>, template: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let template = template.into();
        let count = template.matches(PLACEHOLDER).count();
        if count != 1 {
            return Err(Error::InvalidTemplate {
                id,
                reason: format!("expected exactly one `{{}}`, found {count}"),
            });
        }
        Ok(PromptTemplate { id, template })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    /// Inserts `label` verbatim at the placeholder.
    pub fn render(&self, label: &str) -> String {
        self.template.replacen(PLACEHOLDER, label, 1)
    }
}

const CATALOG: [&str; 11] = [
    "This example is {}.",
    "I am {}.",
    "I feel {}.",
    "I am feeling {}.",
    "This person is expressing {} emotion.",
    "A speech seems to express a feeling like {}.",
    "A transcript seems to express a feeling like {}.",
    "A conversation seems to express some feelings like {}.",
    "The emotion of the conversation is {}.",
    "The emotion of the previous conversation is {}.",
    "The overall emotion of the conversation is {}.",
];

pub const DEFAULT_PROMPT_ID: &str = "p09";

/// The eleven built-in prompts, ids `p01`..`p11` in catalog order.
pub fn builtin_catalog() -> Vec<PromptTemplate> {
    CATALOG
        .iter()
        .enumerate()
        .map(|(i, t)| PromptTemplate {
            id: format!("p{:02}", i + 1),
            template: (*t).to_string(),
        })
        .collect()
}

pub fn default_prompt() -> PromptTemplate {
    builtin_prompt(DEFAULT_PROMPT_ID).expect("default prompt is in the catalog")
}

pub fn builtin_prompt(id: &str) -> Option<PromptTemplate> {
    builtin_catalog().into_iter().find(|p| p.id == id)
}

/// Reads `id<TAB>template` lines. Blank lines and `#` comments are skipped.
pub fn load_prompt_file(path: &Path) -> Result<Vec<PromptTemplate>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut prompts: Vec<PromptTemplate> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, template) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected `id<TAB>template`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::parse(path, i + 1, "empty prompt id"));
        }
        if prompts.iter().any(|p| p.id == id) {
            return Err(Error::parse(path, i + 1, format!("duplicate prompt id {id:?}")));
        }
        prompts.push(PromptTemplate::new(id, template)?);
    }
    Ok(prompts)
}

/// Resolves a prompt id against the catalog first, then an optional prompt file.
pub fn resolve_prompt(id: &str, prompt_file: Option<&Path>) -> Result<PromptTemplate> {
    if let Some(p) = builtin_prompt(id) {
        return Ok(p);
    }
    if let Some(path) = prompt_file {
        if let Some(p) = load_prompt_file(path)?.into_iter().find(|p| p.id == id) {
            return Ok(p);
        }
    }
    Err(Error::InvalidTemplate {
        id: id.to_string(),
        reason: "unknown prompt id".into(),
    })
}
