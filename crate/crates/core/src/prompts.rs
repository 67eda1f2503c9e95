//! Prompting strategies and their caption-parameterized templates.
//!
//! The four built-in templates ship in `data/strategies.v1.json` and are
//! read-only. Additional named templates can be loaded from a file of the
//! same shape (a JSON object mapping strategy name to template text).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const PLACEHOLDER: &str = "{caption}";

const BUILTIN_TEMPLATES: &str = include_str!("../data/strategies.v1.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("caption is empty")]
    EmptyCaption,
    #[error("template {name:?} must contain exactly one {{caption}} placeholder, found {found}")]
    Placeholder { name: String, found: usize },
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("built-in strategy {0:?} cannot be redefined")]
    ReadOnlyBuiltin(String),
    #[error("template file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    Baseline,
    TaskInstruction,
    Negation,
    ChainOfThought,
}

impl StrategyId {
    pub const ALL: [StrategyId; 4] = [
        StrategyId::Baseline,
        StrategyId::TaskInstruction,
        StrategyId::Negation,
        StrategyId::ChainOfThought,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Baseline => "baseline",
            StrategyId::TaskInstruction => "task_instruction",
            StrategyId::Negation => "negation",
            StrategyId::ChainOfThought => "chain_of_thought",
        }
    }

    /// Human-readable label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            StrategyId::Baseline => "No Prompt Engineering",
            StrategyId::TaskInstruction => "Task Instruction Prompting",
            StrategyId::Negation => "Negation Prompting",
            StrategyId::ChainOfThought => "Chain of Thought Prompting",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| PromptError::UnknownStrategy(s.to_string()))
    }
}

/// A template with exactly one `{caption}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    text: String,
    split: usize,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Result<Self, PromptError> {
        let name = name.into();
        let text = text.into();
        let found = text.matches(PLACEHOLDER).count();
        if found != 1 {
            return Err(PromptError::Placeholder { name, found });
        }
        let split = text.find(PLACEHOLDER).expect("one placeholder");
        Ok(Self { name, text, split })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn prefix(&self) -> &str {
        &self.text[..self.split]
    }

    pub fn suffix(&self) -> &str {
        &self.text[self.split + PLACEHOLDER.len()..]
    }

    /// Substitutes the trimmed caption for the placeholder. The caption is
    /// inserted as opaque text and never re-expanded.
    pub fn render(&self, caption: &str) -> Result<String, PromptError> {
        let caption = caption.trim();
        if caption.is_empty() {
            return Err(PromptError::EmptyCaption);
        }
        let mut out = String::with_capacity(self.text.len() + caption.len());
        out.push_str(self.prefix());
        out.push_str(caption);
        out.push_str(self.suffix());
        Ok(out)
    }

    /// Recovers the caption from a prompt rendered with this template.
    pub fn extract_caption<'p>(&self, prompt: &'p str) -> Option<&'p str> {
        let (pre, suf) = (self.prefix(), self.suffix());
        if prompt.len() <= pre.len() + suf.len() {
            return None;
        }
        prompt
            .strip_prefix(pre)
            .and_then(|rest| rest.strip_suffix(suf))
    }

    /// Hex SHA-256 of the template text.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

fn parse_template_map(json: &str) -> Result<BTreeMap<String, PromptTemplate>, PromptError> {
    let raw: BTreeMap<String, String> =
        serde_json::from_str(json).map_err(|e| PromptError::File(e.to_string()))?;
    raw.into_iter()
        .map(|(name, text)| PromptTemplate::new(name.clone(), text).map(|t| (name, t)))
        .collect()
}

fn builtins() -> &'static [PromptTemplate; 4] {
    static BUILTINS: OnceLock<[PromptTemplate; 4]> = OnceLock::new();
    BUILTINS.get_or_init(|| {
        let mut map = parse_template_map(BUILTIN_TEMPLATES).expect("built-in templates are valid");
        StrategyId::ALL.map(|id| {
            map.remove(id.as_str())
                .unwrap_or_else(|| panic!("built-in template {id} missing"))
        })
    })
}

pub fn template_for(strategy: StrategyId) -> &'static PromptTemplate {
    &builtins()[strategy as usize]
}

pub fn render_prompt(strategy: StrategyId, caption: &str) -> Result<String, PromptError> {
    template_for(strategy).render(caption)
}

/// Identifies which built-in template produced `prompt` and returns the
/// embedded caption. Longer fixed text is tried first so that one template
/// whose prefix extends another's is matched correctly.
pub fn match_builtin(prompt: &str) -> Option<(StrategyId, &str)> {
    let mut order = StrategyId::ALL;
    order.sort_by_key(|id| std::cmp::Reverse(template_for(*id).text().len()));
    order
        .into_iter()
        .find_map(|id| template_for(id).extract_caption(prompt).map(|c| (id, c)))
}

/// Digest of every built-in template keyed by strategy name.
pub fn template_digests() -> BTreeMap<String, String> {
    StrategyId::ALL
        .iter()
        .map(|id| (id.as_str().to_string(), template_for(*id).digest()))
        .collect()
}

/// The built-in templates plus any user-defined ones.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    custom: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self::default()
    }

    /// Adds the templates in a JSON file. Entries named after a built-in are
    /// accepted only when their text is identical to the built-in.
    pub fn load_custom(&mut self, path: impl AsRef<Path>) -> Result<(), PromptError> {
        let json = std::fs::read_to_string(path).map_err(|e| PromptError::File(e.to_string()))?;
        self.add_custom_json(&json)
    }

    pub fn add_custom_json(&mut self, json: &str) -> Result<(), PromptError> {
        for (name, template) in parse_template_map(json)? {
            if let Ok(id) = name.parse::<StrategyId>() {
                if template_for(id).text() != template.text() {
                    return Err(PromptError::ReadOnlyBuiltin(name));
                }
                continue;
            }
            self.custom.insert(name, template);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&PromptTemplate> {
        match name.parse::<StrategyId>() {
            Ok(id) => Some(template_for(id)),
            Err(_) => self.custom.get(name),
        }
    }

    pub fn render(&self, name: &str, caption: &str) -> Result<String, PromptError> {
        self.get(name)
            .ok_or_else(|| PromptError::UnknownStrategy(name.to_string()))?
            .render(caption)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        StrategyId::ALL
            .iter()
            .map(|id| id.as_str())
            .chain(self.custom.keys().map(String::as_str))
    }
}
