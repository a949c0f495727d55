//! Analogical inspiration via a two-step LLM chain.
//!
//! Step one asks for the key design principles of the subject; step two
//! feeds those principles back and asks for visually concrete objects from
//! nature, architecture or fashion that convey the abstract concept.
//! Selecting an inspiration and re-running step two with it as the concept
//! branches the exploration one level deeper.

mod engine;
mod parse;
mod prompt;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;

pub use engine::AnalogyEngine;
pub use parse::{is_adjective, normalize_item, normalize_label, parse_reply, ParsedItem};
pub use prompt::{PromptTemplates, TemplateError};

pub const MAX_INSPIRATIONS: usize = 25;
pub const DEFAULT_INSPIRATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Nature,
    Architecture,
    Fashion,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Nature, Category::Architecture, Category::Fashion];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Nature => "nature",
            Category::Architecture => "architecture",
            Category::Fashion => "fashion",
        }
    }

    /// Finds a category name anywhere in free text, e.g. `"Nature."` or
    /// `"domain: architecture"`. Ambiguous text yields `None`.
    pub fn find_in(text: &str) -> Option<Category> {
        let lower = text.to_lowercase();
        let mut hits = Category::ALL
            .into_iter()
            .filter(|c| lower.contains(c.as_str()));
        match (hits.next(), hits.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s
            .trim()
            .trim_matches(|c: char| !c.is_alphanumeric())
            .to_lowercase();
        Category::ALL
            .into_iter()
            .find(|c| c.as_str() == t)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InspirationRequest {
    pub subject: String,
    pub concept: String,
    pub count: usize,
    /// Distinguishes otherwise identical requests that should not share a
    /// memoized result.
    #[serde(default)]
    pub chain_seed: u64,
}

impl InspirationRequest {
    pub fn new(subject: &str, concept: &str, count: usize) -> Result<Self, AnalogyError> {
        let request = Self {
            subject: subject.trim().to_string(),
            concept: concept.trim().to_string(),
            count,
            chain_seed: 0,
        };
        request.validate()?;
        Ok(request)
    }

    pub fn validate(&self) -> Result<(), AnalogyError> {
        if self.subject.trim().is_empty() {
            return Err(AnalogyError::InvalidRequest("subject is empty".into()));
        }
        if self.concept.trim().is_empty() {
            return Err(AnalogyError::InvalidRequest("concept is empty".into()));
        }
        if !(1..=MAX_INSPIRATIONS).contains(&self.count) {
            return Err(AnalogyError::InvalidRequest(format!(
                "count must be in 1..={MAX_INSPIRATIONS}, got {}",
                self.count
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inspiration {
    pub label: String,
    pub category: Category,
    #[serde(default)]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignPrinciples {
    pub subject: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspirationSet {
    pub subject: String,
    pub concept: String,
    #[serde(default)]
    pub parent: Option<String>,
    pub items: Vec<Inspiration>,
    pub requested: usize,
    /// Fewer items than requested came back.
    pub short: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Error)]
pub enum AnalogyError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("language model returned an empty reply for {0}")]
    EmptyReply(&'static str),
    #[error("no inspirations could be parsed from reply: {raw:?}")]
    Unparseable { raw: String },
}

impl AnalogyError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, AnalogyError::Backend(e) if e.is_retryable())
    }
}
