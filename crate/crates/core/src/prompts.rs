//! Prompt templates and assembly.
//!
//! The two templates live under `resources/prompts/` so wording changes go
//! through file review instead of code review. Both share one preamble and
//! one 36-item condition list; they diverge only after the
//! "Follow these steps:" marker, where the simple variant gives three
//! numbered steps and the complex variant spells out Steps 1 to 9.

use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};

pub const NOTE_PLACEHOLDER: &str = "{{NOTE}}";

/// Everything before this marker is the shared region; everything after is
/// the per-template step list.
pub const STEP_SECTION_MARKER: &str = "Follow these steps:";

const SP_BODY: &str = include_str!("../resources/prompts/sp.txt");
const CP_BODY: &str = include_str!("../resources/prompts/cp.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PromptId {
    Sp,
    Cp,
}

impl PromptId {
    pub const ALL: [PromptId; 2] = [PromptId::Sp, PromptId::Cp];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptId::Sp => "SP",
            PromptId::Cp => "CP",
        }
    }
}

impl core::str::FromStr for PromptId {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, PromptError> {
        match s.to_ascii_uppercase().as_str() {
            "SP" => Ok(PromptId::Sp),
            "CP" => Ok(PromptId::Cp),
            other => Err(PromptError::UnknownId(other.to_string())),
        }
    }
}

impl core::fmt::Display for PromptId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt id {0:?} (expected SP or CP)")]
    UnknownId(String),
    #[error("template must contain the note placeholder exactly once, found {0}")]
    BadPlaceholderCount(usize),
    #[error("note is empty")]
    EmptyNote,
    #[error("note contains the placeholder sentinel")]
    SentinelInNote,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: PromptId,
    pub body: String,
}

impl PromptTemplate {
    pub fn builtin(id: PromptId) -> PromptTemplate {
        let body = match id {
            PromptId::Sp => SP_BODY,
            PromptId::Cp => CP_BODY,
        };
        PromptTemplate::from_body(id, body).expect("embedded templates carry one placeholder")
    }

    /// External template text, e.g. a reviewed revision loaded from disk.
    pub fn from_body(id: PromptId, body: &str) -> Result<PromptTemplate, PromptError> {
        let count = body.matches(NOTE_PLACEHOLDER).count();
        if count != 1 {
            return Err(PromptError::BadPlaceholderCount(count));
        }
        Ok(PromptTemplate { id, body: body.to_string() })
    }
}

/// Splices the note into the template. The output length is always
/// len(body) - len(placeholder) + len(note).
pub fn build_prompt(template: &PromptTemplate, note: &str) -> Result<String, PromptError> {
    if note.is_empty() {
        return Err(PromptError::EmptyNote);
    }
    if note.contains(NOTE_PLACEHOLDER) {
        return Err(PromptError::SentinelInNote);
    }
    Ok(template.body.replacen(NOTE_PLACEHOLDER, note, 1))
}
