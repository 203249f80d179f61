//! Prompt templates and prompt assembly.

use std::path::Path;

use thiserror::Error;

use super::{LessonRequest, RetrievalEvidence};

/// Sentence placed in every prompt restricting the model to retrieved text.
pub const EXCLUSIVE_USE_INSTRUCTION: &str = "Only use the information provided in the CONTEXT section, which comes from the government-approved textbook, to base the lesson plan on; do not add facts that are not in the context.";

/// Marker used as the context block when retrieval found nothing.
pub const NO_CONTEXT: &str = "NO CONTEXT FOUND";

/// Output schema the model must follow; matches the grammar in [`crate::plan`].
pub const OUTPUT_FORMAT: &str = "\
Output the lesson plan in the government lesson plan format, using exactly these three sections and nothing else:

## GENERAL INFORMATION
Topic: <topic>
Subject: <subject>
Level: <level>
Class size: <class size>
Periods: <number of periods>
Date: ____
## PREPARATION
Learning Objective: <competence the learners will demonstrate>
Materials: <teaching and learning materials>
References: <textbook pages used>
## PROCEDURE
- [introduction|<minutes>] teacher: <teacher activity> | learners: <learner activity>
- [development|<minutes>] teacher: <teacher activity> | learners: <learner activity>
- [wrap_up_and_assessment|<minutes>] teacher: <teacher activity> | learners: <learner activity>

Every procedure row must use one of the phases introduction, development or wrap_up_and_assessment, and each phase must appear at least once.";

pub const REQUIRED_PLACEHOLDERS: [&str; 5] = ["topic", "level", "periods", "class_size", "context"];

const DEFAULT_TEMPLATE: &str = include_str!("../../templates/lesson_prompt.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template is missing placeholder {{{{{0}}}}}")]
    MissingPlaceholder(&'static str),
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

/// A prompt template with `{{name}}` placeholders.
///
/// `topic`, `level`, `periods`, `class_size` and `context` are required.
/// `subject`, `instruction` and `output_format` are optional; when the
/// template has no `{{instruction}}` the instruction is prepended, and when it
/// has no `{{output_format}}` the schema is appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        for name in REQUIRED_PLACEHOLDERS {
            if !text.contains(&format!("{{{{{name}}}}}")) {
                return Err(PromptError::MissingPlaceholder(name));
            }
        }
        Ok(Self { text })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::new(text)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE).expect("shipped template has all placeholders")
    }
}

/// `p. 14` or `pp. 10–11`.
pub fn page_citation(page_start: u32, page_end: u32) -> String {
    if page_start == page_end {
        format!("p. {page_start}")
    } else {
        format!("pp. {page_start}–{page_end}")
    }
}

/// Numbered, cited context entries, or [`NO_CONTEXT`].
pub fn context_block(evidence: &RetrievalEvidence) -> String {
    if evidence.scored_chunks.is_empty() {
        return NO_CONTEXT.to_string();
    }
    evidence
        .scored_chunks
        .iter()
        .enumerate()
        .map(|(i, sc)| {
            format!(
                "[{}] ({}) {}",
                i + 1,
                page_citation(sc.chunk.page_start, sc.chunk.page_end),
                sc.chunk.text
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Substitute `{{name}}` placeholders in one pass; substituted values are
/// never scanned again. Unknown placeholders are left as they are.
fn substitute(template: &str, lookup: impl Fn(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}").and_then(|close| lookup(&after[..close]).map(|v| (close, v))) {
            Some((close, value)) => {
                out.push_str(&value);
                rest = &after[close + 2..];
            }
            None => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn assemble_prompt(
    request: &LessonRequest,
    evidence: &RetrievalEvidence,
    template: &PromptTemplate,
) -> String {
    let mut text = template.text.clone();
    if !text.contains("{{instruction}}") {
        text = format!("{{{{instruction}}}}\n\n{text}");
    }
    if !text.contains("{{output_format}}") {
        text = format!("{text}\n\n{{{{output_format}}}}\n");
    }
    let context = context_block(evidence);
    substitute(&text, |name| {
        Some(match name {
            "instruction" => EXCLUSIVE_USE_INSTRUCTION.to_string(),
            "output_format" => OUTPUT_FORMAT.to_string(),
            "topic" => request.topic.trim().to_string(),
            "subject" => request.subject.clone(),
            "level" => request.level.as_str().to_string(),
            "periods" => request.periods.to_string(),
            "class_size" => request.class_size.as_str().to_string(),
            "context" => context.clone(),
            _ => return None,
        })
    })
}
