//! The retriever chain: request validation, retrieval, evidence confidence,
//! prompt assembly, generation with format-failure retry, and the topic
//! plausibility check.

pub mod mock;
pub mod prompt;

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Level;
use crate::embedding::{words, Embedder};
use crate::plan::{self, LessonPlan, PlanParseError};
use crate::provider::{ProviderError, TextGenerator};
use crate::store::{ScoredChunk, StoreError, StoreSet, VectorStore};

pub use prompt::{assemble_prompt, PromptTemplate};

pub const WARNING_LOW_EVIDENCE: &str = "LOW_EVIDENCE";
pub const WARNING_TOPIC_MISMATCH: &str = "TOPIC_MISMATCH";
pub const WARNING_EXTRA_PERIODS: &str = "EXTRA_PERIODS_DROPPED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassSize {
    #[serde(rename = "<30")]
    Under30,
    #[serde(rename = "30-60")]
    From30To60,
    #[serde(rename = ">60")]
    Over60,
}

impl ClassSize {
    pub const ALL: [ClassSize; 3] = [ClassSize::Under30, ClassSize::From30To60, ClassSize::Over60];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassSize::Under30 => "<30",
            ClassSize::From30To60 => "30-60",
            ClassSize::Over60 => ">60",
        }
    }
}

impl fmt::Display for ClassSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        match compact.as_str() {
            "<30" => Ok(ClassSize::Under30),
            "30-60" | "30–60" => Ok(ClassSize::From30To60),
            ">60" => Ok(ClassSize::Over60),
            _ => Err(format!("unknown class size {s:?}")),
        }
    }
}

/// The teacher's selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonRequest {
    pub level: Level,
    pub subject: String,
    pub periods: u32,
    pub class_size: ClassSize,
    pub topic: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl LessonRequest {
    /// Field-level checks that need no store.
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.topic.trim().is_empty() {
            return Err(FieldError {
                field: "topic".into(),
                reason: "empty".into(),
            });
        }
        if self.subject.trim().is_empty() {
            return Err(FieldError {
                field: "subject".into(),
                reason: "empty".into(),
            });
        }
        if self.periods == 0 {
            return Err(FieldError {
                field: "periods".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvidence {
    pub scored_chunks: Vec<ScoredChunk>,
    pub distinct_pages: usize,
    pub total_source_chars: usize,
    pub query_vector_digest: String,
}

impl RetrievalEvidence {
    /// Aggregate counts over already-ranked chunks.
    pub fn from_chunks(scored_chunks: Vec<ScoredChunk>, query_vector_digest: String) -> Self {
        let pages: BTreeSet<u32> = scored_chunks
            .iter()
            .flat_map(|sc| sc.chunk.page_start..=sc.chunk.page_end)
            .collect();
        let total_source_chars = scored_chunks.iter().map(|sc| sc.chunk.char_count).sum();
        Self {
            distinct_pages: pages.len(),
            total_source_chars,
            scored_chunks,
            query_vector_digest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub chunk_count: usize,
    pub distinct_pages: usize,
    pub total_source_chars: usize,
    pub low_evidence: bool,
    pub page_equivalents: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlausibilityVerdict {
    pub topic_evidence_overlap: f64,
    pub topic_plan_overlap: f64,
    pub suspicious: bool,
}

fn default_k() -> usize {
    6
}
fn default_max_retries() -> u32 {
    2
}
fn default_chars_per_page() -> usize {
    1800
}
fn default_low_evidence_page_threshold() -> f64 {
    1.0
}
fn default_overlap_threshold() -> f64 {
    0.2
}

/// Pipeline knobs; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub min_sim: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_chars_per_page")]
    pub chars_per_page: usize,
    #[serde(default = "default_low_evidence_page_threshold")]
    pub low_evidence_page_threshold: f64,
    #[serde(default = "default_overlap_threshold")]
    pub overlap_threshold: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            min_sim: 0.0,
            max_retries: default_max_retries(),
            chars_per_page: default_chars_per_page(),
            low_evidence_page_threshold: default_low_evidence_page_threshold(),
            overlap_threshold: default_overlap_threshold(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if self.chars_per_page == 0 {
            return Err("chars_per_page must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.overlap_threshold) {
            return Err("overlap_threshold must lie in [0, 1]".into());
        }
        if !(-1.0..=1.0).contains(&self.min_sim) {
            return Err("min_sim must lie in [-1, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub plan: LessonPlan,
    pub raw_output: String,
    pub evidence: RetrievalEvidence,
    pub confidence: ConfidenceReport,
    pub plausibility: PlausibilityVerdict,
    pub retries_used: u32,
    pub warnings: Vec<String>,
    pub config: GenerationConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Retrieve,
    Generate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Validate => "validate",
            Stage::Retrieve => "retrieve",
            Stage::Generate => "generate",
        })
    }
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("invalid {}: {}", .0.field, .0.reason)]
    InvalidRequest(FieldError),
    #[error("no store for subject {0:?}")]
    UnknownSubject(String),
    #[error("store is for subject {store:?}, request is for {request:?}")]
    SubjectMismatch { store: String, request: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("format failure after {retries} retries: {last_error}")]
    FormatFailure { retries: u32, last_error: String },
}

/// A [`GenerationError`] tagged with the pipeline stage it came from.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: GenerationError,
}

impl PipelineError {
    fn at(stage: Stage) -> impl FnOnce(GenerationError) -> PipelineError {
        move |source| PipelineError { stage, source }
    }
}

/// Embed the topic and collect the store's top-k chunks as evidence.
pub async fn retrieve_context(
    store: &VectorStore,
    request: &LessonRequest,
    k: usize,
    min_sim: f64,
    embedder: &dyn Embedder,
) -> Result<RetrievalEvidence, GenerationError> {
    if store.subject() != request.subject {
        return Err(GenerationError::SubjectMismatch {
            store: store.subject().to_string(),
            request: request.subject.clone(),
        });
    }
    let query = embedder
        .embed_texts(&[request.topic.trim().to_string()])
        .await?
        .pop()
        .ok_or_else(|| ProviderError::Contract("no vector returned for the topic".into()))?;
    let hits = store.top_k(&query, k, min_sim)?;
    Ok(RetrievalEvidence::from_chunks(hits, query.digest()))
}

pub fn compute_confidence(
    evidence: &RetrievalEvidence,
    chars_per_page: usize,
    low_evidence_page_threshold: f64,
) -> ConfidenceReport {
    let page_equivalents = evidence.total_source_chars as f64 / chars_per_page.max(1) as f64;
    ConfidenceReport {
        chunk_count: evidence.scored_chunks.len(),
        distinct_pages: evidence.distinct_pages,
        total_source_chars: evidence.total_source_chars,
        low_evidence: page_equivalents < low_evidence_page_threshold,
        page_equivalents,
    }
}

/// Outcome of [`generate_plan`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanAttempt {
    pub raw_output: String,
    pub retries_used: u32,
    pub plan: LessonPlan,
}

fn check_structure(raw: &str) -> Result<LessonPlan, String> {
    let parsed = plan::parse_lesson_plan(raw).map_err(|e: PlanParseError| e.to_string())?;
    let report = plan::validate_format(&parsed);
    if report.valid {
        Ok(parsed)
    } else {
        Err(format!(
            "invalid plan: sections {:?}, keys {:?}, structure {:?}",
            report.missing_sections, report.missing_keys, report.structural_errors
        ))
    }
}

/// Call the model with the same prompt until its output parses and
/// validates, at most `max_retries + 1` times. Content is never judged here.
pub async fn generate_plan(
    llm: &dyn TextGenerator,
    prompt: &str,
    max_retries: u32,
) -> Result<PlanAttempt, GenerationError> {
    let mut last_error = String::new();
    for attempt in 0..=max_retries {
        let raw = llm.complete(prompt).await?;
        match check_structure(&raw) {
            Ok(plan) => {
                return Ok(PlanAttempt {
                    raw_output: raw,
                    retries_used: attempt,
                    plan,
                })
            }
            Err(e) => {
                tracing::warn!(attempt, error = %e, "model output failed structural check");
                last_error = e;
            }
        }
    }
    Err(GenerationError::FormatFailure {
        retries: max_retries,
        last_error,
    })
}

const STOP_WORDS: &[&str] = &[
    "a", "about", "after", "an", "and", "are", "as", "at", "be", "between", "by", "for", "from",
    "how", "in", "into", "is", "it", "its", "of", "on", "or", "our", "the", "their", "to", "under",
    "up", "use", "using", "what", "with",
];

/// Lowercased topic words without stop words; all words when every word is
/// a stop word.
pub fn content_words(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    let all: Vec<String> = words(text).filter(|w| seen.insert(w.clone())).collect();
    let content: Vec<String> = all
        .iter()
        .filter(|w| !STOP_WORDS.contains(&w.as_str()))
        .cloned()
        .collect();
    if content.is_empty() {
        all
    } else {
        content
    }
}

fn overlap(topic_words: &[String], haystack: &HashSet<String>) -> f64 {
    if topic_words.is_empty() {
        return 0.0;
    }
    let hits = topic_words.iter().filter(|w| haystack.contains(*w)).count();
    hits as f64 / topic_words.len() as f64
}

/// Lexical cross-check of the requested topic against the evidence and
/// against the plan's Topic and Learning Objective.
pub fn plausibility_check(
    topic: &str,
    evidence: &RetrievalEvidence,
    plan: &LessonPlan,
    overlap_threshold: f64,
) -> PlausibilityVerdict {
    let topic_words = content_words(topic);
    let evidence_words: HashSet<String> = evidence
        .scored_chunks
        .iter()
        .flat_map(|sc| words(&sc.chunk.text))
        .collect();
    let plan_words: HashSet<String> = words(plan.topic())
        .chain(words(plan.learning_objective()))
        .collect();
    let topic_evidence_overlap = overlap(&topic_words, &evidence_words);
    let topic_plan_overlap = overlap(&topic_words, &plan_words);
    PlausibilityVerdict {
        topic_evidence_overlap,
        topic_plan_overlap,
        suspicious: topic_evidence_overlap < overlap_threshold
            || topic_plan_overlap < overlap_threshold,
    }
}

/// The embedder and text generator a pipeline run talks to.
#[derive(Clone)]
pub struct Providers {
    pub embedder: Arc<dyn Embedder>,
    pub llm: Arc<dyn TextGenerator>,
}

impl fmt::Debug for Providers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Providers")
            .field("embedder", &self.embedder.id())
            .field("llm", &self.llm.id())
            .finish()
    }
}

/// Run the whole chain for one request.
pub async fn run_generation(
    stores: &StoreSet,
    request: &LessonRequest,
    providers: &Providers,
    config: &GenerationConfig,
    template: &PromptTemplate,
) -> Result<GenerationResult, PipelineError> {
    request
        .validate()
        .map_err(|e| PipelineError::at(Stage::Validate)(GenerationError::InvalidRequest(e)))?;
    let store = stores.get(&request.subject).ok_or_else(|| {
        PipelineError::at(Stage::Retrieve)(GenerationError::UnknownSubject(
            request.subject.clone(),
        ))
    })?;
    let evidence = retrieve_context(
        store,
        request,
        config.k,
        config.min_sim,
        providers.embedder.as_ref(),
    )
    .await
    .map_err(PipelineError::at(Stage::Retrieve))?;
    let confidence = compute_confidence(
        &evidence,
        config.chars_per_page,
        config.low_evidence_page_threshold,
    );
    let prompt = assemble_prompt(request, &evidence, template);
    let attempt = generate_plan(providers.llm.as_ref(), &prompt, config.max_retries)
        .await
        .map_err(PipelineError::at(Stage::Generate))?;
    let had_extra_periods = !attempt.plan.extra_periods.is_empty();
    let plan = plan::truncate_to_first_period(&attempt.plan);
    let plausibility =
        plausibility_check(&request.topic, &evidence, &plan, config.overlap_threshold);

    let mut warnings = Vec::new();
    if confidence.low_evidence {
        warnings.push(WARNING_LOW_EVIDENCE.to_string());
    }
    if plausibility.suspicious {
        warnings.push(WARNING_TOPIC_MISMATCH.to_string());
    }
    if had_extra_periods && request.periods == 1 {
        warnings.push(WARNING_EXTRA_PERIODS.to_string());
    }
    tracing::info!(
        subject = %request.subject,
        topic = %request.topic,
        retries = attempt.retries_used,
        page_equivalents = confidence.page_equivalents,
        warnings = ?warnings,
        config = ?config,
        "lesson plan generated"
    );
    Ok(GenerationResult {
        plan,
        raw_output: attempt.raw_output,
        evidence,
        confidence,
        plausibility,
        retries_used: attempt.retries_used,
        warnings,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Chunk;

    fn chunk(text: &str, start: u32, end: u32) -> ScoredChunk {
        ScoredChunk {
            chunk: Chunk {
                chunk_id: format!("H-{start}-{end}"),
                subject: "History".into(),
                text: text.into(),
                page_start: start,
                page_end: end,
                char_count: text.chars().count(),
            },
            score: 0.9,
        }
    }

    #[test]
    fn evidence_aggregates_pages_and_chars() {
        let e = RetrievalEvidence::from_chunks(
            vec![chunk("aaaa", 10, 11), chunk("bb", 11, 12), chunk("c", 14, 14)],
            "d".into(),
        );
        assert_eq!(e.distinct_pages, 4);
        assert_eq!(e.total_source_chars, 7);
    }

    #[test]
    fn confidence_examples() {
        let empty = RetrievalEvidence::from_chunks(vec![], String::new());
        let c = compute_confidence(&empty, 1800, 1.0);
        assert_eq!((c.chunk_count, c.page_equivalents, c.low_evidence), (0, 0.0, true));

        let text = "x".repeat(600);
        let three = RetrievalEvidence::from_chunks(
            vec![chunk(&text, 1, 1), chunk(&text, 2, 2), chunk(&text, 3, 3)],
            String::new(),
        );
        let c = compute_confidence(&three, 1800, 1.0);
        assert_eq!(c.page_equivalents, 1.0);
        assert!(!c.low_evidence);

        let half = RetrievalEvidence::from_chunks(vec![chunk(&"y".repeat(900), 7, 7)], String::new());
        let c = compute_confidence(&half, 1800, 1.0);
        assert_eq!(c.page_equivalents, 0.5);
        assert!(c.low_evidence);
    }

    fn plan_about(topic: &str, objective: &str) -> LessonPlan {
        let mut p = LessonPlan::default();
        p.general_information.insert("topic".into(), topic.into());
        p.preparation
            .insert("learning_objective".into(), objective.into());
        p
    }

    #[test]
    fn plausibility_examples() {
        let evidence = RetrievalEvidence::from_chunks(
            vec![chunk("Kenya borders Uganda to the east.", 14, 14)],
            String::new(),
        );
        let v = plausibility_check("Kenya", &evidence, &plan_about("Kenya", "Locate Kenya"), 0.2);
        assert_eq!((v.topic_evidence_overlap, v.topic_plan_overlap), (1.0, 1.0));
        assert!(!v.suspicious);

        let off = plan_about("Mukasa", "Describe the role of Mukasa in Buganda");
        let v = plausibility_check("Kenya", &evidence, &off, 0.2);
        assert_eq!(v.topic_plan_overlap, 0.0);
        assert!(v.suspicious);

        let none = RetrievalEvidence::from_chunks(vec![chunk("Fractions", 1, 1)], String::new());
        let v = plausibility_check("Kenya", &none, &off, 0.2);
        assert_eq!((v.topic_evidence_overlap, v.topic_plan_overlap), (0.0, 0.0));
        assert!(v.suspicious);
    }

    #[test]
    fn stop_words_removed_from_topic() {
        assert_eq!(content_words("The Kingdom of Buganda"), ["kingdom", "buganda"]);
        assert_eq!(content_words("Of the"), ["of", "the"]);
    }

    #[test]
    fn class_size_parsing() {
        assert_eq!("> 60".parse::<ClassSize>().unwrap(), ClassSize::Over60);
        assert_eq!("30 - 60".parse::<ClassSize>().unwrap(), ClassSize::From30To60);
        assert!("60+".parse::<ClassSize>().is_err());
        assert_eq!(serde_json::to_string(&ClassSize::Under30).unwrap(), "\"<30\"");
    }

    #[test]
    fn request_validation() {
        let mut r = LessonRequest {
            level: Level::S1,
            subject: "History".into(),
            periods: 1,
            class_size: ClassSize::Over60,
            topic: "  ".into(),
        };
        assert_eq!(r.validate().unwrap_err().field, "topic");
        r.topic = "Kenya".into();
        r.periods = 0;
        assert_eq!(r.validate().unwrap_err().field, "periods");
    }
}
