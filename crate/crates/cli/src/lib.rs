//! Operator commands behind the `lessonplan` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt};
use lessonplan_core::corpus::{
    load_textbook, select_topics, CorpusError, Edition, Level, TableOfContents, DEFAULT_BREADTH_PAGE_LIMIT,
    DEFAULT_CHUNK_OVERLAP, DEFAULT_CHUNK_SIZE,
};
use lessonplan_core::embedding::Embedder;
use lessonplan_core::generation::{
    run_generation, ClassSize, GenerationConfig, LessonRequest, PromptTemplate, Providers,
};
use lessonplan_core::ingest::ingest_document;
use lessonplan_core::lpap::{self, BandTable, EvaluationReport, Rubric};
use lessonplan_core::plan::{render_plan, RenderMode};
use lessonplan_core::store::{load_store, persist_store, StoreManifest, StoreSet, CHUNKS_FILE, MANIFEST_FILE, VECTORS_FILE};
use lessonplan_service::ServiceConfig;
use serde::{Deserialize, Serialize};

pub const TOC_FILE: &str = "toc.json";
pub const BATCH_MANIFEST: &str = "batch_manifest.json";
pub const PLAN_SUFFIX: &str = ".plan.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Missing or unreadable input; exit code 2.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} file not found: {}", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{what} directory not found: {}", path.display())))
    }
}

fn default_chunk_size() -> usize {
    DEFAULT_CHUNK_SIZE
}
fn default_chunk_overlap() -> usize {
    DEFAULT_CHUNK_OVERLAP
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestConfig {
    #[serde(default = "default_chunk_size")]
    pub chunk_size: usize,
    #[serde(default = "default_chunk_overlap")]
    pub overlap: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

fn default_plans_per_subject() -> usize {
    8
}
fn default_stride() -> usize {
    2
}
fn default_class_size() -> ClassSize {
    ClassSize::Over60
}
fn default_periods() -> u32 {
    1
}
fn default_max_format_retries() -> u32 {
    2
}
fn default_breadth_page_limit() -> u32 {
    DEFAULT_BREADTH_PAGE_LIMIT
}

/// The fixed-parameter generation protocol: every `stride`-th TOC entry,
/// `plans_per_subject` per subject, one class size and period count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchProtocolConfig {
    /// Subjects to run; all loaded stores when empty.
    #[serde(default)]
    pub subjects: Vec<String>,
    #[serde(default = "default_plans_per_subject")]
    pub plans_per_subject: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_class_size")]
    pub class_size: ClassSize,
    #[serde(default = "default_periods")]
    pub periods: u32,
    #[serde(default = "default_max_format_retries")]
    pub max_format_retries: u32,
    #[serde(default = "default_breadth_page_limit")]
    pub breadth_page_limit: u32,
}

impl Default for BatchProtocolConfig {
    fn default() -> Self {
        Self {
            subjects: vec![],
            plans_per_subject: default_plans_per_subject(),
            stride: default_stride(),
            class_size: default_class_size(),
            periods: default_periods(),
            max_format_retries: default_max_format_retries(),
            breadth_page_limit: default_breadth_page_limit(),
        }
    }
}

impl BatchProtocolConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.plans_per_subject == 0 {
            return Err("plans_per_subject must be at least 1".into());
        }
        if self.stride == 0 {
            return Err("stride must be at least 1".into());
        }
        if self.periods == 0 {
            return Err("periods must be at least 1".into());
        }
        Ok(())
    }
}

/// The whole config file: service settings at the top level plus
/// `[ingest]` and `[batch]` tables.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CliConfig {
    #[serde(flatten)]
    pub service: ServiceConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub batch: BatchProtocolConfig,
}

impl CliConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, CliError> {
        let config: Self =
            toml::from_str(text).map_err(|e| CliError::Input(format!("invalid config {origin}: {e}")))?;
        config
            .service
            .generation
            .validate()
            .and_then(|_| config.batch.validate())
            .map_err(|e| CliError::Input(format!("invalid config {origin}: {e}")))?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        require_file(path, "config")?;
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, &path.display().to_string())
    }
}

pub struct IngestArgs<'a> {
    pub corpus: &'a Path,
    pub toc: &'a Path,
    pub subject: &'a str,
    pub level: Level,
    pub edition: Edition,
    pub out_dir: &'a Path,
    pub force: bool,
    pub config: &'a IngestConfig,
}

/// Chunk, embed and persist one textbook; the TOC is copied next to the
/// store for later batch runs. Returns the written manifest.
pub async fn cmd_ingest(args: IngestArgs<'_>, embedder: &dyn Embedder) -> Result<StoreManifest, CliError> {
    require_file(args.corpus, "corpus")?;
    require_file(args.toc, "TOC")?;
    let toc = TableOfContents::load(args.toc).map_err(|e| CliError::Input(format!("{}: {e}", args.toc.display())))?;
    let doc = load_textbook(args.corpus, args.subject, args.level, args.edition).map_err(|e| match e {
        CorpusError::Io { .. } => CliError::Input(e.to_string()),
        other => CliError::Failed(format!("{}: {other}", args.corpus.display())),
    })?;
    let (first, last) = (doc.pages[0].number, doc.pages[doc.pages.len() - 1].number);
    for entry in &toc.entries {
        if entry.page_start < first || entry.page_end > last {
            return Err(CliError::Failed(format!(
                "TOC entry {:?} (pages {}-{}) lies outside the corpus pages {first}-{last}",
                entry.title, entry.page_start, entry.page_end
            )));
        }
    }

    if args.out_dir.join(MANIFEST_FILE).exists() {
        if !args.force {
            return Err(CliError::Failed(format!(
                "{} already holds a store; pass --force to replace it",
                args.out_dir.display()
            )));
        }
        for f in [MANIFEST_FILE, CHUNKS_FILE, VECTORS_FILE, TOC_FILE] {
            let p = args.out_dir.join(f);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| failed(format!("{}: {e}", p.display())))?;
            }
        }
    }

    let store = ingest_document(
        &doc,
        args.config.chunk_size,
        args.config.overlap,
        embedder,
        chrono::Utc::now(),
    )
    .await
    .map_err(failed)?;
    persist_store(&store, args.out_dir).map_err(failed)?;
    let toc_json = serde_json::to_string_pretty(&toc).expect("TOC serializes");
    let toc_path = args.out_dir.join(TOC_FILE);
    std::fs::write(&toc_path, toc_json + "\n").map_err(|e| failed(format!("{}: {e}", toc_path.display())))?;
    tracing::info!(subject = args.subject, records = store.len(), dir = %args.out_dir.display(), "store written");
    Ok(store.manifest().clone())
}

/// Subject to (store directory, TOC) for every store under `root`.
pub fn load_tocs(root: &Path) -> Result<BTreeMap<String, TableOfContents>, CliError> {
    require_dir(root, "store")?;
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| CliError::Input(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    let mut tocs = BTreeMap::new();
    for dir in dirs {
        let store = load_store(&dir).map_err(failed)?;
        let toc_path = dir.join(TOC_FILE);
        require_file(&toc_path, "TOC")?;
        let toc = TableOfContents::load(&toc_path).map_err(|e| CliError::Input(format!("{}: {e}", toc_path.display())))?;
        tocs.insert(store.subject().to_string(), toc);
    }
    Ok(tocs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchConfidence {
    pub chunk_count: usize,
    pub distinct_pages: usize,
    pub page_equivalents: f64,
    pub low_evidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub plan_id: String,
    pub subject: String,
    pub toc_index: usize,
    pub topic: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retries_used: Option<u32>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<BatchConfidence>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub protocol: BatchProtocolConfig,
    pub generation: GenerationConfig,
    pub embedder_id: String,
    pub llm_id: String,
    pub plans: Vec<BatchRow>,
}

impl BatchManifest {
    pub fn failures(&self) -> usize {
        self.plans.iter().filter(|p| p.status != "ok").count()
    }
}

/// Run the protocol over every selected subject. Plans are written as
/// `{Subject}{NN}.plan.json` and summarised in `batch_manifest.json`.
/// Per-plan failures are recorded, not raised; the caller decides the exit
/// status from [`BatchManifest::failures`].
pub async fn cmd_batch(
    protocol: &BatchProtocolConfig,
    generation: &GenerationConfig,
    stores_dir: &Path,
    providers: &Providers,
    template: &PromptTemplate,
    out_dir: &Path,
    parallel: usize,
) -> Result<BatchManifest, CliError> {
    protocol.validate().map_err(CliError::Input)?;
    let tocs = load_tocs(stores_dir)?;
    let stores = StoreSet::load_dir(stores_dir).map_err(failed)?;
    let subjects: Vec<String> = if protocol.subjects.is_empty() {
        stores.iter().map(|s| s.subject().to_string()).collect()
    } else {
        protocol.subjects.clone()
    };
    if subjects.is_empty() {
        return Err(CliError::Input(format!("no stores found in {}", stores_dir.display())));
    }

    let mut jobs = Vec::new();
    for subject in &subjects {
        let store = stores
            .get(subject)
            .ok_or_else(|| CliError::Input(format!("no store for subject {subject}")))?;
        let toc = &tocs[subject];
        let topics = select_topics(toc, protocol.plans_per_subject, protocol.stride, protocol.breadth_page_limit)
            .map_err(|e| CliError::Failed(format!("{subject}: {e}")))?;
        for (i, topic) in topics.into_iter().enumerate() {
            jobs.push((
                format!("{subject}{:02}", i + 1),
                i * protocol.stride,
                LessonRequest {
                    level: store.manifest().level,
                    subject: subject.clone(),
                    periods: protocol.periods,
                    class_size: protocol.class_size,
                    topic: topic.title,
                },
            ));
        }
    }

    let generation = GenerationConfig {
        max_retries: protocol.max_format_retries,
        ..generation.clone()
    };
    std::fs::create_dir_all(out_dir).map_err(|e| failed(format!("{}: {e}", out_dir.display())))?;

    let stores = &stores;
    let generation_ref = &generation;
    let results: Vec<_> = stream::iter(jobs)
        .map(|(plan_id, toc_index, request)| async move {
            let outcome = run_generation(stores, &request, providers, generation_ref, template).await;
            (plan_id, toc_index, request, outcome)
        })
        .buffered(parallel.max(1))
        .collect()
        .await;

    let mut rows = Vec::new();
    for (plan_id, toc_index, request, outcome) in results {
        let mut row = BatchRow {
            plan_id: plan_id.clone(),
            subject: request.subject.clone(),
            toc_index,
            topic: request.topic.clone(),
            status: "ok".into(),
            file: None,
            retries_used: None,
            warnings: vec![],
            confidence: None,
            error: None,
        };
        match outcome {
            Ok(result) => {
                let file = format!("{plan_id}{PLAN_SUFFIX}");
                let path = out_dir.join(&file);
                std::fs::write(&path, render_plan(&result.plan, RenderMode::ArchivalJson))
                    .map_err(|e| failed(format!("{}: {e}", path.display())))?;
                row.file = Some(file);
                row.retries_used = Some(result.retries_used);
                row.warnings = result.warnings;
                row.confidence = Some(BatchConfidence {
                    chunk_count: result.confidence.chunk_count,
                    distinct_pages: result.confidence.distinct_pages,
                    page_equivalents: result.confidence.page_equivalents,
                    low_evidence: result.confidence.low_evidence,
                });
            }
            Err(e) => {
                tracing::error!(plan = %plan_id, error = %e, "plan failed");
                row.status = "failed".into();
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }

    let manifest = BatchManifest {
        protocol: protocol.clone(),
        generation,
        embedder_id: providers.embedder.id(),
        llm_id: providers.llm.id(),
        plans: rows,
    };
    let path = out_dir.join(BATCH_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, json).map_err(|e| failed(format!("{}: {e}", path.display())))?;
    Ok(manifest)
}

/// Score rated plans and write `report.csv` and `report.txt`.
pub fn cmd_evaluate(
    plans_dir: &Path,
    ratings: &Path,
    rubric: Option<&Path>,
    out_dir: &Path,
) -> Result<EvaluationReport, CliError> {
    require_dir(plans_dir, "plans")?;
    require_file(ratings, "ratings")?;
    let rubric = match rubric {
        Some(path) => {
            require_file(path, "rubric")?;
            Rubric::load(path).map_err(failed)?
        }
        None => Rubric::default(),
    };
    let scores = lpap::load_ratings_csv(ratings, &rubric).map_err(failed)?;
    for plan_id in lpap::plan_ids(&scores) {
        if !plans_dir.join(format!("{plan_id}{PLAN_SUFFIX}")).is_file() {
            return Err(failed(lpap::LpapError::UnknownPlan(plan_id.to_string())));
        }
    }
    let report = lpap::evaluation_report(&scores, &rubric, &BandTable::default()).map_err(failed)?;
    report.write(out_dir).map_err(failed)?;
    Ok(report)
}
