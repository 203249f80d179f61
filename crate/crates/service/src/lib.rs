//! JSON API over the deployed subject stores.
//!
//! * `GET /api/subjects`: `[{subject, level, edition}]`, ordered by subject.
//! * `POST /api/generate`: `{level, subject, periods, class_size, topic}` to
//!   `{plan, rendered, confidence, warnings, retries_used}`.
//! * `GET /api/health`: `{status, stores_loaded, provider_reachable}`.
//!
//! Every non-200 body is `{stage, reason}` plus `field` for validation
//! errors. Static UI assets are served from `/` when a directory is given.

pub mod config;

use std::future::IntoFuture;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use lessonplan_core::corpus::{Edition, Level};
use lessonplan_core::generation::{
    run_generation, ClassSize, GenerationConfig, GenerationError, LessonRequest, PipelineError,
    PromptTemplate, Providers,
};
use lessonplan_core::plan::{render_plan, LessonPlan, RenderMode};
use lessonplan_core::store::{StoreError, StoreSet};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

pub use config::{build_providers, ConfigError, OfflineFlags, ServiceConfig};

/// Shared, read-only server state. Stores arrive once, after startup.
pub struct AppState {
    stores: OnceLock<Arc<StoreSet>>,
    providers: Providers,
    generation: GenerationConfig,
    template: PromptTemplate,
    provider_reachable: AtomicBool,
}

impl AppState {
    pub fn new(providers: Providers, generation: GenerationConfig, template: PromptTemplate) -> Arc<Self> {
        Arc::new(Self {
            stores: OnceLock::new(),
            providers,
            generation,
            template,
            provider_reachable: AtomicBool::new(false),
        })
    }

    /// Publish the loaded stores. Later calls are ignored.
    pub fn set_stores(&self, stores: StoreSet) {
        let _ = self.stores.set(Arc::new(stores));
    }

    pub fn stores(&self) -> Option<&Arc<StoreSet>> {
        self.stores.get()
    }

    pub async fn probe_providers(&self) -> bool {
        let ok = self.providers.embedder.probe().await && self.providers.llm.probe().await;
        self.provider_reachable.store(ok, Ordering::Relaxed);
        ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub stage: String,
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, stage: &str, reason: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                stage: stage.into(),
                reason: reason.into(),
                field: None,
            },
        }
    }

    fn field(field: &str, reason: impl Into<String>) -> Self {
        let mut e = Self::new(StatusCode::BAD_REQUEST, "validate", reason);
        e.body.field = Some(field.into());
        e
    }

    fn starting() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "startup", "stores are still loading")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let stage = e.stage.to_string();
        let status = match &e.source {
            GenerationError::InvalidRequest(f) => return ApiError::field(&f.field, f.reason.clone()),
            GenerationError::UnknownSubject(_) => StatusCode::NOT_FOUND,
            GenerationError::SubjectMismatch { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            GenerationError::Provider(_) => StatusCode::BAD_GATEWAY,
            GenerationError::FormatFailure { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            GenerationError::Store(StoreError::ZeroQuery) => StatusCode::BAD_REQUEST,
            GenerationError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, &stage, e.source.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject: String,
    pub level: Level,
    pub edition: Edition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePayload {
    pub chunk_count: usize,
    pub distinct_pages: usize,
    pub page_equivalents: f64,
    pub low_evidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub plan: LessonPlan,
    pub rendered: String,
    pub confidence: ConfidencePayload,
    pub warnings: Vec<String>,
    pub retries_used: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub stores_loaded: usize,
    pub provider_reachable: bool,
}

async fn list_subjects(State(state): State<Arc<AppState>>) -> Result<Json<Vec<SubjectEntry>>, ApiError> {
    let stores = state.stores().ok_or_else(ApiError::starting)?;
    Ok(Json(
        stores
            .iter()
            .map(|s| SubjectEntry {
                subject: s.subject().to_string(),
                level: s.manifest().level,
                edition: s.manifest().edition,
            })
            .collect(),
    ))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let stores = state.stores();
    Json(Health {
        status: if stores.is_some() { "ok" } else { "starting" }.into(),
        stores_loaded: stores.map_or(0, |s| s.len()),
        provider_reachable: state.provider_reachable.load(Ordering::Relaxed),
    })
}

fn str_field<'a>(payload: &'a Value, name: &str) -> Result<&'a str, ApiError> {
    match payload.get(name) {
        None | Some(Value::Null) => Err(ApiError::field(name, "missing")),
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(ApiError::field(name, "must be a string")),
    }
}

/// Field-by-field decoding so that every rejection names its field.
fn parse_request(payload: &Value, stores: &StoreSet) -> Result<LessonRequest, ApiError> {
    if !payload.is_object() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "validate", "body must be a JSON object"));
    }
    let topic = str_field(payload, "topic")?;
    if topic.trim().is_empty() {
        return Err(ApiError::field("topic", "empty"));
    }
    let level: Level = str_field(payload, "level")?
        .parse()
        .map_err(|e: String| ApiError::field("level", e))?;
    let class_size: ClassSize = str_field(payload, "class_size")?
        .parse()
        .map_err(|e: String| ApiError::field("class_size", e))?;
    let periods = match payload.get("periods") {
        None | Some(Value::Null) => return Err(ApiError::field("periods", "missing")),
        Some(v) => v
            .as_u64()
            .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
            .ok_or_else(|| ApiError::field("periods", "must be a positive integer"))?,
    };
    if periods == 0 || periods > 10 {
        return Err(ApiError::field("periods", "must be between 1 and 10"));
    }
    let subject = str_field(payload, "subject")?;
    if subject.trim().is_empty() {
        return Err(ApiError::field("subject", "empty"));
    }
    let store = stores.get(subject).ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "retrieve",
            format!("no store for subject {subject:?}"),
        )
    })?;
    if store.manifest().level != level {
        return Err(ApiError::field(
            "level",
            format!("{subject} is available at level {} only", store.manifest().level),
        ));
    }
    Ok(LessonRequest {
        level,
        subject: subject.to_string(),
        periods: periods as u32,
        class_size,
        topic: topic.to_string(),
    })
}

async fn generate(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<Value>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    let Json(payload) =
        payload.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "validate", e.body_text()))?;
    let stores = state.stores().ok_or_else(ApiError::starting)?.clone();
    let request = parse_request(&payload, &stores)?;
    let result = run_generation(
        &stores,
        &request,
        &state.providers,
        &state.generation,
        &state.template,
    )
    .await
    .map_err(|e| {
        tracing::warn!(error = %e, subject = %request.subject, "generation failed");
        ApiError::from(e)
    })?;
    Ok(Json(GenerateResponse {
        rendered: render_plan(&result.plan, RenderMode::DisplayMarkup),
        confidence: ConfidencePayload {
            chunk_count: result.confidence.chunk_count,
            distinct_pages: result.confidence.distinct_pages,
            page_equivalents: result.confidence.page_equivalents,
            low_evidence: result.confidence.low_evidence,
        },
        warnings: result.warnings,
        retries_used: result.retries_used,
        plan: result.plan,
    }))
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "route", "no such endpoint")
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>, cors_origin: Option<&str>) -> Router {
    let cors = match cors_origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(origin) => CorsLayer::new().allow_origin(origin),
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let api = Router::new()
        .route("/subjects", get(list_subjects))
        .route("/generate", post(generate))
        .route("/health", get(health))
        .fallback(api_not_found)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.layer(cors)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("prompt template: {0}")]
    Template(String),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error("store loading failed: {0}")]
    Stores(String),
    #[error("server error: {0}")]
    Io(#[from] std::io::Error),
}

fn check_embedders(stores: &StoreSet, embedder_id: &str) -> Result<(), String> {
    for s in stores.iter() {
        if s.manifest().embedder_id != embedder_id {
            return Err(format!(
                "store {} was built with embedder {:?} but the service uses {:?}",
                s.subject(),
                s.manifest().embedder_id,
                embedder_id
            ));
        }
    }
    Ok(())
}

/// Bind, start answering (health reports "starting"), load stores in the
/// background, and probe providers periodically. Returns only on error.
pub async fn serve(config: ServiceConfig, flags: OfflineFlags) -> Result<(), ServeError> {
    let providers = build_providers(
        config.embedding.as_ref(),
        config.llm.as_ref(),
        config.offline_embedder_dim,
        flags,
    )?;
    let template = match &config.prompt_template {
        Some(path) => PromptTemplate::load(path).map_err(|e| ServeError::Template(e.to_string()))?,
        None => PromptTemplate::default(),
    };
    let embedder_id = providers.embedder.id();
    let state = AppState::new(providers, config.generation.clone(), template);
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| ServeError::Bind {
            addr: config.listen.clone(),
            message: e.to_string(),
        })?;
    tracing::info!(addr = %config.listen, "listening");

    let store_dir = config.store_dir.clone();
    let loader = tokio::task::spawn_blocking(move || {
        let set = StoreSet::load_dir(&store_dir).map_err(|e| e.to_string())?;
        check_embedders(&set, &embedder_id)?;
        Ok::<_, String>(set)
    });

    let prober = state.clone();
    let interval = Duration::from_secs(config.probe_interval_secs.max(1));
    tokio::spawn(async move {
        loop {
            let ok = prober.probe_providers().await;
            tracing::debug!(reachable = ok, "provider probe");
            tokio::time::sleep(interval).await;
        }
    });

    let app = router(state.clone(), config.static_dir.clone(), config.cors_origin.as_deref());
    let server = tokio::spawn(axum::serve(listener, app).into_future());
    let loaded = loader
        .await
        .map_err(|e| ServeError::Stores(e.to_string()))
        .and_then(|r| r.map_err(ServeError::Stores));
    let stores = match loaded {
        Ok(stores) => stores,
        Err(e) => {
            server.abort();
            return Err(e);
        }
    };
    tracing::info!(stores = stores.len(), "stores loaded");
    state.set_stores(stores);
    server
        .await
        .map_err(|e| ServeError::Io(std::io::Error::other(e)))?
        .map_err(ServeError::Io)
}
