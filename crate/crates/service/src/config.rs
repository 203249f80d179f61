use std::path::{Path, PathBuf};
use std::sync::Arc;

use lessonplan_core::embedding::OfflineEmbedder;
use lessonplan_core::generation::mock::MockLlm;
use lessonplan_core::generation::{GenerationConfig, Providers};
use lessonplan_core::provider::{HttpEmbedder, HttpTextGenerator, ProviderConfig, ProviderError};
use serde::{Deserialize, Serialize};

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_store_dir() -> PathBuf {
    PathBuf::from("stores")
}
fn default_probe_interval_secs() -> u64 {
    30
}
fn default_offline_dim() -> usize {
    256
}

/// Service settings, read from TOML. Provider secrets never live here:
/// `api_key_env` names the environment variable that holds them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_store_dir")]
    pub store_dir: PathBuf,
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub prompt_template: Option<PathBuf>,
    /// Allowed browser origin; any origin when unset.
    #[serde(default)]
    pub cors_origin: Option<String>,
    #[serde(default = "default_probe_interval_secs")]
    pub probe_interval_secs: u64,
    #[serde(default)]
    pub embedding: Option<ProviderConfig>,
    #[serde(default)]
    pub llm: Option<ProviderConfig>,
    #[serde(default = "default_offline_dim")]
    pub offline_embedder_dim: usize,
    #[serde(default)]
    pub generation: GenerationConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            store_dir: default_store_dir(),
            static_dir: None,
            prompt_template: None,
            cors_origin: None,
            probe_interval_secs: default_probe_interval_secs(),
            embedding: None,
            llm: None,
            offline_embedder_dim: default_offline_dim(),
            generation: GenerationConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("no {0} provider configured; add a [{0}] section or use the offline flag")]
    MissingProvider(&'static str),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("invalid generation settings: {0}")]
    Generation(String),
}

impl ServiceConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
        config.generation.validate().map_err(ConfigError::Generation)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }
}

/// Network-free substitutes requested on the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OfflineFlags {
    pub offline_embedder: bool,
    pub mock_llm: bool,
}

pub fn build_providers(
    embedding: Option<&ProviderConfig>,
    llm: Option<&ProviderConfig>,
    offline_dim: usize,
    flags: OfflineFlags,
) -> Result<Providers, ConfigError> {
    let embedder: Arc<dyn lessonplan_core::embedding::Embedder> = if flags.offline_embedder {
        if offline_dim == 0 {
            return Err(ConfigError::Provider(ProviderError::InvalidConfig(
                "offline_embedder_dim must be positive".into(),
            )));
        }
        Arc::new(OfflineEmbedder { dim: offline_dim })
    } else {
        let cfg = embedding.ok_or(ConfigError::MissingProvider("embedding"))?;
        Arc::new(HttpEmbedder::new(cfg.clone())?)
    };
    let llm: Arc<dyn lessonplan_core::provider::TextGenerator> = if flags.mock_llm {
        Arc::new(MockLlm::new())
    } else {
        let cfg = llm.ok_or(ConfigError::MissingProvider("llm"))?;
        Arc::new(HttpTextGenerator::new(cfg.clone())?)
    };
    Ok(Providers { embedder, llm })
}
