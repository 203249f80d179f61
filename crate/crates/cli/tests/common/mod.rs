#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use lessonplan_cli::{cmd_batch, cmd_ingest, BatchManifest, BatchProtocolConfig, IngestArgs, IngestConfig};
use lessonplan_core::embedding::OfflineEmbedder;
use lessonplan_core::generation::mock::MockLlm;
use lessonplan_core::generation::{GenerationConfig, PromptTemplate, Providers};

pub fn ingest_config() -> IngestConfig {
    IngestConfig {
        chunk_size: lessonplan_fixtures::CHUNK_SIZE,
        overlap: lessonplan_fixtures::CHUNK_OVERLAP,
    }
}

pub fn generation_config() -> GenerationConfig {
    GenerationConfig {
        min_sim: 0.15,
        ..Default::default()
    }
}

pub fn mock_providers() -> Providers {
    Providers {
        embedder: Arc::new(OfflineEmbedder::default()),
        llm: Arc::new(MockLlm::new()),
    }
}

/// Write the fixture corpus under `root/corpus` and ingest every subject
/// into `root/stores/{subject}`. Returns the store root.
pub async fn ingest_fixtures(root: &Path) -> PathBuf {
    let written = lessonplan_fixtures::write_corpus(&root.join("corpus")).unwrap();
    let stores = root.join("stores");
    let embedder = OfflineEmbedder::default();
    for w in &written {
        cmd_ingest(
            IngestArgs {
                corpus: &w.corpus_path,
                toc: &w.toc_path,
                subject: w.subject,
                level: w.level,
                edition: w.edition,
                out_dir: &stores.join(w.subject),
                force: false,
                config: &ingest_config(),
            },
            &embedder,
        )
        .await
        .unwrap();
    }
    stores
}

pub async fn run_batch(stores: &Path, out: &Path, parallel: usize) -> BatchManifest {
    cmd_batch(
        &BatchProtocolConfig::default(),
        &generation_config(),
        stores,
        &mock_providers(),
        &PromptTemplate::default(),
        out,
        parallel,
    )
    .await
    .unwrap()
}
