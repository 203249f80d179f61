//! Textbook to vector store: chunk, embed, assemble.

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::corpus::{chunk_document, CorpusError, TextbookDocument};
use crate::embedding::Embedder;
use crate::provider::ProviderError;
use crate::store::{build_store, IngestMeta, StoreError, VectorStore};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("embedding failed: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub async fn ingest_document(
    doc: &TextbookDocument,
    chunk_size: usize,
    overlap: usize,
    embedder: &dyn Embedder,
    created_at: DateTime<Utc>,
) -> Result<VectorStore, IngestError> {
    let chunks = chunk_document(doc, chunk_size, overlap)?;
    let texts: Vec<String> = chunks.iter().map(|c| c.text.clone()).collect();
    let vectors = embedder.embed_texts(&texts).await?;
    let meta = IngestMeta {
        level: doc.level,
        edition: doc.edition,
        chunk_size,
        overlap,
        embedder_id: embedder.id(),
        created_at,
    };
    Ok(build_store(&doc.subject, chunks, vectors, meta)?)
}
