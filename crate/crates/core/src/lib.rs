pub mod corpus;
pub mod embedding;
pub mod provider;
pub mod store;
pub mod plan;
pub mod generation;
pub mod ingest;
pub mod lpap;
