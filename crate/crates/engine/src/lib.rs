//! Storage, ingest service, HTTP API and simulation driver around `srl-core`.

pub mod config;
pub mod engine;
pub mod formats;
pub mod http;
pub mod journal;
pub mod sim;
pub mod store;

pub use engine::{Engine, EngineError, EngineOptions, IngestAck, IngestBatch, Rejection};
