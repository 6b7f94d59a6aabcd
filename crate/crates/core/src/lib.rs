pub mod bench;
pub mod config;
pub mod embedding;
pub mod error;
pub mod field;
pub mod ingest;
pub mod multi_agent;
pub mod persistence;
pub mod retrieval;
pub mod sparse;
pub mod store;

pub use error::{Error, Result};
