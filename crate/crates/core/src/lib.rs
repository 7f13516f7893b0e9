//! Hierarchical scene representation: instance masks split into geometric
//! part segments, per-node fused embeddings, open-vocabulary queries and
//! evaluation.

pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geoseg;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod query;
pub mod spatial;
pub mod synthkit;
pub mod views;

pub use config::{PipelineConfig, ScoreMode};
pub use error::{Error, Result};
