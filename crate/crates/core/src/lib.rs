//! Care-call orchestration engine: a primary conversational agent whose
//! prompt is rebuilt each turn from the outputs of concurrently evaluated
//! specialist agents (privacy, checklist, medication, labs, nutrition,
//! policy, intervention, summary).
//!
//! Every specialist ships with a deterministic rule backend, so complete
//! calls can be simulated and replayed without a language model.

pub mod agent;
pub mod checklist;
pub mod config;
pub mod error;
pub mod harness;
pub mod intervention;
pub mod labs;
pub mod medication;
pub mod model;
pub mod nutrition;
pub mod orchestrator;
pub mod policy;
pub mod primary;
pub mod privacy;
pub mod prompt;
pub mod service;
pub mod state;
pub mod summary;
pub mod tasks;
pub mod text;
pub mod transcript;

pub use error::{BackendError, ConfigError, ModelError, StepError};
