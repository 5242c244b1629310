//! HTTP API and command line over the capacity engine.
//!
//! [`engine::Engine`] owns one loaded snapshot and its models and answers
//! every query; [`api`] and [`cli`] are thin transports over it.

pub mod api;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod sequences;

pub use api::{router, AppState};
pub use config::AppConfig;
pub use engine::{Engine, Settings};
pub use error::{ErrorKind, ServiceError};
pub use sequences::SequenceStore;
