//! `capacity.toml`: every key is optional.
//!
//! ```toml
//! snapshot = "data/snapshot.json"
//! models = ["models/forest.json", "models/gbt.json"]
//! default_model = "forest"
//! listen = "127.0.0.1:8080"
//! unit_kind = "lga"
//! calibrate = true
//! seed = 7
//! trailing_window = 7
//! train_fraction = 0.8
//! sequences = "sequences.jsonl"
//!
//! [lens]
//! a = 2.0
//! b = 100.0
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use capacity_core::analytics::LensParams;
use capacity_core::ingest::UnitKind;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub snapshot: Option<PathBuf>,
    /// Shorthand for a single entry in `models`.
    pub model: Option<PathBuf>,
    pub models: Vec<PathBuf>,
    /// Model family used when a request names none.
    pub default_model: Option<String>,
    pub listen: String,
    pub unit_kind: UnitKind,
    pub lens: LensParams,
    pub calibrate: bool,
    pub seed: u64,
    pub trailing_window: usize,
    pub train_fraction: f64,
    pub sequences: Option<PathBuf>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            snapshot: None,
            model: None,
            models: Vec::new(),
            default_model: None,
            listen: "127.0.0.1:8080".into(),
            unit_kind: UnitKind::Lga,
            lens: LensParams::default(),
            calibrate: true,
            seed: 7,
            trailing_window: 7,
            train_fraction: 0.8,
            sequences: None,
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self, ServiceError> {
        let config: AppConfig =
            toml::from_str(text).map_err(|e| ServiceError::bad_request(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::bad_request(format!("config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.lens.validate()?;
        if self.trailing_window == 0 {
            return Err(ServiceError::bad_request("trailing_window must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(ServiceError::bad_request("train_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.snapshot.as_mut() {
            join(p);
        }
        if let Some(p) = self.model.as_mut() {
            join(p);
        }
        self.models.iter_mut().for_each(join);
        if let Some(p) = self.sequences.as_mut() {
            join(p);
        }
    }

    /// `model` followed by `models`.
    pub fn model_paths(&self) -> Vec<PathBuf> {
        self.model.iter().chain(&self.models).cloned().collect()
    }
}
