//! Modelling, forecasting and what-if analysis of per-clinic daily testing
//! capacity from region-level test and case counts.
//!
//! The pipeline runs in one direction:
//!
//! 1. [`ingest`] parses the raw CSV inputs, drops self-reported counts and
//!    assembles an [`ingest::AggregatedDataset`] (or synthesises one with a
//!    known per-clinic ground truth).
//! 2. [`dataset`] persists that dataset as a checksummed snapshot and answers
//!    range queries against it.
//! 3. [`features`] turns unit-days into feature rows, folding every clinic of a
//!    unit into one summed binary-factor vector so that the unit's released
//!    total can act as the regression target.
//! 4. [`regress`] fits linear, tree, forest and boosted models and compares them.
//! 5. [`forecast`] applies a fitted model per clinic, optionally calibrates the
//!    clinic shares to the unit-level prediction, and runs what-if edits.
//! 6. [`analytics`] derives the map-lens, heatmap and storage-sequence values.

pub mod analytics;
pub mod dataset;
pub mod features;
pub mod forecast;
pub mod ingest;
pub mod regress;
