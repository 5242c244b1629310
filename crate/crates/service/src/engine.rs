//! Request-independent logic shared by the HTTP handlers and the CLI.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use capacity_core::analytics::{
    heatmap_values, lens_frame, positive_rate, rank_sequence, LensFrame, LensParams,
    StorageSequence,
};
use capacity_core::dataset::{query_series, read_snapshot, relation_kind, DatasetError, RelationKind, Snapshot};
use capacity_core::features::{build_training_set, intervention_level, FeatureConfig, FeatureSchema};
use capacity_core::forecast::{run_whatif, Capacity, ClinicEdit, Forecaster, PredictionSet, WhatIfResult, WhatIfScenario};
use capacity_core::ingest::{AggregatedDataset, ClinicRecord, Direction, Period, UnitKind};
use capacity_core::regress::{compare_models, ComparisonTable, FeatureWeight, ModelKind, RegressionModel};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::config::AppConfig;
use crate::error::ServiceError;

/// Defaults applied when a request leaves a value out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub unit_kind: UnitKind,
    pub lens: LensParams,
    pub calibrate: bool,
    pub seed: u64,
    pub trailing_window: usize,
    pub train_fraction: f64,
    pub default_model: Option<ModelKind>,
}

impl Settings {
    pub fn from_config(config: &AppConfig) -> Result<Self, ServiceError> {
        let default_model = config
            .default_model
            .as_deref()
            .map(parse_model_kind)
            .transpose()?;
        Ok(Settings {
            unit_kind: config.unit_kind,
            lens: config.lens,
            calibrate: config.calibrate,
            seed: config.seed,
            trailing_window: config.trailing_window,
            train_fraction: config.train_fraction,
            default_model,
        })
    }
}

impl Default for Settings {
    fn default() -> Self {
        Settings::from_config(&AppConfig::default()).expect("default config is valid")
    }
}

pub fn parse_model_kind(text: &str) -> Result<ModelKind, ServiceError> {
    text.parse().map_err(|e: capacity_core::regress::RegressError| ServiceError::bad_request(e.to_string()))
}

pub fn parse_unit_kind(text: &str) -> Result<UnitKind, ServiceError> {
    text.parse().map_err(ServiceError::bad_request)
}

#[derive(Debug)]
struct LoadedModel {
    model: RegressionModel,
    // why the model cannot serve this snapshot, if it cannot
    conflict: Option<String>,
}

/// One immutable snapshot plus the models that serve it.
#[derive(Debug)]
pub struct Engine {
    dataset: AggregatedDataset,
    checksum: String,
    created_at: String,
    schema_version: u32,
    models: Vec<LoadedModel>,
    settings: Settings,
    comparisons: Mutex<BTreeMap<UnitKind, Arc<ComparisonTable>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub kind: ModelKind,
    pub unit_kind: Option<UnitKind>,
    pub schema_hash: String,
    pub n_features: usize,
    pub trailing_window: usize,
    pub seed: u64,
    pub rows: usize,
    pub train_from: Option<NaiveDate>,
    pub train_to: Option<NaiveDate>,
    pub compatible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conflict: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Meta {
    pub schema_version: u32,
    pub created_at: String,
    pub period: Period,
    pub unit_counts: BTreeMap<UnitKind, usize>,
    pub clinics: usize,
    pub snapshot_schema_hash: String,
    pub default_model: Option<ModelKind>,
    pub models: Vec<ModelInfo>,
    pub settings: Settings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnitInfo {
    pub unit_id: String,
    pub n_clinics: usize,
    /// Absent for display-only units.
    pub relation: Option<RelationKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesDay {
    pub date: NaiveDate,
    pub tests: u64,
    pub cases: u64,
    pub imputed: bool,
    pub positive_rate: f64,
    pub rate_undefined: bool,
    pub rate_anomalous: bool,
    pub level: u8,
    pub directions: Vec<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub unit_kind: UnitKind,
    pub unit_id: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub days: Vec<SeriesDay>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Heatmap {
    pub model: ModelKind,
    pub unit_kind: UnitKind,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub values: BTreeMap<String, Capacity>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Importance {
    pub model: ModelKind,
    pub schema_hash: String,
    pub weights: Vec<FeatureWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub unit_kind: UnitKind,
    pub train_fraction: f64,
    pub seed: u64,
    pub table: ComparisonTable,
    pub csv: String,
}

/// Body of a prediction request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    pub unit_kind: Option<UnitKind>,
    pub unit_id: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    #[serde(default)]
    pub calibrate: Option<bool>,
    #[serde(default)]
    pub model: Option<String>,
}

/// Body of a what-if request; a scenario plus an optional model choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    #[serde(default)]
    pub unit_kind: Option<UnitKind>,
    pub unit_id: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    #[serde(default)]
    pub calibrate: Option<bool>,
    #[serde(default)]
    pub edits: Vec<ClinicEdit>,
    #[serde(default)]
    pub model: Option<String>,
}

/// Body of a sequence save request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceRequest {
    #[serde(default)]
    pub unit_kind: Option<UnitKind>,
    pub units: Vec<String>,
    #[serde(default)]
    pub from: Option<NaiveDate>,
    #[serde(default)]
    pub to: Option<NaiveDate>,
}

impl Engine {
    pub fn new(snapshot: Snapshot, models: Vec<RegressionModel>, settings: Settings) -> Result<Self, ServiceError> {
        let served = FeatureSchema::full(settings.trailing_window);
        let mut loaded: Vec<LoadedModel> = Vec::new();
        for model in models {
            if loaded.iter().any(|m| m.model.kind == model.kind) {
                return Err(ServiceError::bad_request(format!("more than one {} model loaded", model.kind)));
            }
            let conflict = served.projection(&model.schema).err().map(|e| {
                format!(
                    "model schema {} does not fit snapshot schema {}: {e}",
                    model.schema_hash,
                    served.hash()
                )
            });
            loaded.push(LoadedModel { model, conflict });
        }
        if let Some(kind) = settings.default_model {
            if !loaded.iter().any(|m| m.model.kind == kind) {
                return Err(ServiceError::bad_request(format!("default model {kind} is not loaded")));
            }
        }
        Ok(Engine {
            dataset: snapshot.dataset,
            checksum: snapshot.checksum,
            created_at: snapshot.created_at,
            schema_version: snapshot.schema_version,
            models: loaded,
            settings,
            comparisons: Mutex::new(BTreeMap::new()),
        })
    }

    /// Load the snapshot and models named in `config`.
    pub fn load(config: &AppConfig) -> Result<Self, ServiceError> {
        let path = config
            .snapshot
            .as_ref()
            .ok_or_else(|| ServiceError::bad_request("no snapshot configured"))?;
        let snapshot = read_snapshot(path).map_err(|e| with_path(path, e.into()))?;
        let models = config
            .model_paths()
            .iter()
            .map(|p| RegressionModel::load(p).map_err(|e| with_path(p, e.into())))
            .collect::<Result<Vec<_>, _>>()?;
        Engine::new(snapshot, models, Settings::from_config(config)?)
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn dataset(&self) -> &AggregatedDataset {
        &self.dataset
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    /// Resolve a model by name, or the default one. Fails with 409 when the
    /// model's feature layout does not fit the snapshot.
    pub fn model(&self, name: Option<&str>) -> Result<&RegressionModel, ServiceError> {
        let wanted = name.map(parse_model_kind).transpose()?;
        let found = match wanted.or(self.settings.default_model) {
            Some(kind) => self
                .models
                .iter()
                .find(|m| m.model.kind == kind)
                .ok_or_else(|| ServiceError::not_found(format!("model {kind} is not loaded")))?,
            None => self
                .models
                .first()
                .ok_or_else(|| ServiceError::not_found("no model is loaded"))?,
        };
        match &found.conflict {
            Some(reason) => Err(ServiceError::conflict(reason.clone())),
            None => Ok(&found.model),
        }
    }

    fn forecaster<'a>(
        &'a self,
        model: &'a RegressionModel,
        kind: Option<UnitKind>,
    ) -> Result<Forecaster<'a>, ServiceError> {
        let kind = kind.or(model.meta.unit_kind).unwrap_or(self.settings.unit_kind);
        Ok(Forecaster::with_kind(model, &self.dataset, kind)?)
    }

    fn range(&self, from: Option<NaiveDate>, to: Option<NaiveDate>) -> (NaiveDate, NaiveDate) {
        (
            from.unwrap_or(self.dataset.period.first),
            to.unwrap_or(self.dataset.period.last),
        )
    }

    pub fn meta(&self) -> Meta {
        let unit_counts = [UnitKind::Lga, UnitKind::Postcode]
            .into_iter()
            .map(|k| (k, self.dataset.all_units(k).len()))
            .collect();
        let models = self
            .models
            .iter()
            .map(|m| ModelInfo {
                kind: m.model.kind,
                unit_kind: m.model.meta.unit_kind,
                schema_hash: m.model.schema_hash.clone(),
                n_features: m.model.schema.len(),
                trailing_window: m.model.meta.feature_config.trailing_window,
                seed: m.model.meta.seed,
                rows: m.model.meta.rows,
                train_from: m.model.meta.train_from,
                train_to: m.model.meta.train_to,
                compatible: m.conflict.is_none(),
                conflict: m.conflict.clone(),
            })
            .collect();
        Meta {
            schema_version: self.schema_version,
            created_at: self.created_at.clone(),
            period: self.dataset.period,
            unit_counts,
            clinics: self.dataset.clinics.len(),
            snapshot_schema_hash: FeatureSchema::full(self.settings.trailing_window).hash(),
            default_model: self
                .settings
                .default_model
                .or_else(|| self.models.first().map(|m| m.model.kind)),
            models,
            settings: self.settings.clone(),
        }
    }

    pub fn units(&self, kind: Option<UnitKind>) -> Result<Vec<UnitInfo>, ServiceError> {
        let kind = kind.unwrap_or(self.settings.unit_kind);
        self.dataset
            .all_units(kind)
            .into_iter()
            .map(|unit_id| {
                let (relation, n_clinics) = match relation_kind(&self.dataset, kind, &unit_id) {
                    Ok((relation, n)) => (Some(relation), n),
                    Err(DatasetError::NoClinics { .. }) => (None, 0),
                    Err(e) => return Err(e.into()),
                };
                Ok(UnitInfo {
                    unit_id,
                    n_clinics,
                    relation,
                })
            })
            .collect()
    }

    /// Stored clinics of a unit; empty for a display-only unit.
    pub fn unit_clinics(&self, kind: Option<UnitKind>, unit_id: &str) -> Result<Vec<ClinicRecord>, ServiceError> {
        let kind = kind.unwrap_or(self.settings.unit_kind);
        match relation_kind(&self.dataset, kind, unit_id) {
            Ok(_) | Err(DatasetError::NoClinics { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        Ok(self.dataset.clinics_in(kind, unit_id).into_iter().cloned().collect())
    }

    pub fn series(
        &self,
        kind: Option<UnitKind>,
        unit_id: &str,
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
    ) -> Result<Series, ServiceError> {
        let kind = kind.unwrap_or(self.settings.unit_kind);
        let (from, to) = self.range(from, to);
        let rows = query_series(&self.dataset, kind, unit_id, from, to)?;
        let mut days = Vec::with_capacity(rows.len());
        for row in rows {
            let rate = positive_rate(row.tests as i64, row.cases as i64)?;
            let active = intervention_level(row.date, &self.dataset.interventions);
            days.push(SeriesDay {
                date: row.date,
                tests: row.tests,
                cases: row.cases,
                imputed: row.imputed,
                positive_rate: (rate.rate * 1e4).round() / 1e4,
                rate_undefined: rate.undefined,
                rate_anomalous: rate.anomalous,
                level: active.level,
                directions: active.directions,
            });
        }
        Ok(Series {
            unit_kind: kind,
            unit_id: unit_id.to_string(),
            from,
            to,
            days,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn lens(
        &self,
        kind: Option<UnitKind>,
        selection: &[String],
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
        a: Option<f64>,
        b: Option<f64>,
        heat_model: Option<Option<&str>>,
    ) -> Result<LensFrame, ServiceError> {
        let kind = kind.unwrap_or(self.settings.unit_kind);
        let (from, to) = self.range(from, to);
        let params = LensParams {
            a: a.unwrap_or(self.settings.lens.a),
            b: b.unwrap_or(self.settings.lens.b),
        };
        let model = heat_model.map(|name| self.model(name)).transpose()?;
        Ok(lens_frame(&self.dataset, kind, selection, from, to, params, model)?)
    }

    /// Average calibrated clinic capacity; `units = None` covers every
    /// modelled unit.
    pub fn heatmap(
        &self,
        kind: Option<UnitKind>,
        units: Option<&[String]>,
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
        model: Option<&str>,
    ) -> Result<Heatmap, ServiceError> {
        let model = self.model(model)?;
        let forecaster = self.forecaster(model, kind)?;
        let (from, to) = self.range(from, to);
        let all;
        let units = match units {
            Some(units) => units,
            None => {
                all = self.dataset.units_with_clinics(forecaster.kind);
                &all
            }
        };
        let values = heatmap_values(&forecaster, units, from, to)?;
        Ok(Heatmap {
            model: model.kind,
            unit_kind: forecaster.kind,
            from,
            to,
            values,
        })
    }

    pub fn importance(&self, model: Option<&str>) -> Result<Importance, ServiceError> {
        let model = self.model(model)?;
        Ok(Importance {
            model: model.kind,
            schema_hash: model.schema_hash.clone(),
            weights: model.feature_importance(),
        })
    }

    /// Chronological comparison of the four model families over the whole
    /// snapshot, computed once per unit kind.
    pub fn compare(&self, kind: Option<UnitKind>) -> Result<Comparison, ServiceError> {
        let kind = kind.unwrap_or(self.settings.unit_kind);
        let cached = self.comparisons.lock().expect("comparison cache poisoned").get(&kind).cloned();
        let table = match cached {
            Some(table) => table,
            None => {
                let table = Arc::new(self.compare_with(kind, self.settings.train_fraction)?);
                self.comparisons
                    .lock()
                    .expect("comparison cache poisoned")
                    .insert(kind, table.clone());
                table
            }
        };
        Ok(Comparison {
            unit_kind: kind,
            train_fraction: self.settings.train_fraction,
            seed: self.settings.seed,
            csv: table.to_csv(),
            table: (*table).clone(),
        })
    }

    /// Uncached comparison with an explicit training fraction.
    pub fn compare_with(&self, kind: UnitKind, fraction: f64) -> Result<ComparisonTable, ServiceError> {
        let config = FeatureConfig {
            trailing_window: self.settings.trailing_window,
            ..FeatureConfig::default()
        };
        let period = self.dataset.period;
        let matrix = build_training_set(&self.dataset, &config, kind, period.first, period.last)?;
        Ok(compare_models(&matrix, fraction, self.settings.seed)?)
    }

    pub fn predict(&self, request: &PredictRequest) -> Result<PredictionSet, ServiceError> {
        let model = self.model(request.model.as_deref())?;
        let forecaster = self.forecaster(model, request.unit_kind)?;
        let calibrate = request.calibrate.unwrap_or(self.settings.calibrate);
        Ok(forecaster.predict_breakdown(&request.unit_id, request.from, request.to, calibrate)?)
    }

    pub fn whatif(&self, request: &WhatIfRequest) -> Result<WhatIfResult, ServiceError> {
        let model = self.model(request.model.as_deref())?;
        let forecaster = self.forecaster(model, request.unit_kind)?;
        let scenario = WhatIfScenario {
            unit_kind: forecaster.kind,
            unit_id: request.unit_id.clone(),
            from: request.from,
            to: request.to,
            calibrate: request.calibrate.unwrap_or(self.settings.calibrate),
            edits: request.edits.clone(),
        };
        Ok(run_whatif(&forecaster, &scenario)?)
    }

    pub fn rank(&self, request: &SequenceRequest, sequence_number: u64) -> Result<StorageSequence, ServiceError> {
        let kind = request.unit_kind.unwrap_or(self.settings.unit_kind);
        let (from, to) = self.range(request.from, request.to);
        Ok(rank_sequence(&self.dataset, kind, &request.units, from, to, sequence_number)?)
    }
}

fn with_path(path: &std::path::Path, e: ServiceError) -> ServiceError {
    ServiceError::new(e.kind, format!("{}: {}", path.display(), e.message))
}

