//! Per-clinic daily capacity predictions and what-if scenarios.
//!
//! The regression model is trained on unit-level rows. A clinic is predicted
//! by feeding the model a row built from that clinic alone (its own factors
//! and hours, `n = 1`) together with its unit's day context. In calibrated
//! mode the clinic predictions of a day are scaled so that they add up to the
//! model's prediction for the whole unit, which is what makes editing one
//! clinic move the others.
//!
//! Every emitted value is clamped at zero and rounded half-up to hundredths.
//! Values are held as integer hundredths ([`Capacity`]) so that effect
//! arithmetic is exact.

mod whatif;

use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dataset::{unit_series, DatasetError};
use crate::features::{
    assemble_row, unit_group, FeatureError, FeatureSchema, RescaledGroup, UnitDayContext,
};
use crate::ingest::{AggregatedDataset, ClinicRecord, UnitKind};
use crate::regress::{RegressError, RegressionModel};

pub use whatif::{run_whatif, ClinicEdit, Effect, EffectSummary, ScheduleEdit, WhatIfResult, WhatIfScenario};

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("clinic `{clinic_id}` does not belong to {kind} `{unit_id}`")]
    ForeignClinic {
        clinic_id: String,
        kind: UnitKind,
        unit_id: String,
    },
    #[error("clinic `{0}` is edited more than once")]
    DuplicateEdit(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("empty date range {0}..={1}")]
    EmptyRange(NaiveDate, NaiveDate),
    #[error("no prediction for {0}")]
    MissingDay(NaiveDate),
    #[error("model was trained on {model} units, request is for {requested} units")]
    UnitKindMismatch { model: UnitKind, requested: UnitKind },
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Tests per day in integer hundredths. Serialized as a decimal number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Capacity(pub i64);

impl Capacity {
    pub const ZERO: Capacity = Capacity(0);

    /// Clamp a raw model output at zero and round half-up to hundredths.
    pub fn from_raw(raw: f64) -> Capacity {
        if raw.is_nan() || raw <= 0.0 {
            return Capacity::ZERO;
        }
        // the nudge keeps decimal halves such as 41.235 (stored just below) rounding up
        Capacity((raw * 100.0 + 0.5 + 1e-9).floor() as i64)
    }

    pub fn hundredths(self) -> i64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl std::ops::Add for Capacity {
    type Output = Capacity;
    fn add(self, rhs: Capacity) -> Capacity {
        Capacity(self.0 + rhs.0)
    }
}

impl std::ops::Sub for Capacity {
    type Output = Capacity;
    fn sub(self, rhs: Capacity) -> Capacity {
        Capacity(self.0 - rhs.0)
    }
}

impl std::iter::Sum for Capacity {
    fn sum<I: Iterator<Item = Capacity>>(iter: I) -> Capacity {
        Capacity(iter.map(|c| c.0).sum())
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = f64::deserialize(deserializer)?;
        Ok(Capacity((value * 100.0).round() as i64))
    }
}

/// `numerator / denominator` rounded half-up, for non-negative numerator and
/// positive denominator.
fn div_half_up(numerator: i128, denominator: i128) -> i64 {
    ((2 * numerator + denominator) / (2 * denominator)) as i64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicPrediction {
    pub clinic_id: String,
    pub date: NaiveDate,
    pub y_clinic: Capacity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayPrediction {
    pub date: NaiveDate,
    pub clinics: Vec<ClinicPrediction>,
    /// Sum of the clinic predictions.
    pub unit_total: Capacity,
    /// Model output for the whole unit on this day, clamped and rounded.
    pub unit_prediction: Capacity,
    /// Released tests of the unit on this day.
    pub ground_truth: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub unit_kind: UnitKind,
    pub unit_id: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub calibrated: bool,
    pub days: Vec<DayPrediction>,
}

impl PredictionSet {
    pub fn predictions(&self) -> impl Iterator<Item = &ClinicPrediction> {
        self.days.iter().flat_map(|d| d.clinics.iter())
    }

    pub fn for_clinic(&self, clinic_id: &str) -> Vec<ClinicPrediction> {
        self.predictions()
            .filter(|p| p.clinic_id == clinic_id)
            .cloned()
            .collect()
    }

    /// `date,clinic_id,y_clinic` rows, days ascending, clinics in unit order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date,clinic_id,y_clinic\n");
        for p in self.predictions() {
            out.push_str(&format!("{},{},{}\n", p.date, p.clinic_id, p.y_clinic));
        }
        out
    }
}

/// Predict one clinic on one day from its unit's day context.
pub fn predict_clinic_day(
    model: &RegressionModel,
    clinic: &ClinicRecord,
    date: NaiveDate,
    context: &UnitDayContext,
) -> Result<ClinicPrediction, ForecastError> {
    let projection = projection(model)?;
    let group = unit_group(&[clinic], UnitKind::Postcode)?;
    Ok(ClinicPrediction {
        clinic_id: clinic.clinic_id.clone(),
        date,
        y_clinic: Capacity::from_raw(predict_group(model, &projection, context, &group)),
    })
}

fn projection(model: &RegressionModel) -> Result<Vec<usize>, ForecastError> {
    let full = FeatureSchema::full(model.meta.feature_config.trailing_window);
    full.projection(&model.schema).map_err(|_| {
        ForecastError::Regress(RegressError::SchemaMismatch {
            expected: model.schema_hash.clone(),
            found: full.hash(),
        })
    })
}

fn predict_group(
    model: &RegressionModel,
    projection: &[usize],
    context: &UnitDayContext,
    group: &RescaledGroup,
) -> f64 {
    let full = assemble_row(context, group);
    let row: Vec<f64> = projection.iter().map(|&i| full[i]).collect();
    model.predict_row(&row)
}

/// Scale clinic values so they sum to `target`, rounding each half-up.
/// A day whose clinic values are all zero stays at zero.
pub fn calibrate(values: &[Capacity], target: Capacity) -> Vec<Capacity> {
    let total: i128 = values.iter().map(|v| i128::from(v.0)).sum();
    if total == 0 {
        return vec![Capacity::ZERO; values.len()];
    }
    values
        .iter()
        .map(|v| Capacity(div_half_up(i128::from(v.0) * i128::from(target.0), total)))
        .collect()
}

/// Applies one fitted model to the units of one dataset.
#[derive(Debug, Clone, Copy)]
pub struct Forecaster<'a> {
    pub model: &'a RegressionModel,
    pub dataset: &'a AggregatedDataset,
    pub kind: UnitKind,
}

impl<'a> Forecaster<'a> {
    /// Uses the unit kind the model was trained on, or LGA.
    pub fn new(model: &'a RegressionModel, dataset: &'a AggregatedDataset) -> Self {
        Forecaster {
            model,
            dataset,
            kind: model.meta.unit_kind.unwrap_or(UnitKind::Lga),
        }
    }

    pub fn with_kind(
        model: &'a RegressionModel,
        dataset: &'a AggregatedDataset,
        kind: UnitKind,
    ) -> Result<Self, ForecastError> {
        if let Some(trained) = model.meta.unit_kind {
            if trained != kind {
                return Err(ForecastError::UnitKindMismatch {
                    model: trained,
                    requested: kind,
                });
            }
        }
        Ok(Forecaster { model, dataset, kind })
    }

    /// Stored clinic records of a unit, cloned, in dataset order.
    pub fn unit_clinics(&self, unit_id: &str) -> Result<Vec<ClinicRecord>, ForecastError> {
        let clinics: Vec<ClinicRecord> =
            self.dataset.clinics_in(self.kind, unit_id).into_iter().cloned().collect();
        if clinics.is_empty() {
            unit_series(self.dataset, self.kind, unit_id)?;
            return Err(DatasetError::NoClinics {
                kind: self.kind,
                id: unit_id.to_string(),
            }
            .into());
        }
        Ok(clinics)
    }

    /// Per-clinic predictions for the unit's stored clinics.
    pub fn predict_breakdown(
        &self,
        unit_id: &str,
        from: NaiveDate,
        to: NaiveDate,
        calibrate: bool,
    ) -> Result<PredictionSet, ForecastError> {
        let clinics = self.unit_clinics(unit_id)?;
        self.breakdown_for(unit_id, &clinics, from, to, calibrate)
    }

    /// Per-clinic predictions for an explicit set of clinic records standing
    /// for the unit (stored or edited).
    pub fn breakdown_for(
        &self,
        unit_id: &str,
        clinics: &[ClinicRecord],
        from: NaiveDate,
        to: NaiveDate,
        calibrated: bool,
    ) -> Result<PredictionSet, ForecastError> {
        if from > to {
            return Err(ForecastError::EmptyRange(from, to));
        }
        let projection = projection(self.model)?;
        let config = self.model.meta.feature_config;
        let series = unit_series(self.dataset, self.kind, unit_id)?;
        let density = self.dataset.demographics_for(unit_id).map_or(0.0, |d| d.density);
        let refs: Vec<&ClinicRecord> = clinics.iter().collect();
        let unit = unit_group(&refs, self.kind)?;
        let singles: Vec<RescaledGroup> = clinics
            .iter()
            .map(|c| unit_group(&[c], UnitKind::Postcode))
            .collect::<Result<_, _>>()?;

        let mut days = Vec::new();
        for date in from.iter_days().take_while(|d| *d <= to) {
            let context = UnitDayContext::from_series(
                self.dataset,
                &config,
                series,
                density,
                clinics.len(),
                date,
            )?;
            let unit_prediction =
                Capacity::from_raw(predict_group(self.model, &projection, &context, &unit));
            let raw: Vec<Capacity> = singles
                .iter()
                .map(|g| Capacity::from_raw(predict_group(self.model, &projection, &context, g)))
                .collect();
            let values = if calibrated {
                calibrate(&raw, unit_prediction)
            } else {
                raw
            };
            let ground_truth = series
                .binary_search_by_key(&date, |r| r.date)
                .map(|i| series[i].tests)
                .unwrap_or(0);
            days.push(DayPrediction {
                date,
                unit_total: values.iter().copied().sum(),
                clinics: clinics
                    .iter()
                    .zip(values)
                    .map(|(c, y_clinic)| ClinicPrediction {
                        clinic_id: c.clinic_id.clone(),
                        date,
                        y_clinic,
                    })
                    .collect(),
                unit_prediction,
                ground_truth,
            });
        }
        Ok(PredictionSet {
            unit_kind: self.kind,
            unit_id: unit_id.to_string(),
            from,
            to,
            calibrated,
            days,
        })
    }
}

/// Average daily capacity of one clinic over `from..=to`: the sum of its
/// predictions divided by the inclusive day count, rounded half-up.
pub fn average_capacity(
    predictions: &[ClinicPrediction],
    from: NaiveDate,
    to: NaiveDate,
) -> Result<Capacity, ForecastError> {
    if from > to {
        return Err(ForecastError::EmptyRange(from, to));
    }
    let mut total: i128 = 0;
    let mut days: i128 = 0;
    for date in from.iter_days().take_while(|d| *d <= to) {
        let p = predictions
            .iter()
            .find(|p| p.date == date)
            .ok_or(ForecastError::MissingDay(date))?;
        total += i128::from(p.y_clinic.0);
        days += 1;
    }
    Ok(Capacity(div_half_up(total, days)))
}
