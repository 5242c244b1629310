//! Feature rows for unit-days and single clinics.
//!
//! Every row has the same layout, described by [`FeatureSchema::full`]:
//!
//! * numeric features: population density, trailing-window means of released
//!   tests and cases, the previous day's tests, business and break hours per
//!   weekday, business and break hours of the row's own weekday, the number of
//!   clinics at the location and the day index;
//! * scaled features: day of week (1-7), season (1-4), intervention level (0-3);
//! * binary factor sums: the six service factors summed over the clinics that
//!   the row stands for, followed by that clinic count `n`.
//!
//! A unit row folds all of the unit's clinics together (sums of factors and of
//! hours) so that the unit's released total is a valid target. A clinic row
//! uses the clinic's own factors and hours with `n = 1`, while the trailing
//! numerics and the location clinic count stay those of its unit.

mod calendar;
mod schedule;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{unit_series, DatasetError};
use crate::ingest::{AggregatedDataset, ClinicRecord, UnitKind, FACTOR_NAMES};

pub use calendar::{day_scalars, intervention_level, ActiveInterventions, Hemisphere};
pub use schedule::{encode_grid, encode_schedule};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("malformed schedule: {0}")]
    Shape(String),
    #[error("cannot rescale an empty clinic group")]
    EmptyGroup,
    #[error("clinic group mixes units `{0}` and `{1}`")]
    MixedUnits(String, String),
    #[error("empty date range {0}..={1}")]
    EmptyRange(NaiveDate, NaiveDate),
    #[error("date {date} outside the dataset period {period}")]
    OutOfPeriod { date: NaiveDate, period: String },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid training matrix: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

const WEEKDAYS: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Scalar,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub units: String,
}

/// Ordered column layout of feature rows.
///
/// Serialized as a JSON array of `{name, kind, units}` objects; position in
/// the array is the column index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureSchema {
    pub features: Vec<FeatureSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    #[default]
    All,
    Preset,
}

impl FeatureSchema {
    /// The complete layout for a given trailing window length.
    pub fn full(trailing_window: usize) -> Self {
        let mut features = Vec::new();
        let mut push = |name: String, kind, units: &str| {
            features.push(FeatureSpec {
                name,
                kind,
                units: units.to_string(),
            })
        };
        push("population_density".into(), FeatureKind::Numeric, "persons/km2");
        push(format!("tests_trailing_mean_{trailing_window}d"), FeatureKind::Numeric, "tests/day");
        push(format!("cases_trailing_mean_{trailing_window}d"), FeatureKind::Numeric, "cases/day");
        push("tests_previous_day".into(), FeatureKind::Numeric, "tests");
        for day in WEEKDAYS {
            push(format!("business_hours_{day}"), FeatureKind::Numeric, "hours");
        }
        for day in WEEKDAYS {
            push(format!("break_hours_{day}"), FeatureKind::Numeric, "hours");
        }
        push("business_hours_today".into(), FeatureKind::Numeric, "hours");
        push("break_hours_today".into(), FeatureKind::Numeric, "hours");
        push("clinic_count".into(), FeatureKind::Numeric, "clinics");
        push("day_index".into(), FeatureKind::Numeric, "days");
        push("day_of_week".into(), FeatureKind::Scalar, "1-7");
        push("season".into(), FeatureKind::Scalar, "1-4");
        push("intervention_level".into(), FeatureKind::Scalar, "0-3");
        for name in FACTOR_NAMES {
            push(format!("sum_{name}"), FeatureKind::Binary, "clinics");
        }
        push("n_clinics".into(), FeatureKind::Binary, "clinics");
        FeatureSchema { features }
    }

    /// Names of the preset subset: drops the per-weekday hours and the day index.
    pub fn preset_names(trailing_window: usize) -> Vec<String> {
        Self::full(trailing_window)
            .names()
            .filter(|n| {
                !(n.starts_with("business_hours_") || n.starts_with("break_hours_"))
                    || n.ends_with("_today")
            })
            .filter(|n| *n != "day_index")
            .map(str::to_string)
            .collect()
    }

    pub fn for_set(set: FeatureSet, trailing_window: usize) -> Self {
        let full = Self::full(trailing_window);
        match set {
            FeatureSet::All => full,
            FeatureSet::Preset => {
                let names = Self::preset_names(trailing_window);
                full.select(&names).expect("preset names are in the full schema")
            }
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Sub-schema with the given names, in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<FeatureSchema, FeatureError> {
        let features = names
            .iter()
            .map(|n| {
                self.index_of(n.as_ref())
                    .map(|i| self.features[i].clone())
                    .ok_or_else(|| FeatureError::UnknownFeature(n.as_ref().to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(FeatureSchema { features })
    }

    /// Column indices in `self` of every feature of `target`.
    pub fn projection(&self, target: &FeatureSchema) -> Result<Vec<usize>, FeatureError> {
        target
            .names()
            .map(|n| self.index_of(n).ok_or_else(|| FeatureError::UnknownFeature(n.to_string())))
            .collect()
    }

    /// Stable content hash of the layout (hex, 16 digits).
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for f in &self.features {
            hasher.update(f.name.as_bytes());
            hasher.update([0u8]);
            hasher.update(format!("{:?}", f.kind).as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())[..16].to_string()
    }
}

/// Factor sums and merged opening hours of a group of clinics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledGroup {
    pub factor_sums: [u32; 6],
    pub n: u32,
    pub business_hours: [f64; 7],
    pub break_hours: [f64; 7],
}

impl RescaledGroup {
    /// `[sum_1, .., sum_6, n]`.
    pub fn binary_vector(&self) -> [u32; 7] {
        let mut out = [0; 7];
        out[..6].copy_from_slice(&self.factor_sums);
        out[6] = self.n;
        out
    }
}

/// Fold the clinics of one LGA into a single entity: each binary factor is
/// summed over the clinics, `n` is the clinic count, and business and break
/// hours are summed per weekday.
pub fn rescale_multi_to_one<C: std::borrow::Borrow<ClinicRecord>>(
    clinics: &[C],
) -> Result<RescaledGroup, FeatureError> {
    let first = clinics.first().ok_or(FeatureError::EmptyGroup)?.borrow();
    let mut group = RescaledGroup {
        factor_sums: [0; 6],
        n: 0,
        business_hours: [0.0; 7],
        break_hours: [0.0; 7],
    };
    for clinic in clinics {
        let clinic = clinic.borrow();
        if clinic.lga_id != first.lga_id {
            return Err(FeatureError::MixedUnits(
                first.lga_id.clone(),
                clinic.lga_id.clone(),
            ));
        }
        for (sum, value) in group.factor_sums.iter_mut().zip(clinic.factors.as_counts()) {
            *sum += value;
        }
        let (business, breaks) = encode_schedule(&clinic.schedule);
        for day in 0..7 {
            group.business_hours[day] += business[day];
            group.break_hours[day] += breaks[day];
        }
        group.n += 1;
    }
    Ok(group)
}

/// Fold a group without the same-LGA check (postcode units may span LGAs).
fn fold_group(clinics: &[&ClinicRecord]) -> RescaledGroup {
    let mut group = RescaledGroup {
        factor_sums: [0; 6],
        n: 0,
        business_hours: [0.0; 7],
        break_hours: [0.0; 7],
    };
    for clinic in clinics {
        for (sum, value) in group.factor_sums.iter_mut().zip(clinic.factors.as_counts()) {
            *sum += value;
        }
        let (business, breaks) = encode_schedule(&clinic.schedule);
        for day in 0..7 {
            group.business_hours[day] += business[day];
            group.break_hours[day] += breaks[day];
        }
        group.n += 1;
    }
    group
}

/// Group features of one modelled unit (all its clinics folded together).
pub fn unit_group(clinics: &[&ClinicRecord], kind: UnitKind) -> Result<RescaledGroup, FeatureError> {
    if clinics.is_empty() {
        return Err(FeatureError::EmptyGroup);
    }
    match kind {
        UnitKind::Lga => rescale_multi_to_one(clinics),
        UnitKind::Postcode => Ok(fold_group(clinics)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Days of released counts averaged before the row date (row date excluded).
    pub trailing_window: usize,
    pub hemisphere: Hemisphere,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            trailing_window: 7,
            hemisphere: Hemisphere::Southern,
        }
    }
}

impl FeatureConfig {
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::full(self.trailing_window)
    }
}

/// Everything about a unit-day that does not depend on which clinics the row
/// stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDayContext {
    pub date: NaiveDate,
    pub density: f64,
    pub tests_trailing_mean: f64,
    pub cases_trailing_mean: f64,
    pub tests_previous_day: f64,
    pub clinic_count: f64,
    pub day_index: f64,
    pub day_of_week: u8,
    pub season: u8,
    pub intervention_level: u8,
}

impl UnitDayContext {
    /// Build the context of `unit_id` on `date` from released data strictly
    /// before `date`.
    pub fn from_dataset(
        dataset: &AggregatedDataset,
        config: &FeatureConfig,
        kind: UnitKind,
        unit_id: &str,
        date: NaiveDate,
    ) -> Result<Self, FeatureError> {
        let series = unit_series(dataset, kind, unit_id)?;
        let clinic_count = dataset
            .clinics
            .iter()
            .filter(|c| c.unit_id(kind) == unit_id)
            .count();
        let density = dataset.demographics_for(unit_id).map_or(0.0, |d| d.density);
        Self::from_series(dataset, config, series, density, clinic_count, date)
    }

    pub fn from_series(
        dataset: &AggregatedDataset,
        config: &FeatureConfig,
        series: &[crate::ingest::RegionDay],
        density: f64,
        clinic_count: usize,
        date: NaiveDate,
    ) -> Result<Self, FeatureError> {
        if !dataset.period.contains(date) {
            return Err(FeatureError::OutOfPeriod {
                date,
                period: dataset.period.to_string(),
            });
        }
        let index = series
            .binary_search_by_key(&date, |r| r.date)
            .map_err(|_| FeatureError::Invalid(format!("no stored row for {date}")))?;
        let start = index.saturating_sub(config.trailing_window);
        let window = &series[start..index];
        let mean = |f: fn(&crate::ingest::RegionDay) -> u64| {
            if window.is_empty() {
                0.0
            } else {
                window.iter().map(|r| f(r) as f64).sum::<f64>() / window.len() as f64
            }
        };
        let (day_of_week, season) = day_scalars(date, config.hemisphere);
        Ok(UnitDayContext {
            date,
            density,
            tests_trailing_mean: mean(|r| r.tests),
            cases_trailing_mean: mean(|r| r.cases),
            tests_previous_day: window.last().map_or(0.0, |r| r.tests as f64),
            clinic_count: clinic_count as f64,
            day_index: dataset.period.offset(date) as f64,
            day_of_week,
            season,
            intervention_level: intervention_level(date, &dataset.interventions).level,
        })
    }
}

/// Assemble one row in [`FeatureSchema::full`] order.
pub fn assemble_row(context: &UnitDayContext, group: &RescaledGroup) -> Vec<f64> {
    let today = usize::from(context.day_of_week) - 1;
    let mut row = Vec::with_capacity(32);
    row.push(context.density);
    row.push(context.tests_trailing_mean);
    row.push(context.cases_trailing_mean);
    row.push(context.tests_previous_day);
    row.extend_from_slice(&group.business_hours);
    row.extend_from_slice(&group.break_hours);
    row.push(group.business_hours[today]);
    row.push(group.break_hours[today]);
    row.push(context.clinic_count);
    row.push(context.day_index);
    row.push(f64::from(context.day_of_week));
    row.push(f64::from(context.season));
    row.push(f64::from(context.intervention_level));
    row.extend(group.binary_vector().iter().map(|&v| f64::from(v)));
    row
}

/// Identity of a training row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub unit_id: String,
    pub date: NaiveDate,
}

/// Feature rows with their unit-level targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMatrix {
    pub schema: FeatureSchema,
    /// Unit level the rows describe, when built from a dataset.
    pub unit_kind: Option<UnitKind>,
    pub config: FeatureConfig,
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub keys: Vec<RowKey>,
}

impl TrainingMatrix {
    pub fn new(
        schema: FeatureSchema,
        rows: Vec<Vec<f64>>,
        targets: Vec<f64>,
        keys: Vec<RowKey>,
    ) -> Result<Self, FeatureError> {
        if rows.len() != targets.len() || rows.len() != keys.len() {
            return Err(FeatureError::Invalid(format!(
                "{} rows, {} targets, {} keys",
                rows.len(),
                targets.len(),
                keys.len()
            )));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != schema.len()) {
            return Err(FeatureError::Invalid(format!(
                "row {i} has {} columns, schema has {}",
                rows[i].len(),
                schema.len()
            )));
        }
        let finite = rows.iter().flatten().chain(&targets).all(|v| v.is_finite());
        if !finite {
            return Err(FeatureError::Invalid("matrix contains undefined values".into()));
        }
        Ok(TrainingMatrix {
            schema,
            unit_kind: None,
            config: FeatureConfig::default(),
            rows,
            targets,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    /// Project onto a subset of columns.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<TrainingMatrix, FeatureError> {
        let schema = self.schema.select(names)?;
        let columns = self.schema.projection(&schema)?;
        let rows = self
            .rows
            .iter()
            .map(|r| columns.iter().map(|&c| r[c]).collect())
            .collect();
        Ok(TrainingMatrix {
            schema,
            unit_kind: self.unit_kind,
            config: self.config,
            rows,
            targets: self.targets.clone(),
            keys: self.keys.clone(),
        })
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> TrainingMatrix {
        TrainingMatrix {
            schema: self.schema.clone(),
            unit_kind: self.unit_kind,
            config: self.config,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            keys: indices.iter().map(|&i| self.keys[i].clone()).collect(),
        }
    }

    pub fn column(&self, index: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[index]).collect()
    }
}

/// One row per (unit with clinics, date in `from..=to`), unit-major.
///
/// The target is the unit's released test count on the row date; the trailing
/// features only read dates before it.
pub fn build_training_set(
    dataset: &AggregatedDataset,
    config: &FeatureConfig,
    kind: UnitKind,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<TrainingMatrix, FeatureError> {
    if from > to {
        return Err(FeatureError::EmptyRange(from, to));
    }
    for date in [from, to] {
        if !dataset.period.contains(date) {
            return Err(FeatureError::OutOfPeriod {
                date,
                period: dataset.period.to_string(),
            });
        }
    }
    let mut members: BTreeMap<&str, Vec<&ClinicRecord>> = BTreeMap::new();
    for clinic in &dataset.clinics {
        members.entry(clinic.unit_id(kind)).or_default().push(clinic);
    }
    let units: Vec<(&str, Vec<&ClinicRecord>)> = members.into_iter().collect();
    let per_unit: Vec<Vec<(RowKey, Vec<f64>, f64)>> = units
        .par_iter()
        .map(|(unit_id, clinics)| {
            let group = unit_group(clinics, kind)?;
            let series = unit_series(dataset, kind, unit_id)?;
            let density = dataset.demographics_for(unit_id).map_or(0.0, |d| d.density);
            let lo = series.partition_point(|r| r.date < from);
            let hi = series.partition_point(|r| r.date <= to);
            series[lo..hi]
                .iter()
                .map(|day| {
                    let context = UnitDayContext::from_series(
                        dataset,
                        config,
                        series,
                        density,
                        clinics.len(),
                        day.date,
                    )?;
                    Ok((
                        RowKey {
                            unit_id: unit_id.to_string(),
                            date: day.date,
                        },
                        assemble_row(&context, &group),
                        day.tests as f64,
                    ))
                })
                .collect::<Result<Vec<_>, FeatureError>>()
        })
        .collect::<Result<_, _>>()?;

    let total: usize = per_unit.iter().map(Vec::len).sum();
    let mut rows = Vec::with_capacity(total);
    let mut targets = Vec::with_capacity(total);
    let mut keys = Vec::with_capacity(total);
    for (key, row, target) in per_unit.into_iter().flatten() {
        keys.push(key);
        rows.push(row);
        targets.push(target);
    }
    let mut matrix = TrainingMatrix::new(config.schema(), rows, targets, keys)?;
    matrix.unit_kind = Some(kind);
    matrix.config = *config;
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Factors, Schedule, DRIVE_THROUGH, WALK_IN};

    fn clinic(id: &str, lga: &str, factors: [bool; 6]) -> ClinicRecord {
        let mut schedule = Schedule::closed();
        schedule.open_range(0, 18, 34);
        ClinicRecord {
            clinic_id: id.into(),
            name: id.into(),
            lga_id: lga.into(),
            postcode: "2000".into(),
            latitude: 0.0,
            longitude: 0.0,
            factors: Factors(factors),
            schedule,
        }
    }

    #[test]
    fn two_clinic_sums() {
        let mut a = [false; 6];
        a[WALK_IN] = true;
        a[DRIVE_THROUGH] = true;
        let mut b = [false; 6];
        b[DRIVE_THROUGH] = true;
        let group =
            rescale_multi_to_one(&[clinic("a", "L", a), clinic("b", "L", b)]).unwrap();
        assert_eq!(group.factor_sums, [0, 0, 0, 1, 2, 0]);
        assert_eq!(group.n, 2);
        assert_eq!(group.business_hours[0], 16.0);
    }

    #[test]
    fn single_clinic_is_identity() {
        let f = [true, false, true, false, false, true];
        let c = clinic("a", "L", f);
        let group = rescale_multi_to_one(std::slice::from_ref(&c)).unwrap();
        assert_eq!(group.factor_sums, c.factors.as_counts());
        assert_eq!(group.n, 1);
        let (business, breaks) = encode_schedule(&c.schedule);
        assert_eq!((group.business_hours, group.break_hours), (business, breaks));
    }

    #[test]
    fn seven_clinic_lga() {
        let clinics: Vec<_> = (0..7)
            .map(|i| {
                let mut f = [false; 6];
                f[WALK_IN] = true;
                f[crate::ingest::WHEELCHAIR] = true;
                f[crate::ingest::BOOKING] = i == 3;
                clinic(&format!("c{i}"), "Sydney", f)
            })
            .collect();
        let group = rescale_multi_to_one(&clinics).unwrap();
        assert_eq!(group.factor_sums[WALK_IN], 7);
        assert_eq!(group.factor_sums[crate::ingest::WHEELCHAIR], 7);
        assert_eq!(group.factor_sums[crate::ingest::BOOKING], 1);
        assert_eq!(group.n, 7);
    }

    #[test]
    fn rescale_errors() {
        let empty: [ClinicRecord; 0] = [];
        assert!(matches!(rescale_multi_to_one(&empty), Err(FeatureError::EmptyGroup)));
        let mixed = [clinic("a", "L1", [false; 6]), clinic("b", "L2", [false; 6])];
        assert!(matches!(rescale_multi_to_one(&mixed), Err(FeatureError::MixedUnits(..))));
    }

    #[test]
    fn schema_layout() {
        let schema = FeatureSchema::full(7);
        assert_eq!(schema.len(), 32);
        assert_eq!(schema.index_of("n_clinics"), Some(31));
        assert_eq!(schema.hash(), FeatureSchema::full(7).hash());
        assert_ne!(schema.hash(), FeatureSchema::full(5).hash());
        let preset = FeatureSchema::for_set(FeatureSet::Preset, 7);
        assert!(preset.index_of("business_hours_today").is_some());
        assert!(preset.index_of("business_hours_mon").is_none());
        assert!(preset.index_of("day_index").is_none());
        let context = UnitDayContext {
            date: NaiveDate::from_ymd_opt(2021, 1, 4).unwrap(),
            density: 1.0,
            tests_trailing_mean: 2.0,
            cases_trailing_mean: 3.0,
            tests_previous_day: 4.0,
            clinic_count: 1.0,
            day_index: 0.0,
            day_of_week: 1,
            season: 2,
            intervention_level: 0,
        };
        let group = rescale_multi_to_one(&[clinic("a", "L", [false; 6])]).unwrap();
        let row = assemble_row(&context, &group);
        assert_eq!(row.len(), schema.len());
        assert_eq!(row[schema.index_of("business_hours_today").unwrap()], 8.0);
        assert_eq!(row[schema.index_of("day_of_week").unwrap()], 1.0);
    }
}
