//! Values behind the map lens, the clinic heatmap and stored unit sequences.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{query_series, relation_kind, DatasetError, RelationKind};
use crate::features::intervention_level;
use crate::forecast::{average_capacity, Capacity, ForecastError, Forecaster};
use crate::ingest::{AggregatedDataset, Direction, InterventionRecord, UnitKind};
use crate::regress::RegressionModel;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("negative count: {0}")]
    Negative(String),
    #[error("invalid lens parameters: {0}")]
    Config(String),
    #[error("empty unit selection")]
    EmptySelection,
    #[error("empty date range {0}..={1}")]
    EmptyRange(NaiveDate, NaiveDate),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositiveRate {
    pub rate: f64,
    /// No tests that day; `rate` is reported as 0.
    pub undefined: bool,
    /// More cases than tests.
    pub anomalous: bool,
}

pub fn positive_rate(tests: i64, cases: i64) -> Result<PositiveRate, AnalyticsError> {
    if tests < 0 || cases < 0 {
        return Err(AnalyticsError::Negative(format!("tests {tests}, cases {cases}")));
    }
    if tests == 0 {
        return Ok(PositiveRate {
            rate: 0.0,
            undefined: true,
            anomalous: false,
        });
    }
    let rate = cases as f64 / tests as f64;
    Ok(PositiveRate {
        rate,
        undefined: false,
        anomalous: rate > 1.0,
    })
}

/// Lens bar scale parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LensParams {
    pub a: f64,
    pub b: f64,
}

impl Default for LensParams {
    fn default() -> Self {
        LensParams { a: 2.0, b: 100.0 }
    }
}

impl LensParams {
    pub fn validate(&self) -> Result<(), AnalyticsError> {
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(AnalyticsError::Config(format!("a = {}, b = {} must be positive", self.a, self.b)));
        }
        Ok(())
    }
}

/// `a * ln(v) + v / b`, 0 for `v = 0` and never below 0.
pub fn radial_height(v: f64, a: f64, b: f64) -> Result<f64, AnalyticsError> {
    LensParams { a, b }.validate()?;
    if v.is_nan() || v < 0.0 {
        return Err(AnalyticsError::Negative(format!("value {v}")));
    }
    if v == 0.0 {
        return Ok(0.0);
    }
    Ok((a * v.ln() + v / b).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineSegment {
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub days: usize,
    pub level: u8,
    pub directions: Vec<Direction>,
}

/// Runs of days with the same level and set of directions, covering
/// `from..=to` exactly.
pub fn timeline_segments(
    from: NaiveDate,
    to: NaiveDate,
    interventions: &[InterventionRecord],
) -> Result<Vec<TimelineSegment>, AnalyticsError> {
    if from > to {
        return Err(AnalyticsError::EmptyRange(from, to));
    }
    let mut segments: Vec<TimelineSegment> = Vec::new();
    for date in from.iter_days().take_while(|d| *d <= to) {
        let active = intervention_level(date, interventions);
        match segments.last_mut() {
            Some(last) if last.level == active.level && last.directions == active.directions => {
                last.end = date;
                last.days += 1;
            }
            _ => segments.push(TimelineSegment {
                start: date,
                end: date,
                days: 1,
                level: active.level,
                directions: active.directions,
            }),
        }
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub unit_id: String,
    pub total_tests: u64,
    pub n_clinics: usize,
    /// Absent for units without clinics.
    pub relation: Option<RelationKind>,
}

/// An ordered selection of units saved for later recall.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageSequence {
    pub sequence_number: u64,
    pub unit_kind: UnitKind,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub entries: Vec<SequenceEntry>,
}

/// Order the selected units by descending total tests over the range, ties
/// by ascending id. Repeated ids are kept once.
pub fn rank_sequence(
    dataset: &AggregatedDataset,
    kind: UnitKind,
    unit_ids: &[String],
    from: NaiveDate,
    to: NaiveDate,
    sequence_number: u64,
) -> Result<StorageSequence, AnalyticsError> {
    if unit_ids.is_empty() {
        return Err(AnalyticsError::EmptySelection);
    }
    let unique: BTreeSet<&String> = unit_ids.iter().collect();
    let mut entries = Vec::with_capacity(unique.len());
    for unit_id in unique {
        let total_tests = query_series(dataset, kind, unit_id, from, to)?
            .iter()
            .map(|r| r.tests)
            .sum();
        let (relation, n_clinics) = match relation_kind(dataset, kind, unit_id) {
            Ok((relation, n)) => (Some(relation), n),
            Err(DatasetError::NoClinics { .. }) => (None, 0),
            Err(e) => return Err(e.into()),
        };
        entries.push(SequenceEntry {
            unit_id: unit_id.clone(),
            total_tests,
            n_clinics,
            relation,
        });
    }
    entries.sort_by(|a, b| b.total_tests.cmp(&a.total_tests).then_with(|| a.unit_id.cmp(&b.unit_id)));
    Ok(StorageSequence {
        sequence_number,
        unit_kind: kind,
        from,
        to,
        entries,
    })
}

/// Average calibrated capacity per clinic of the given units over the range.
pub fn heatmap_values(
    forecaster: &Forecaster<'_>,
    unit_ids: &[String],
    from: NaiveDate,
    to: NaiveDate,
) -> Result<BTreeMap<String, Capacity>, AnalyticsError> {
    let mut heat = BTreeMap::new();
    for unit_id in unit_ids {
        let set = forecaster.predict_breakdown(unit_id, from, to, true)?;
        for clinic in forecaster.unit_clinics(unit_id)? {
            let series = set.for_clinic(&clinic.clinic_id);
            heat.insert(clinic.clinic_id, average_capacity(&series, from, to)?);
        }
    }
    Ok(heat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolygonClass {
    OneToOne,
    MultipleToOne,
    Selected,
    /// A unit with counts but no clinics.
    NoClinics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensDay {
    pub date: NaiveDate,
    pub tests: u64,
    pub cases: u64,
    pub height_tests: f64,
    pub height_cases: f64,
    pub positive_rate: f64,
    pub rate_undefined: bool,
    pub rate_anomalous: bool,
    pub level: u8,
    pub directions: Vec<Direction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPolygon {
    pub unit_id: String,
    pub class: PolygonClass,
}

/// Everything the lens draws for one date range and unit selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensFrame {
    pub unit_kind: UnitKind,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub params: LensParams,
    /// Selected units; the days sum over these, or over every unit when empty.
    pub selection: Vec<String>,
    pub days: Vec<LensDay>,
    pub timeline: Vec<TimelineSegment>,
    pub polygons: Vec<UnitPolygon>,
    /// Clinic heat values, present when a model was supplied.
    pub heat: Option<BTreeMap<String, Capacity>>,
}

fn four_decimals(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

pub fn lens_frame(
    dataset: &AggregatedDataset,
    kind: UnitKind,
    selection: &[String],
    from: NaiveDate,
    to: NaiveDate,
    params: LensParams,
    model: Option<&RegressionModel>,
) -> Result<LensFrame, AnalyticsError> {
    params.validate()?;
    if from > to {
        return Err(AnalyticsError::EmptyRange(from, to));
    }
    let all_units = dataset.all_units(kind);
    let summed: Vec<String> = if selection.is_empty() {
        all_units.clone()
    } else {
        selection.to_vec()
    };
    let n_days = (to - from).num_days() as usize + 1;
    let mut totals = vec![(0u64, 0u64); n_days];
    for unit_id in &summed {
        for row in query_series(dataset, kind, unit_id, from, to)? {
            let i = (row.date - from).num_days() as usize;
            totals[i].0 += row.tests;
            totals[i].1 += row.cases;
        }
    }
    let mut days = Vec::with_capacity(n_days);
    for (date, (tests, cases)) in from.iter_days().zip(totals) {
        let rate = positive_rate(tests as i64, cases as i64)?;
        let active = intervention_level(date, &dataset.interventions);
        days.push(LensDay {
            date,
            tests,
            cases,
            height_tests: four_decimals(radial_height(tests as f64, params.a, params.b)?),
            height_cases: four_decimals(radial_height(cases as f64, params.a, params.b)?),
            positive_rate: four_decimals(rate.rate),
            rate_undefined: rate.undefined,
            rate_anomalous: rate.anomalous,
            level: active.level,
            directions: active.directions,
        });
    }

    let selected: BTreeSet<&String> = selection.iter().collect();
    let polygons = all_units
        .iter()
        .map(|unit_id| {
            let class = if selected.contains(unit_id) {
                PolygonClass::Selected
            } else {
                match dataset.clinics_in(kind, unit_id).len() {
                    0 => PolygonClass::NoClinics,
                    1 => PolygonClass::OneToOne,
                    _ => PolygonClass::MultipleToOne,
                }
            };
            UnitPolygon {
                unit_id: unit_id.clone(),
                class,
            }
        })
        .collect();

    let heat = match model {
        Some(model) => {
            let forecaster = Forecaster::with_kind(model, dataset, kind)?;
            let served: Vec<String> = summed
                .iter()
                .filter(|u| !dataset.clinics_in(kind, u).is_empty())
                .cloned()
                .collect();
            Some(heatmap_values(&forecaster, &served, from, to)?)
        }
        None => None,
    };

    Ok(LensFrame {
        unit_kind: kind,
        from,
        to,
        params,
        selection: selection.to_vec(),
        days,
        timeline: timeline_segments(from, to, &dataset.interventions)?,
        polygons,
        heat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 8, day).unwrap()
    }

    #[test]
    fn rates() {
        let spot = positive_rate(256_229, 149_033).unwrap();
        assert!((spot.rate - 0.5816).abs() <= 0.00005);
        assert_eq!(positive_rate(1000, 0).unwrap().rate, 0.0);
        let empty = positive_rate(0, 0).unwrap();
        assert!(empty.undefined && empty.rate == 0.0);
        assert!(positive_rate(10, 11).unwrap().anomalous);
        assert!(positive_rate(-1, 0).is_err());
    }

    #[test]
    fn heights() {
        assert_eq!(radial_height(0.0, 2.0, 100.0).unwrap(), 0.0);
        assert!((radial_height(1.0, 2.0, 100.0).unwrap() - 0.01).abs() < 1e-12);
        assert!((radial_height(100.0, 2.0, 100.0).unwrap() - 10.2103).abs() < 5e-5);
        assert_eq!(radial_height(0.5, 2.0, 100.0).unwrap(), 0.0);
        assert!(radial_height(1.0, 0.0, 100.0).is_err());
        assert!(radial_height(1.0, 2.0, -1.0).is_err());
    }

    fn event(from: u32, to: u32, level: u8) -> InterventionRecord {
        InterventionRecord {
            start_date: d(from),
            end_date: d(to),
            level,
            direction: Direction::Restriction,
            label: String::new(),
        }
    }

    #[test]
    fn segments() {
        let plain = timeline_segments(d(1), d(10), &[]).unwrap();
        assert_eq!(plain.len(), 1);
        assert_eq!((plain[0].level, plain[0].days), (0, 10));

        let middle = timeline_segments(d(1), d(10), &[event(4, 6, 2)]).unwrap();
        let levels: Vec<u8> = middle.iter().map(|s| s.level).collect();
        assert_eq!(levels, [0, 2, 0]);
        assert_eq!(middle.iter().map(|s| s.days).sum::<usize>(), 10);

        let adjacent = timeline_segments(d(1), d(10), &[event(1, 5, 1), event(6, 10, 1)]).unwrap();
        assert_eq!(adjacent.len(), 1);
    }
}
