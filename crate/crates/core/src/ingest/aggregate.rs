use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;

use super::{
    AggregatedDataset, ClinicRecord, CountKind, DemographicRecord, IngestError,
    InterventionRecord, Period, RawCountRow, RegionDay, UnitKind,
};

/// Drop every self-reported row, keeping the order of the rest.
pub fn clean_counts(rows: Vec<RawCountRow>) -> Vec<RawCountRow> {
    rows.into_iter().filter(|r| !r.self_reported).collect()
}

/// Cleaned inputs for [`build_aggregate`].
#[derive(Debug, Clone, Default)]
pub struct AggregateInputs {
    pub tests: Vec<RawCountRow>,
    pub cases: Vec<RawCountRow>,
    pub clinics: Vec<ClinicRecord>,
    pub interventions: Vec<InterventionRecord>,
    pub demographics: Vec<DemographicRecord>,
}

type UnitKey = (UnitKind, String);

/// Join cleaned counts with clinics, interventions and census data over `period`.
///
/// Every unit with at least one clinic gets exactly one [`RegionDay`] per
/// date of the period; a missing tests or cases row becomes 0 with `imputed`
/// set. Units that only appear in the counts or census are zero-filled the
/// same way into `display_days`.
pub fn build_aggregate(
    inputs: AggregateInputs,
    period: Period,
) -> Result<AggregatedDataset, IngestError> {
    let AggregateInputs {
        tests,
        cases,
        clinics,
        interventions,
        demographics,
    } = inputs;

    let mut seen_clinics = BTreeSet::new();
    for clinic in &clinics {
        if !seen_clinics.insert(clinic.clinic_id.as_str()) {
            return Err(IngestError::Invalid(format!(
                "clinic id {} appears more than once",
                clinic.clinic_id
            )));
        }
    }

    let mut known: BTreeSet<UnitKey> = BTreeSet::new();
    for row in tests.iter().chain(&cases) {
        known.insert((row.unit_kind, row.unit_id.clone()));
    }
    for record in &demographics {
        known.insert((UnitKind::Lga, record.unit_id.clone()));
        known.insert((UnitKind::Postcode, record.unit_id.clone()));
    }

    let unknown: Vec<String> = clinics
        .iter()
        .filter(|c| !known.contains(&(UnitKind::Lga, c.lga_id.clone())))
        .map(|c| c.clinic_id.clone())
        .collect();
    if !unknown.is_empty() {
        return Err(IngestError::UnknownUnits(unknown));
    }

    let mut counts: BTreeMap<(UnitKind, &str, NaiveDate, CountKind), u64> = BTreeMap::new();
    for row in tests.iter().chain(&cases) {
        let key = (row.unit_kind, row.unit_id.as_str(), row.date, row.kind);
        if counts.insert(key, row.count).is_some() {
            return Err(IngestError::Duplicate {
                unit_kind: row.unit_kind,
                unit_id: row.unit_id.clone(),
                date: row.date,
                kind: row.kind,
            });
        }
    }

    let mut with_clinics: BTreeSet<UnitKey> = BTreeSet::new();
    for clinic in &clinics {
        with_clinics.insert((UnitKind::Lga, clinic.lga_id.clone()));
        with_clinics.insert((UnitKind::Postcode, clinic.postcode.clone()));
    }
    // Census-only ids are not evidence that a unit of a given kind exists.
    let mut display: BTreeSet<UnitKey> = tests
        .iter()
        .chain(&cases)
        .map(|r| (r.unit_kind, r.unit_id.clone()))
        .collect();
    display.retain(|key| !with_clinics.contains(key));

    let fill = |units: &BTreeSet<UnitKey>| -> Vec<RegionDay> {
        let mut days = Vec::with_capacity(units.len() * period.days());
        for (kind, unit_id) in units {
            for date in period.dates() {
                let tests = counts
                    .get(&(*kind, unit_id.as_str(), date, CountKind::Tests))
                    .copied();
                let cases = counts
                    .get(&(*kind, unit_id.as_str(), date, CountKind::Cases))
                    .copied();
                days.push(RegionDay {
                    unit_kind: *kind,
                    unit_id: unit_id.clone(),
                    date,
                    tests: tests.unwrap_or(0),
                    cases: cases.unwrap_or(0),
                    imputed: tests.is_none() || cases.is_none(),
                });
            }
        }
        days
    };

    let flagged_clinics = clinics
        .iter()
        .filter(|c| c.schedule.open_blocks() == 0)
        .map(|c| c.clinic_id.clone())
        .collect();

    Ok(AggregatedDataset {
        period,
        region_days: fill(&with_clinics),
        display_days: fill(&display),
        clinics,
        interventions,
        demographics,
        flagged_clinics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Factors, Schedule};

    fn date(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 6, day).unwrap()
    }

    fn row(unit: &str, day: u32, count: u64, kind: CountKind, self_reported: bool) -> RawCountRow {
        RawCountRow {
            date: date(day),
            unit_kind: UnitKind::Lga,
            unit_id: unit.into(),
            count,
            kind,
            self_reported,
        }
    }

    fn clinic(id: &str, lga: &str) -> ClinicRecord {
        let mut schedule = Schedule::closed();
        schedule.open_range(0, 18, 34);
        ClinicRecord {
            clinic_id: id.into(),
            name: id.into(),
            lga_id: lga.into(),
            postcode: format!("P{lga}"),
            latitude: 0.0,
            longitude: 0.0,
            factors: Factors::default(),
            schedule,
        }
    }

    fn full_inputs(units: &[&str], days: u32) -> AggregateInputs {
        let mut inputs = AggregateInputs::default();
        for unit in units {
            for d in 1..=days {
                inputs.tests.push(row(unit, d, 10 * d as u64, CountKind::Tests, false));
                inputs.cases.push(row(unit, d, d as u64, CountKind::Cases, false));
            }
            inputs.clinics.push(clinic(&format!("C-{unit}"), unit));
        }
        inputs
    }

    #[test]
    fn clean_removes_self_reported_only() {
        let rows: Vec<_> = (0..10)
            .map(|i| row("A", 1 + i, i as u64, CountKind::Tests, i % 3 == 0))
            .collect();
        let cleaned = clean_counts(rows.clone());
        assert_eq!(cleaned.len(), 6);
        assert!(cleaned.iter().all(|r| !r.self_reported));
        let kept: Vec<_> = rows.into_iter().filter(|r| !r.self_reported).collect();
        assert_eq!(cleaned, kept);
        assert!(clean_counts(Vec::new()).is_empty());
        let all_self = vec![row("A", 1, 1, CountKind::Tests, true); 3];
        assert!(clean_counts(all_self).is_empty());
    }

    #[test]
    fn complete_grid_for_units_with_clinics() {
        let period = Period::new(date(1), date(10)).unwrap();
        let ds = build_aggregate(full_inputs(&["A", "B", "C"], 10), period).unwrap();
        let lga_rows = ds
            .region_days
            .iter()
            .filter(|r| r.unit_kind == UnitKind::Lga)
            .count();
        assert_eq!(lga_rows, 30);
        assert!(ds.region_days.iter().filter(|r| r.unit_kind == UnitKind::Lga).all(|r| !r.imputed));
    }

    #[test]
    fn missing_pair_is_zero_filled_and_flagged() {
        let period = Period::new(date(1), date(10)).unwrap();
        let mut inputs = full_inputs(&["A"], 10);
        inputs.tests.retain(|r| r.date != date(4));
        let ds = build_aggregate(inputs, period).unwrap();
        let day = ds
            .region_days
            .iter()
            .find(|r| r.unit_kind == UnitKind::Lga && r.date == date(4))
            .unwrap();
        assert_eq!(day.tests, 0);
        assert!(day.imputed);
    }

    #[test]
    fn unknown_unit_lists_clinics() {
        let period = Period::new(date(1), date(3)).unwrap();
        let mut inputs = full_inputs(&["A"], 3);
        inputs.clinics.push(clinic("X1", "Nowhere"));
        inputs.clinics.push(clinic("X2", "Elsewhere"));
        match build_aggregate(inputs, period) {
            Err(IngestError::UnknownUnits(ids)) => assert_eq!(ids, vec!["X1", "X2"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_rows_are_rejected() {
        let period = Period::new(date(1), date(3)).unwrap();
        let mut inputs = full_inputs(&["A"], 3);
        inputs.tests.push(row("A", 2, 99, CountKind::Tests, false));
        assert!(matches!(
            build_aggregate(inputs, period),
            Err(IngestError::Duplicate { .. })
        ));
    }

    #[test]
    fn units_without_clinics_go_to_display_days() {
        let period = Period::new(date(1), date(5)).unwrap();
        let mut inputs = full_inputs(&["A"], 5);
        inputs.tests.push(row("Z", 3, 4, CountKind::Tests, false));
        let ds = build_aggregate(inputs, period).unwrap();
        assert!(ds.region_days.iter().all(|r| r.unit_id != "Z"));
        let z: Vec<_> = ds.display_days.iter().filter(|r| r.unit_id == "Z").collect();
        assert_eq!(z.len(), 5);
        assert_eq!(z[2].tests, 4);
    }

    #[test]
    fn closed_schedules_are_flagged_not_rejected() {
        let period = Period::new(date(1), date(3)).unwrap();
        let mut inputs = full_inputs(&["A"], 3);
        inputs.clinics[0].schedule = Schedule::closed();
        let ds = build_aggregate(inputs, period).unwrap();
        assert_eq!(ds.flagged_clinics, vec!["C-A".to_string()]);
    }
}
