#![allow(dead_code)]

use capacity_core::features::{build_training_set, FeatureConfig, TrainingMatrix};
use capacity_core::forecast::{ClinicEdit, ScheduleEdit, WhatIfScenario};
use capacity_core::ingest::synth::{generate_synthetic, SynthConfig};
use capacity_core::ingest::{AggregatedDataset, ClinicRecord, UnitKind};
use capacity_core::regress::{fit, ModelKind, ModelSpec, RegressionModel};
use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// 09:00 as a half-hour block index.
pub const NINE: usize = 18;
pub const SATURDAY: usize = 5;
pub const SUNDAY: usize = 6;

pub fn synth_dataset(config: &SynthConfig, seed: u64) -> AggregatedDataset {
    let (bundle, _) = generate_synthetic(config, seed).expect("valid config");
    bundle.inputs().unwrap().aggregate(None).unwrap()
}

pub fn lga_matrix(dataset: &AggregatedDataset) -> TrainingMatrix {
    build_training_set(
        dataset,
        &FeatureConfig::default(),
        UnitKind::Lga,
        dataset.period.first,
        dataset.period.last,
    )
    .unwrap()
}

pub fn train(dataset: &AggregatedDataset, kind: ModelKind, seed: u64) -> RegressionModel {
    fit(&lga_matrix(dataset), ModelSpec::default_for(kind), seed).unwrap()
}

/// A random Monday-to-Sunday week after the first full trailing window.
pub fn random_week(dataset: &AggregatedDataset, rng: &mut ChaCha8Rng) -> (NaiveDate, NaiveDate) {
    let first_monday = dataset
        .period
        .dates()
        .skip(7)
        .find(|d| d.weekday() == Weekday::Mon)
        .expect("period longer than two weeks");
    let weeks = (dataset.period.last - first_monday).num_days() / 7;
    let from = first_monday + Days::new(7 * rng.random_range(0..weeks) as u64);
    (from, from + Days::new(6))
}

fn is_closed(clinic: &ClinicRecord, day: usize) -> bool {
    !clinic.schedule.day(day).iter().any(|&open| open)
}

/// Open one Saturday-closed clinic for 6 hours (09:00-15:00) on Saturday.
pub fn saturday_scenario(
    dataset: &AggregatedDataset,
    rng: &mut ChaCha8Rng,
    calibrate: bool,
) -> WhatIfScenario {
    let units = dataset.units_with_clinics(UnitKind::Lga);
    loop {
        let unit = &units[rng.random_range(0..units.len())];
        let closed: Vec<&ClinicRecord> = dataset
            .clinics_in(UnitKind::Lga, unit)
            .into_iter()
            .filter(|c| is_closed(c, SATURDAY))
            .collect();
        if closed.is_empty() {
            continue;
        }
        let clinic = closed[rng.random_range(0..closed.len())];
        let mut schedule = clinic.schedule.clone();
        schedule.open_range(SATURDAY, NINE, NINE + 12);
        let (from, to) = random_week(dataset, rng);
        return WhatIfScenario {
            unit_kind: UnitKind::Lga,
            unit_id: unit.clone(),
            from,
            to,
            calibrate,
            edits: vec![ClinicEdit {
                clinic_id: clinic.clinic_id.clone(),
                factors: None,
                schedule: Some(ScheduleEdit::from(&schedule)),
            }],
        };
    }
}

/// Open up to two clinics of a multi-clinic unit 09:00-17:00 on both weekend
/// days, always leaving at least one clinic unedited.
pub fn weekend_scenario(dataset: &AggregatedDataset, rng: &mut ChaCha8Rng) -> WhatIfScenario {
    let units: Vec<String> = dataset
        .units_with_clinics(UnitKind::Lga)
        .into_iter()
        .filter(|u| dataset.clinics_in(UnitKind::Lga, u).len() >= 2)
        .collect();
    let unit = &units[rng.random_range(0..units.len())];
    let clinics = dataset.clinics_in(UnitKind::Lga, unit);
    let mut order: Vec<&ClinicRecord> = clinics.clone();
    // prefer weekday-only clinics, as in the reference case study
    order.sort_by_key(|c| !(is_closed(c, SATURDAY) && is_closed(c, SUNDAY)));
    let n_edit = (clinics.len() - 1).min(2);
    let edits = order[..n_edit]
        .iter()
        .map(|c| {
            let mut schedule = c.schedule.clone();
            schedule.open_range(SATURDAY, NINE, NINE + 16);
            schedule.open_range(SUNDAY, NINE, NINE + 16);
            ClinicEdit {
                clinic_id: c.clinic_id.clone(),
                factors: None,
                schedule: Some(ScheduleEdit::from(&schedule)),
            }
        })
        .collect();
    let (from, to) = random_week(dataset, rng);
    WhatIfScenario {
        unit_kind: UnitKind::Lga,
        unit_id: unit.clone(),
        from,
        to,
        calibrate: true,
        edits,
    }
}
