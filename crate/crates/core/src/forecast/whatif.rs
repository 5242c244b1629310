use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{Capacity, ForecastError, Forecaster, PredictionSet};
use crate::ingest::{Factors, Schedule, UnitKind};

/// A new weekly schedule for a clinic: either a `7 x 48` grid of booleans or
/// the 336-character `0`/`1` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleEdit {
    Grid(Vec<Vec<bool>>),
    Encoded(String),
}

impl ScheduleEdit {
    pub fn to_schedule(&self) -> Result<Schedule, ForecastError> {
        match self {
            ScheduleEdit::Grid(grid) => {
                Schedule::from_grid(grid).map_err(|e| ForecastError::InvalidEdit(e.to_string()))
            }
            ScheduleEdit::Encoded(text) => text
                .parse()
                .map_err(|e: crate::ingest::IngestError| ForecastError::InvalidEdit(e.to_string())),
        }
    }
}

impl From<&Schedule> for ScheduleEdit {
    fn from(schedule: &Schedule) -> Self {
        ScheduleEdit::Encoded(schedule.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicEdit {
    pub clinic_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factors: Option<Factors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleEdit>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfScenario {
    #[serde(default)]
    pub unit_kind: UnitKind,
    pub unit_id: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    #[serde(default = "yes")]
    pub calibrate: bool,
    #[serde(default)]
    pub edits: Vec<ClinicEdit>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effect {
    pub clinic_id: String,
    pub date: NaiveDate,
    pub initial: Capacity,
    pub updated: Capacity,
    /// `updated - initial`.
    pub effect: Capacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EffectSummary {
    /// Sum of the positive effects.
    pub positive: Capacity,
    /// Sum of the negative effects (zero or below).
    pub negative: Capacity,
    pub net: Capacity,
    pub positive_cells: usize,
    pub negative_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResult {
    pub scenario: WhatIfScenario,
    pub initial: PredictionSet,
    pub updated: PredictionSet,
    pub effects: Vec<Effect>,
    pub summary: EffectSummary,
}

impl WhatIfResult {
    /// `clinic_id,date,initial,updated,effect`, in effect order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("clinic_id,date,initial,updated,effect\n");
        for e in &self.effects {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.clinic_id, e.date, e.initial, e.updated, e.effect
            ));
        }
        out
    }

    /// Nonzero effects on clinics outside the edit set.
    pub fn unedited_changes(&self) -> Vec<&Effect> {
        let edited: BTreeSet<&str> = self.scenario.edits.iter().map(|e| e.clinic_id.as_str()).collect();
        self.effects
            .iter()
            .filter(|e| !edited.contains(e.clinic_id.as_str()) && e.effect != Capacity::ZERO)
            .collect()
    }
}

/// Predict the scenario's unit from its stored clinics and again with the
/// edits applied, and report the per-cell difference. Stored records are
/// never modified.
pub fn run_whatif(forecaster: &Forecaster<'_>, scenario: &WhatIfScenario) -> Result<WhatIfResult, ForecastError> {
    let forecaster = Forecaster::with_kind(forecaster.model, forecaster.dataset, scenario.unit_kind)?;
    if scenario.from > scenario.to {
        return Err(ForecastError::EmptyRange(scenario.from, scenario.to));
    }
    let stored = forecaster.unit_clinics(&scenario.unit_id)?;
    let mut edited = stored.clone();
    let mut seen = BTreeSet::new();
    for edit in &scenario.edits {
        if !seen.insert(edit.clinic_id.as_str()) {
            return Err(ForecastError::DuplicateEdit(edit.clinic_id.clone()));
        }
        let clinic = edited
            .iter_mut()
            .find(|c| c.clinic_id == edit.clinic_id)
            .ok_or_else(|| ForecastError::ForeignClinic {
                clinic_id: edit.clinic_id.clone(),
                kind: scenario.unit_kind,
                unit_id: scenario.unit_id.clone(),
            })?;
        if let Some(factors) = edit.factors {
            clinic.factors = factors;
        }
        if let Some(schedule) = &edit.schedule {
            clinic.schedule = schedule.to_schedule()?;
        }
    }

    let (from, to, calibrate) = (scenario.from, scenario.to, scenario.calibrate);
    let initial = forecaster.breakdown_for(&scenario.unit_id, &stored, from, to, calibrate)?;
    let updated = forecaster.breakdown_for(&scenario.unit_id, &edited, from, to, calibrate)?;

    let mut effects = Vec::new();
    let mut summary = EffectSummary::default();
    for (before, after) in initial.predictions().zip(updated.predictions()) {
        let effect = after.y_clinic - before.y_clinic;
        if effect > Capacity::ZERO {
            summary.positive = summary.positive + effect;
            summary.positive_cells += 1;
        } else if effect < Capacity::ZERO {
            summary.negative = summary.negative + effect;
            summary.negative_cells += 1;
        }
        effects.push(Effect {
            clinic_id: before.clinic_id.clone(),
            date: before.date,
            initial: before.y_clinic,
            updated: after.y_clinic,
            effect,
        });
    }
    summary.net = summary.positive + summary.negative;
    Ok(WhatIfResult {
        scenario: scenario.clone(),
        initial,
        updated,
        effects,
        summary,
    })
}
