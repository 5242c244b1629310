//! Raw input parsing, cleaning and aggregation.
//!
//! Inputs are the five CSV files described in the README (`tests.csv`,
//! `cases.csv`, `clinics.csv`, `interventions.csv`, `census.csv`). They are
//! parsed into the record types below, self-reported rows are dropped by
//! [`clean_counts`], and [`build_aggregate`] produces a gap-free
//! [`AggregatedDataset`].

mod aggregate;
mod counting;
mod csv_io;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use aggregate::{build_aggregate, clean_counts, AggregateInputs};
pub use counting::{apply_counting_rule, counted_events, tests_from_events};
pub use csv_io::{
    load_input_dir, parse_census, parse_clinics, parse_counts, parse_interventions, read_inputs,
    parse_test_events, write_census, write_clinics, write_counts, write_interventions,
    InputBundle,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("events are not sorted by date: {0} follows {1}")]
    Unsorted(NaiveDate, NaiveDate),
    #[error("events belong to more than one person ({0} and {1})")]
    MixedPersons(String, String),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("clinics reference unknown units: {}", .0.join(", "))]
    UnknownUnits(Vec<String>),
    #[error("duplicate {kind} row for {unit_kind} {unit_id} on {date}")]
    Duplicate {
        unit_kind: UnitKind,
        unit_id: String,
        date: NaiveDate,
        kind: CountKind,
    },
    #[error("invalid period: {0}")]
    Period(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Spatial unit under which counts are released.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    #[default]
    Lga,
    Postcode,
}

impl fmt::Display for UnitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitKind::Lga => "LGA",
            UnitKind::Postcode => "Postcode",
        })
    }
}

impl FromStr for UnitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lga" => Ok(UnitKind::Lga),
            "postcode" => Ok(UnitKind::Postcode),
            other => Err(format!("unknown unit kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountKind {
    Tests,
    Cases,
}

impl fmt::Display for CountKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CountKind::Tests => "tests",
            CountKind::Cases => "cases",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestResult {
    Negative,
    Positive,
}

/// A single test taken by one person.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestEvent {
    pub person_id: String,
    pub date: NaiveDate,
    pub result: TestResult,
}

/// One row of `tests.csv` or `cases.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCountRow {
    pub date: NaiveDate,
    pub unit_kind: UnitKind,
    pub unit_id: String,
    pub count: u64,
    pub kind: CountKind,
    pub self_reported: bool,
}

/// Names of the six binary service factors, in storage order.
pub const FACTOR_NAMES: [&str; 6] = [
    "referral_required",
    "age_limit",
    "booking_required",
    "walkin_allowed",
    "drivethrough_allowed",
    "wheelchair_accessible",
];

pub const REFERRAL: usize = 0;
pub const AGE_LIMIT: usize = 1;
pub const BOOKING: usize = 2;
pub const WALK_IN: usize = 3;
pub const DRIVE_THROUGH: usize = 4;
pub const WHEELCHAIR: usize = 5;

/// The six binary service factors of a clinic, in [`FACTOR_NAMES`] order.
///
/// Serialized as a JSON array of six booleans.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Factors(pub [bool; 6]);

impl Factors {
    pub fn get(&self, index: usize) -> bool {
        self.0[index]
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.0[index] = value;
    }

    pub fn as_counts(&self) -> [u32; 6] {
        self.0.map(u32::from)
    }
}

pub const DAYS_PER_WEEK: usize = 7;
pub const BLOCKS_PER_DAY: usize = 48;
pub const SCHEDULE_CELLS: usize = DAYS_PER_WEEK * BLOCKS_PER_DAY;

/// Weekly opening grid: 7 rows (Monday first) of 48 half-hour blocks
/// (block 0 is 00:00-00:30). Stored row-major.
///
/// The textual form is 336 characters of `0`/`1`, which is also how the
/// schedule is serialized in JSON.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Schedule {
    cells: Vec<bool>,
}

impl Schedule {
    pub fn closed() -> Self {
        Schedule {
            cells: vec![false; SCHEDULE_CELLS],
        }
    }

    pub fn from_cells(cells: Vec<bool>) -> Result<Self, IngestError> {
        if cells.len() != SCHEDULE_CELLS {
            return Err(IngestError::Invalid(format!(
                "schedule has {} cells, expected {SCHEDULE_CELLS}",
                cells.len()
            )));
        }
        Ok(Schedule { cells })
    }

    /// Build from a `7 x 48` grid; any other shape is rejected.
    pub fn from_grid(grid: &[Vec<bool>]) -> Result<Self, IngestError> {
        if grid.len() != DAYS_PER_WEEK || grid.iter().any(|row| row.len() != BLOCKS_PER_DAY) {
            return Err(IngestError::Invalid(format!(
                "schedule grid must be {DAYS_PER_WEEK}x{BLOCKS_PER_DAY}"
            )));
        }
        Ok(Schedule {
            cells: grid.iter().flatten().copied().collect(),
        })
    }

    pub fn is_open(&self, day: usize, block: usize) -> bool {
        self.cells[day * BLOCKS_PER_DAY + block]
    }

    pub fn set(&mut self, day: usize, block: usize, open: bool) {
        self.cells[day * BLOCKS_PER_DAY + block] = open;
    }

    /// Open `[from_block, to_block)` on `day`.
    pub fn open_range(&mut self, day: usize, from_block: usize, to_block: usize) {
        for block in from_block..to_block.min(BLOCKS_PER_DAY) {
            self.set(day, block, true);
        }
    }

    pub fn day(&self, day: usize) -> &[bool] {
        &self.cells[day * BLOCKS_PER_DAY..(day + 1) * BLOCKS_PER_DAY]
    }

    pub fn open_blocks(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &cell in &self.cells {
            f.write_str(if cell { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Schedule({self})")
    }
}

impl FromStr for Schedule {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cells = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(IngestError::Invalid(format!(
                    "schedule contains `{other}`, expected 0 or 1"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Schedule::from_cells(cells)
    }
}

impl Serialize for Schedule {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Schedule {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicRecord {
    pub clinic_id: String,
    pub name: String,
    pub lga_id: String,
    pub postcode: String,
    pub latitude: f64,
    pub longitude: f64,
    pub factors: Factors,
    pub schedule: Schedule,
}

impl ClinicRecord {
    /// Id of the unit this clinic belongs to under `kind`.
    pub fn unit_id(&self, kind: UnitKind) -> &str {
        match kind {
            UnitKind::Lga => &self.lga_id,
            UnitKind::Postcode => &self.postcode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Eased,
    Restriction,
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eased" | "ease" | "easing" => Ok(Direction::Eased),
            "restriction" | "restricted" => Ok(Direction::Restriction),
            other => Err(format!("unknown intervention direction `{other}`")),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Eased => "eased",
            Direction::Restriction => "restriction",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub level: u8,
    pub direction: Direction,
    pub label: String,
}

impl InterventionRecord {
    pub fn covers(&self, date: NaiveDate) -> bool {
        self.start_date <= date && date <= self.end_date
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicRecord {
    pub unit_id: String,
    pub population: u64,
    pub area_km2: f64,
    /// Persons per km².
    pub density: f64,
}

impl DemographicRecord {
    pub fn new(unit_id: impl Into<String>, population: u64, area_km2: f64) -> Result<Self, IngestError> {
        let unit_id = unit_id.into();
        if !area_km2.is_finite() || area_km2 <= 0.0 {
            return Err(IngestError::Invalid(format!(
                "census area for {unit_id} must be positive, got {area_km2}"
            )));
        }
        Ok(DemographicRecord {
            density: population as f64 / area_km2,
            unit_id,
            population,
            area_km2,
        })
    }
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Period {
    pub first: NaiveDate,
    pub last: NaiveDate,
}

impl Period {
    pub fn new(first: NaiveDate, last: NaiveDate) -> Result<Self, IngestError> {
        if first > last {
            return Err(IngestError::Period(format!("{first} is after {last}")));
        }
        Ok(Period { first, last })
    }

    /// Number of days, both ends included.
    pub fn days(&self) -> usize {
        (self.last - self.first).num_days() as usize + 1
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.first <= date && date <= self.last
    }

    pub fn contains_period(&self, other: &Period) -> bool {
        self.contains(other.first) && self.contains(other.last)
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + Clone {
        self.first.iter_days().take(self.days())
    }

    /// Zero-based day offset of `date` from the start of the period.
    pub fn offset(&self, date: NaiveDate) -> i64 {
        (date - self.first).num_days()
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.first, self.last)
    }
}

/// One unit on one date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionDay {
    pub unit_kind: UnitKind,
    pub unit_id: String,
    pub date: NaiveDate,
    pub tests: u64,
    pub cases: u64,
    /// Set when the tests or cases row was missing from the input and filled with 0.
    pub imputed: bool,
}

/// The cleaned, gap-free dataset every downstream stage reads.
///
/// `region_days` holds exactly one row per (unit, date) for every unit that
/// has at least one clinic, sorted by (unit kind, unit id, date).
/// `display_days` holds the same for units that appear in the inputs but have
/// no clinics; they are kept for map display only and never modelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedDataset {
    pub period: Period,
    pub region_days: Vec<RegionDay>,
    pub display_days: Vec<RegionDay>,
    pub clinics: Vec<ClinicRecord>,
    pub interventions: Vec<InterventionRecord>,
    pub demographics: Vec<DemographicRecord>,
    /// Clinics whose schedule has no open block at all. Accepted but reported.
    #[serde(default)]
    pub flagged_clinics: Vec<String>,
}

impl AggregatedDataset {
    pub fn clinics_in(&self, kind: UnitKind, unit_id: &str) -> Vec<&ClinicRecord> {
        self.clinics.iter().filter(|c| c.unit_id(kind) == unit_id).collect()
    }

    pub fn demographics_for(&self, unit_id: &str) -> Option<&DemographicRecord> {
        self.demographics.iter().find(|d| d.unit_id == unit_id)
    }

    /// Distinct ids of modelled units of `kind`, ascending.
    pub fn units_with_clinics(&self, kind: UnitKind) -> Vec<String> {
        let mut ids: Vec<String> = self
            .clinics
            .iter()
            .map(|c| c.unit_id(kind).to_string())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// All unit ids of `kind` present in the dataset (modelled and display-only), ascending.
    pub fn all_units(&self, kind: UnitKind) -> Vec<String> {
        let mut ids: Vec<String> = self
            .region_days
            .iter()
            .chain(&self.display_days)
            .filter(|r| r.unit_kind == kind)
            .map(|r| r.unit_id.clone())
            .collect();
        ids.dedup();
        ids.sort();
        ids.dedup();
        ids
    }
}
