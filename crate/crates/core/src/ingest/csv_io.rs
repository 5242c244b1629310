use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::aggregate::{build_aggregate, clean_counts, AggregateInputs};
use super::{
    AggregatedDataset, ClinicRecord, CountKind, DemographicRecord, Factors, IngestError,
    InterventionRecord, Period, RawCountRow, Schedule, TestEvent, TestResult, UnitKind,
};

/// All parsed inputs of one input directory, before cleaning.
#[derive(Debug, Clone, Default)]
pub struct InputBundle {
    pub tests: Vec<RawCountRow>,
    pub cases: Vec<RawCountRow>,
    pub clinics: Vec<ClinicRecord>,
    pub interventions: Vec<InterventionRecord>,
    pub demographics: Vec<DemographicRecord>,
}

/// Read `tests.csv`, `cases.csv`, `clinics.csv`, `interventions.csv` and
/// `census.csv` from `dir`.
pub fn load_input_dir(dir: &Path) -> Result<InputBundle, IngestError> {
    read_inputs(|name| {
        File::open(dir.join(name)).map_err(|e| IngestError::Parse {
            file: name.to_string(),
            line: 0,
            message: e.to_string(),
        })
    })
}

/// Parse the five input files, obtaining each reader from `open(file_name)`.
pub fn read_inputs<R: Read>(
    mut open: impl FnMut(&str) -> Result<R, IngestError>,
) -> Result<InputBundle, IngestError> {
    Ok(InputBundle {
        tests: parse_counts(open("tests.csv")?, CountKind::Tests, "tests.csv")?,
        cases: parse_counts(open("cases.csv")?, CountKind::Cases, "cases.csv")?,
        clinics: parse_clinics(open("clinics.csv")?)?,
        interventions: parse_interventions(open("interventions.csv")?)?,
        demographics: parse_census(open("census.csv")?)?,
    })
}

impl InputBundle {
    /// First and last date found in the tests and cases files.
    pub fn count_period(&self) -> Option<Period> {
        let dates = self.tests.iter().chain(&self.cases).map(|r| r.date);
        let first = dates.clone().min()?;
        let last = dates.max()?;
        Period::new(first, last).ok()
    }

    /// Drop self-reported rows and aggregate over `period`, or over the
    /// count period when none is given.
    pub fn aggregate(self, period: Option<Period>) -> Result<AggregatedDataset, IngestError> {
        let period = match period {
            Some(p) => p,
            None => self
                .count_period()
                .ok_or_else(|| IngestError::Period("no count rows to derive a period from".into()))?,
        };
        build_aggregate(
            AggregateInputs {
                tests: clean_counts(self.tests),
                cases: clean_counts(self.cases),
                clinics: self.clinics,
                interventions: self.interventions,
                demographics: self.demographics,
            },
            period,
        )
    }
}

fn read_rows<T: DeserializeOwned>(
    reader: impl Read,
    file: &str,
) -> Result<Vec<(usize, T)>, IngestError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for result in csv.deserialize::<T>() {
        match result {
            Ok(row) => rows.push((rows.len() + 2, row)),
            Err(err) => {
                let line = err
                    .position()
                    .map_or(rows.len() + 2, |p| p.line() as usize);
                return Err(IngestError::Parse {
                    file: file.to_string(),
                    line,
                    message: err.to_string(),
                });
            }
        }
    }
    Ok(rows)
}

fn parse_error(file: &str, line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Parse {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn parse_date(file: &str, line: usize, text: &str) -> Result<NaiveDate, IngestError> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|e| parse_error(file, line, format!("bad date `{text}`: {e}")))
}

fn parse_flag(file: &str, line: usize, column: &str, text: &str) -> Result<bool, IngestError> {
    match text {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(parse_error(
            file,
            line,
            format!("{column} must be 0 or 1, got `{other}`"),
        )),
    }
}

#[derive(Deserialize)]
struct CountCsv {
    date: String,
    unit_kind: String,
    unit_id: String,
    count: i64,
    self_reported: String,
}

/// Parse `tests.csv` or `cases.csv` (`date,unit_kind,unit_id,count,self_reported`).
pub fn parse_counts(
    reader: impl Read,
    kind: CountKind,
    file: &str,
) -> Result<Vec<RawCountRow>, IngestError> {
    read_rows::<CountCsv>(reader, file)?
        .into_iter()
        .map(|(line, row)| {
            if row.unit_id.is_empty() {
                return Err(parse_error(file, line, "empty unit_id"));
            }
            if row.count < 0 {
                return Err(parse_error(file, line, format!("negative count {}", row.count)));
            }
            Ok(RawCountRow {
                date: parse_date(file, line, &row.date)?,
                unit_kind: row
                    .unit_kind
                    .parse::<UnitKind>()
                    .map_err(|e| parse_error(file, line, e))?,
                unit_id: row.unit_id,
                count: row.count as u64,
                kind,
                self_reported: parse_flag(file, line, "self_reported", &row.self_reported)?,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct ClinicCsv {
    clinic_id: String,
    name: String,
    lga_id: String,
    postcode: String,
    lat: f64,
    lon: f64,
    referral: String,
    age_limit: String,
    booking: String,
    walkin: String,
    drivethrough: String,
    wheelchair: String,
    schedule: String,
}

pub fn parse_clinics(reader: impl Read) -> Result<Vec<ClinicRecord>, IngestError> {
    const FILE: &str = "clinics.csv";
    read_rows::<ClinicCsv>(reader, FILE)?
        .into_iter()
        .map(|(line, row)| {
            if row.clinic_id.is_empty() || row.lga_id.is_empty() {
                return Err(parse_error(FILE, line, "empty clinic_id or lga_id"));
            }
            let flags = [
                ("referral", &row.referral),
                ("age_limit", &row.age_limit),
                ("booking", &row.booking),
                ("walkin", &row.walkin),
                ("drivethrough", &row.drivethrough),
                ("wheelchair", &row.wheelchair),
            ];
            let mut factors = Factors::default();
            for (i, (column, text)) in flags.into_iter().enumerate() {
                factors.set(i, parse_flag(FILE, line, column, text)?);
            }
            let schedule = row
                .schedule
                .parse::<Schedule>()
                .map_err(|e| parse_error(FILE, line, e.to_string()))?;
            Ok(ClinicRecord {
                clinic_id: row.clinic_id,
                name: row.name,
                lga_id: row.lga_id,
                postcode: row.postcode,
                latitude: row.lat,
                longitude: row.lon,
                factors,
                schedule,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct InterventionCsv {
    start: String,
    end: String,
    level: i64,
    direction: String,
    label: String,
}

pub fn parse_interventions(reader: impl Read) -> Result<Vec<InterventionRecord>, IngestError> {
    const FILE: &str = "interventions.csv";
    read_rows::<InterventionCsv>(reader, FILE)?
        .into_iter()
        .map(|(line, row)| {
            let start_date = parse_date(FILE, line, &row.start)?;
            let end_date = parse_date(FILE, line, &row.end)?;
            if start_date > end_date {
                return Err(parse_error(FILE, line, "start is after end"));
            }
            if !(0..=3).contains(&row.level) {
                return Err(parse_error(FILE, line, format!("level {} outside 0-3", row.level)));
            }
            Ok(InterventionRecord {
                start_date,
                end_date,
                level: row.level as u8,
                direction: row
                    .direction
                    .parse()
                    .map_err(|e: String| parse_error(FILE, line, e))?,
                label: row.label,
            })
        })
        .collect()
}

#[derive(Deserialize)]
struct CensusCsv {
    unit_id: String,
    population: i64,
    area_km2: f64,
}

pub fn parse_census(reader: impl Read) -> Result<Vec<DemographicRecord>, IngestError> {
    const FILE: &str = "census.csv";
    read_rows::<CensusCsv>(reader, FILE)?
        .into_iter()
        .map(|(line, row)| {
            if row.population < 0 {
                return Err(parse_error(FILE, line, "negative population"));
            }
            DemographicRecord::new(row.unit_id, row.population as u64, row.area_km2)
                .map_err(|e| parse_error(FILE, line, e.to_string()))
        })
        .collect()
}

#[derive(Deserialize)]
struct EventCsv {
    person_id: String,
    date: String,
    result: String,
}

/// Parse per-person test events (`person_id,date,result` with result
/// `negative`/`positive`).
pub fn parse_test_events(reader: impl Read) -> Result<Vec<TestEvent>, IngestError> {
    const FILE: &str = "events.csv";
    read_rows::<EventCsv>(reader, FILE)?
        .into_iter()
        .map(|(line, row)| {
            let result = match row.result.to_ascii_lowercase().as_str() {
                "negative" | "neg" | "0" => TestResult::Negative,
                "positive" | "pos" | "1" => TestResult::Positive,
                other => return Err(parse_error(FILE, line, format!("unknown result `{other}`"))),
            };
            Ok(TestEvent {
                person_id: row.person_id,
                date: parse_date(FILE, line, &row.date)?,
                result,
            })
        })
        .collect()
}

fn flag(value: bool) -> &'static str {
    if value {
        "1"
    } else {
        "0"
    }
}

fn into_string(writer: csv::Writer<Vec<u8>>) -> Result<String, IngestError> {
    let bytes = writer
        .into_inner()
        .map_err(|e| IngestError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_counts(rows: &[RawCountRow]) -> Result<String, IngestError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["date", "unit_kind", "unit_id", "count", "self_reported"])?;
    for row in rows {
        w.write_record([
            row.date.to_string(),
            row.unit_kind.to_string(),
            row.unit_id.clone(),
            row.count.to_string(),
            flag(row.self_reported).to_string(),
        ])?;
    }
    into_string(w)
}

pub fn write_clinics(clinics: &[ClinicRecord]) -> Result<String, IngestError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "clinic_id",
        "name",
        "lga_id",
        "postcode",
        "lat",
        "lon",
        "referral",
        "age_limit",
        "booking",
        "walkin",
        "drivethrough",
        "wheelchair",
        "schedule",
    ])?;
    for c in clinics {
        let mut record = vec![
            c.clinic_id.clone(),
            c.name.clone(),
            c.lga_id.clone(),
            c.postcode.clone(),
            format!("{:.6}", c.latitude),
            format!("{:.6}", c.longitude),
        ];
        record.extend(c.factors.0.iter().map(|&f| flag(f).to_string()));
        record.push(c.schedule.to_string());
        w.write_record(&record)?;
    }
    into_string(w)
}

pub fn write_interventions(interventions: &[InterventionRecord]) -> Result<String, IngestError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["start", "end", "level", "direction", "label"])?;
    for i in interventions {
        w.write_record([
            i.start_date.to_string(),
            i.end_date.to_string(),
            i.level.to_string(),
            i.direction.to_string(),
            i.label.clone(),
        ])?;
    }
    into_string(w)
}

pub fn write_census(records: &[DemographicRecord]) -> Result<String, IngestError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["unit_id", "population", "area_km2"])?;
    for r in records {
        w.write_record([
            r.unit_id.clone(),
            r.population.to_string(),
            format!("{:.3}", r.area_km2),
        ])?;
    }
    into_string(w)
}
