//! Snapshot persistence and read-only queries over an [`AggregatedDataset`].
//!
//! # Snapshot format (version 1)
//!
//! A snapshot file is a UTF-8 JSON document followed by a checksum trailer:
//!
//! ```text
//! {"schema_version":1,"created_at":"2024-01-01T00:00:00Z","dataset":{...}}
//! #sha256:<64 lowercase hex digits>
//! ```
//!
//! The digest covers every byte before the trailer's leading newline, so any
//! single-byte change anywhere in the file is detected before the payload is
//! interpreted. The schema version is checked after the checksum.

use std::fs;
use std::path::Path;

use chrono::{NaiveDate, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{AggregatedDataset, RegionDay, UnitKind};

pub const SCHEMA_VERSION: u32 = 1;

const TRAILER: &str = "\n#sha256:";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("snapshot checksum mismatch (expected {expected}, computed {actual})")]
    Checksum { expected: String, actual: String },
    #[error("snapshot schema version {found} is not supported (reader expects {expected})")]
    Schema { found: u32, expected: u32 },
    #[error("snapshot payload is malformed: {0}")]
    Malformed(String),
    #[error("unknown {kind} unit `{id}`")]
    UnknownUnit { kind: UnitKind, id: String },
    #[error("{kind} unit `{id}` has no clinics")]
    NoClinics { kind: UnitKind, id: String },
    #[error("invalid date range {from}..={to}: {reason}")]
    InvalidRange {
        from: NaiveDate,
        to: NaiveDate,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub created_at: String,
    #[serde(skip)]
    pub checksum: String,
    pub dataset: AggregatedDataset,
}

#[derive(Serialize)]
struct PayloadRef<'a> {
    schema_version: u32,
    created_at: &'a str,
    dataset: &'a AggregatedDataset,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u32,
}

fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Encode a dataset in the snapshot format, returning the bytes and checksum.
pub fn encode_snapshot(
    dataset: &AggregatedDataset,
    schema_version: u32,
    created_at: &str,
) -> (Vec<u8>, String) {
    let mut bytes = serde_json::to_vec(&PayloadRef {
        schema_version,
        created_at,
        dataset,
    })
    .expect("dataset serializes");
    let checksum = digest_hex(&bytes);
    bytes.extend_from_slice(TRAILER.as_bytes());
    bytes.extend_from_slice(checksum.as_bytes());
    bytes.push(b'\n');
    (bytes, checksum)
}

/// Verify and decode snapshot bytes.
pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot, DatasetError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let split = find_last(body, TRAILER.as_bytes());
    let Some(split) = split else {
        return Err(DatasetError::Checksum {
            expected: "<missing trailer>".into(),
            actual: digest_hex(body),
        });
    };
    let payload = &body[..split];
    let expected = String::from_utf8_lossy(&body[split + TRAILER.len()..]).into_owned();
    let actual = digest_hex(payload);
    if expected != actual {
        return Err(DatasetError::Checksum { expected, actual });
    }
    let probe: VersionProbe =
        serde_json::from_slice(payload).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    if probe.schema_version != SCHEMA_VERSION {
        return Err(DatasetError::Schema {
            found: probe.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    let mut snapshot: Snapshot =
        serde_json::from_slice(payload).map_err(|e| DatasetError::Malformed(e.to_string()))?;
    snapshot.checksum = actual;
    Ok(snapshot)
}

fn find_last(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).rposition(|w| w == needle)
}

/// Write `dataset` to `path`, stamped with the current time.
pub fn save_snapshot(dataset: &AggregatedDataset, path: &Path) -> Result<Snapshot, DatasetError> {
    let created_at = Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true);
    let (bytes, checksum) = encode_snapshot(dataset, SCHEMA_VERSION, &created_at);
    fs::write(path, bytes)?;
    Ok(Snapshot {
        schema_version: SCHEMA_VERSION,
        created_at,
        checksum,
        dataset: dataset.clone(),
    })
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot, DatasetError> {
    decode_snapshot(&fs::read(path)?)
}

pub fn load_snapshot(path: &Path) -> Result<AggregatedDataset, DatasetError> {
    Ok(read_snapshot(path)?.dataset)
}

fn unit_rows<'a>(rows: &'a [RegionDay], kind: UnitKind, unit_id: &str) -> &'a [RegionDay] {
    let lo = rows.partition_point(|r| (r.unit_kind, r.unit_id.as_str()) < (kind, unit_id));
    let hi = rows.partition_point(|r| (r.unit_kind, r.unit_id.as_str()) <= (kind, unit_id));
    &rows[lo..hi]
}

/// All stored rows of one unit, ascending by date. Modelled units are looked
/// up first, then display-only units.
pub fn unit_series<'a>(
    dataset: &'a AggregatedDataset,
    kind: UnitKind,
    unit_id: &str,
) -> Result<&'a [RegionDay], DatasetError> {
    let rows = unit_rows(&dataset.region_days, kind, unit_id);
    let rows = if rows.is_empty() {
        unit_rows(&dataset.display_days, kind, unit_id)
    } else {
        rows
    };
    if rows.is_empty() {
        return Err(DatasetError::UnknownUnit {
            kind,
            id: unit_id.to_string(),
        });
    }
    Ok(rows)
}

/// Daily rows of one unit for `from..=to`, one per date, ascending.
pub fn query_series(
    dataset: &AggregatedDataset,
    kind: UnitKind,
    unit_id: &str,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<Vec<RegionDay>, DatasetError> {
    if from > to {
        return Err(DatasetError::InvalidRange {
            from,
            to,
            reason: "start is after end".into(),
        });
    }
    if !dataset.period.contains(from) || !dataset.period.contains(to) {
        return Err(DatasetError::InvalidRange {
            from,
            to,
            reason: format!("outside the dataset period {}", dataset.period),
        });
    }
    let rows = unit_series(dataset, kind, unit_id)?;
    let lo = rows.partition_point(|r| r.date < from);
    let hi = rows.partition_point(|r| r.date <= to);
    Ok(rows[lo..hi].to_vec())
}

/// Tests released by a unit on one date, if stored.
pub fn tests_on(dataset: &AggregatedDataset, kind: UnitKind, unit_id: &str, date: NaiveDate) -> Option<u64> {
    let rows = unit_series(dataset, kind, unit_id).ok()?;
    let i = rows.binary_search_by_key(&date, |r| r.date).ok()?;
    Some(rows[i].tests)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    OneToOne,
    MultipleToOne,
}

/// How many clinics map to a unit, and whether that makes a one-to-one or
/// multiple-to-one relation.
pub fn relation_kind(
    dataset: &AggregatedDataset,
    kind: UnitKind,
    unit_id: &str,
) -> Result<(RelationKind, usize), DatasetError> {
    let n = dataset
        .clinics
        .iter()
        .filter(|c| c.unit_id(kind) == unit_id)
        .count();
    match n {
        0 => {
            unit_series(dataset, kind, unit_id)?;
            Err(DatasetError::NoClinics {
                kind,
                id: unit_id.to_string(),
            })
        }
        1 => Ok((RelationKind::OneToOne, 1)),
        n => Ok((RelationKind::MultipleToOne, n)),
    }
}
