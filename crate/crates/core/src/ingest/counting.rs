use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::{IngestError, TestEvent, TestResult};

/// Number of tests that count towards the released totals for one person.
///
/// Every negative test before the first positive counts, the first positive
/// counts once, and nothing after it counts.
pub fn apply_counting_rule(history: &[TestEvent]) -> Result<u64, IngestError> {
    Ok(counted_events(history)?.len() as u64)
}

/// The prefix of `history` that is counted. See [`apply_counting_rule`].
pub fn counted_events(history: &[TestEvent]) -> Result<&[TestEvent], IngestError> {
    for pair in history.windows(2) {
        if pair[1].date < pair[0].date {
            return Err(IngestError::Unsorted(pair[1].date, pair[0].date));
        }
        if pair[1].person_id != pair[0].person_id {
            return Err(IngestError::MixedPersons(
                pair[0].person_id.clone(),
                pair[1].person_id.clone(),
            ));
        }
    }
    let end = history
        .iter()
        .position(|e| e.result == TestResult::Positive)
        .map_or(history.len(), |first_positive| first_positive + 1);
    Ok(&history[..end])
}

/// Daily counted tests from per-person events of any number of people.
///
/// Events are grouped by person and ordered by date (stable, so same-day
/// events keep their input order) before the counting rule is applied.
pub fn tests_from_events(events: &[TestEvent]) -> BTreeMap<NaiveDate, u64> {
    let mut by_person: BTreeMap<&str, Vec<TestEvent>> = BTreeMap::new();
    for event in events {
        by_person
            .entry(event.person_id.as_str())
            .or_default()
            .push(event.clone());
    }
    let mut daily = BTreeMap::new();
    for mut history in by_person.into_values() {
        history.sort_by_key(|e| e.date);
        let counted = counted_events(&history).expect("history was sorted and grouped");
        for event in counted {
            *daily.entry(event.date).or_insert(0) += 1;
        }
    }
    daily
}
