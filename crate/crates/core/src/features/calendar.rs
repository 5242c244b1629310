use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::ingest::{Direction, InterventionRecord};

/// Which hemisphere's seasons to use. Season 1 is always spring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemisphere {
    #[default]
    Southern,
    Northern,
}

/// `(day_of_week, season)`: Monday = 1 .. Sunday = 7, and
/// 1 = spring, 2 = summer, 3 = autumn, 4 = winter.
pub fn day_scalars(date: NaiveDate, hemisphere: Hemisphere) -> (u8, u8) {
    let dow = date.weekday().number_from_monday() as u8;
    let month = date.month();
    let southern = match month {
        9..=11 => 1,
        12 | 1 | 2 => 2,
        3..=5 => 3,
        _ => 4,
    };
    let season = match hemisphere {
        Hemisphere::Southern => southern,
        // shift by two seasons
        Hemisphere::Northern => (southern + 1) % 4 + 1,
    };
    (dow, season)
}

/// Strictest level active on a date and the distinct directions active.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveInterventions {
    pub level: u8,
    pub directions: Vec<Direction>,
}

pub fn intervention_level(date: NaiveDate, interventions: &[InterventionRecord]) -> ActiveInterventions {
    let mut level = 0;
    let mut directions = Vec::new();
    for record in interventions.iter().filter(|i| i.covers(date)) {
        level = level.max(record.level);
        if !directions.contains(&record.direction) {
            directions.push(record.direction);
        }
    }
    directions.sort();
    ActiveInterventions { level, directions }
}
