//! Seeded synthetic datasets with a hidden per-clinic ground truth.
//!
//! # Generative model
//!
//! Each clinic `c` in unit `u` has a daily weight
//!
//! ```text
//! w(c, dow) = open_hours(c, dow) * (1 - 0.08 * break_hours(c, dow)) * bonus(c)
//! ```
//!
//! where `bonus(c)` multiplies 0.70 (referral required), 0.85 (age limit),
//! 0.80 (booking required), 1.35 (walk-in), 1.25 (drive-through) and 1.10
//! (wheelchair accessible) for each factor the clinic has. A unit has a base
//! rate `s(u) = 40 * exp(scale_spread * z)` tests per weighted hour, with `z`
//! standard normal, and a demand multiplier per date
//!
//! ```text
//! M(d) = weekday_profile[dow] * season(d) * (1 + 0.25 * intervention_level(d)) * wave(d)
//! wave(d) = 1 + 0.5 * sin(2 * pi * t / 70)
//! ```
//!
//! The expected unit total is `E = M * C / (1 + coupling * C / K)` with
//! `C = s(u) * sum_c w(c, dow)` and a unit ceiling `K = 20 * s(u)`; with
//! `coupling = 0` the clinics are independent and the total is monotone and
//! linear in opening hours, with `coupling > 0` clinics compete for a
//! saturating demand. Clinic `c` receives the share `E * w(c) / sum w` with
//! multiplicative Gaussian noise of relative size `noise`, rounded to whole
//! tests.
//!
//! Each clinic-day truth is then split over release delays of 0-7 days by a
//! multinomial draw with `lag_weights`, and the releases landing inside the
//! period are summed per postcode and per LGA. Cases are binomial draws from
//! released tests with a slowly varying positivity, so `cases <= tests`.
//! Truth is simulated from `start - max_lag` so that the first days of the
//! period receive their delayed releases; [`ReleaseAccounting`] tracks what
//! falls outside the period on either side.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    write_census, write_clinics, write_counts, write_interventions, ClinicRecord, CountKind,
    DemographicRecord, Direction, Factors, IngestError, InterventionRecord, RawCountRow, Schedule,
    UnitKind, AGE_LIMIT, BOOKING, DRIVE_THROUGH, REFERRAL, WALK_IN, WHEELCHAIR,
};

pub const MAX_LAG: usize = 7;

const WEEKDAY_MULT: [f64; 7] = [1.10, 1.05, 1.00, 1.00, 0.95, 0.75, 0.60];
const FACTOR_MULT: [f64; 6] = [0.70, 0.85, 0.80, 1.35, 1.25, 1.10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// LGAs that have clinics.
    pub units: usize,
    /// LGAs without clinics (display-only).
    pub empty_units: usize,
    pub min_clinics: usize,
    pub max_clinics: usize,
    pub postcodes_per_unit: usize,
    pub start: NaiveDate,
    pub days: usize,
    /// Release delay weights for 0..=7 days; normalised internally.
    pub lag_weights: [f64; MAX_LAG + 1],
    /// Relative standard deviation of the per-clinic daily noise.
    pub noise: f64,
    /// Log-scale standard deviation of the unit base rates.
    pub scale_spread: f64,
    /// Demand multiplier per weekday, Monday first.
    pub weekday_profile: [f64; 7],
    /// Demand saturation strength, 0 = independent clinics.
    pub coupling: f64,
    /// Probability that a clinic is closed on both weekend days.
    pub weekday_only_fraction: f64,
    pub interventions: usize,
    /// Probability of an extra self-reported row per LGA-day and kind.
    pub self_reported_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            units: 6,
            empty_units: 1,
            min_clinics: 1,
            max_clinics: 5,
            postcodes_per_unit: 2,
            start: NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(),
            days: 120,
            lag_weights: [0.50, 0.22, 0.12, 0.06, 0.04, 0.03, 0.02, 0.01],
            noise: 0.08,
            scale_spread: 0.5,
            weekday_profile: WEEKDAY_MULT,
            coupling: 0.3,
            weekday_only_fraction: 0.3,
            interventions: 3,
            self_reported_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    /// The model-comparison benchmark: 25 units over 200 days (5,000 LGA
    /// rows) with a strong mid-week peak, so that demand is a product of the
    /// weekday and the unit scale rather than a sum.
    pub fn benchmark() -> Self {
        SynthConfig {
            units: 25,
            days: 200,
            lag_weights: [0.80, 0.12, 0.05, 0.03, 0.0, 0.0, 0.0, 0.0],
            weekday_profile: [0.6, 1.4, 1.8, 1.4, 0.6, 0.3, 0.2],
            ..Self::default()
        }
    }

    /// Independent clinics, no release lag and little noise: the unit total
    /// is strictly increasing in every clinic's opening hours.
    pub fn monotone() -> Self {
        SynthConfig {
            units: 40,
            days: 150,
            lag_weights: [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            noise: 0.03,
            coupling: 0.0,
            weekday_only_fraction: 0.4,
            ..Self::default()
        }
    }

    /// Strongly saturating demand: clinics of one unit compete.
    pub fn coupled() -> Self {
        SynthConfig {
            units: 30,
            days: 150,
            min_clinics: 2,
            coupling: 0.8,
            weekday_only_fraction: 0.4,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" | "default" => Some(Self::default()),
            "benchmark" => Some(Self::benchmark()),
            "monotone" => Some(Self::monotone()),
            "coupled" => Some(Self::coupled()),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), IngestError> {
        let fail = |m: &str| Err(IngestError::Config(m.to_string()));
        if self.units == 0 || self.days == 0 || self.postcodes_per_unit == 0 {
            return fail("units, days and postcodes_per_unit must be positive");
        }
        if self.min_clinics == 0 || self.max_clinics < self.min_clinics {
            return fail("clinic counts must satisfy 1 <= min_clinics <= max_clinics");
        }
        let total: f64 = self.lag_weights.iter().sum();
        if self.lag_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || total.is_nan() || total <= 0.0 {
            return fail("lag weights must be non-negative with a positive sum");
        }
        if self.weekday_profile.iter().any(|w| w.is_nan() || *w < 0.0) {
            return fail("weekday profile must be non-negative");
        }
        if [self.noise, self.coupling, self.scale_spread].iter().any(|x| x.is_nan() || *x < 0.0) {
            return fail("noise, scale_spread and coupling must be non-negative");
        }
        for p in [self.weekday_only_fraction, self.self_reported_fraction] {
            if !(0.0..=1.0).contains(&p) {
                return fail("fractions must lie in [0, 1]");
            }
        }
        Ok(())
    }

    fn max_lag(&self) -> usize {
        self.lag_weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    pub fn last_date(&self) -> NaiveDate {
        self.start + Days::new(self.days as u64 - 1)
    }
}

/// The released CSV files, keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthBundle {
    pub files: BTreeMap<String, String>,
}

impl SynthBundle {
    pub fn write_to(&self, dir: &Path) -> Result<(), IngestError> {
        fs::create_dir_all(dir)?;
        for (name, contents) in &self.files {
            fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }

    pub fn file(&self, name: &str) -> &str {
        &self.files[name]
    }

    /// Parse the bundle without touching the file system.
    pub fn inputs(&self) -> Result<super::InputBundle, IngestError> {
        super::read_inputs(|name| {
            self.files
                .get(name)
                .map(|text| text.as_bytes())
                .ok_or_else(|| IngestError::Invalid(format!("bundle has no `{name}`")))
        })
    }
}

/// One clinic's true tests on one date (before release delays).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicTruth {
    pub clinic_id: String,
    pub date: NaiveDate,
    pub tests: u64,
}

/// Where every simulated test ended up.
///
/// `truth_total = released_total + dropped_before_period + pending_after_period`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseAccounting {
    pub truth_total: u64,
    pub released_total: u64,
    /// Tests simulated before the period whose release also fell before it.
    pub dropped_before_period: u64,
    /// Tests whose release would fall after the last day of the period.
    pub pending_after_period: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// First simulated date (`start - max_lag`).
    pub simulated_from: NaiveDate,
    pub clinic_daily: Vec<ClinicTruth>,
    pub accounting: ReleaseAccounting,
}

impl GroundTruth {
    pub fn to_csv(&self) -> Result<String, IngestError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["clinic_id", "date", "tests"])?;
        for t in &self.clinic_daily {
            w.write_record([t.clinic_id.clone(), t.date.to_string(), t.tests.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| IngestError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

struct UnitPlan {
    lga_id: String,
    postcodes: Vec<String>,
    base_rate: f64,
    clinics: Vec<usize>,
}

fn season_multiplier(date: NaiveDate) -> f64 {
    match date.month() {
        9..=11 => 1.0,
        12 | 1 | 2 => 0.85,
        3..=5 => 1.0,
        _ => 1.2,
    }
}

/// Opening and break hours per weekday from a schedule.
fn day_hours(schedule: &Schedule, day: usize) -> (f64, f64) {
    let cells = schedule.day(day);
    let open = cells.iter().filter(|&&c| c).count();
    let first = cells.iter().position(|&c| c);
    let last = cells.iter().rposition(|&c| c);
    let gaps = match (first, last) {
        (Some(f), Some(l)) => cells[f..=l].iter().filter(|&&c| !c).count(),
        _ => 0,
    };
    (0.5 * open as f64, 0.5 * gaps as f64)
}

/// Relative daily weight of a clinic (see module docs).
pub fn clinic_weight(factors: &Factors, schedule: &Schedule, day: usize) -> f64 {
    let (open, gaps) = day_hours(schedule, day);
    if open == 0.0 {
        return 0.0;
    }
    let bonus: f64 = FACTOR_MULT
        .iter()
        .enumerate()
        .filter(|(i, _)| factors.get(*i))
        .map(|(_, m)| m)
        .product();
    open * (1.0 - 0.08 * gaps).max(0.2) * bonus
}

fn random_schedule(rng: &mut ChaCha8Rng, weekday_only: f64) -> Schedule {
    const LENGTHS: [usize; 6] = [9, 12, 14, 16, 18, 20];
    let mut schedule = Schedule::closed();
    let start = rng.random_range(14..=20);
    let length = LENGTHS[rng.random_range(0..LENGTHS.len())];
    let lunch = rng.random_bool(0.3) && length >= 14;
    let odd_day = rng.random_bool(0.1).then(|| rng.random_range(0..5));
    for day in 0..5 {
        if Some(day) == odd_day {
            continue;
        }
        schedule.open_range(day, start, start + length);
        if lunch {
            let mid = start + length / 2;
            schedule.set(day, mid - 1, false);
            schedule.set(day, mid, false);
        }
    }
    if !rng.random_bool(weekday_only) {
        let saturday = (length * rng.random_range(2..=4) / 4).max(4);
        schedule.open_range(5, start, start + saturday);
        if rng.random_bool(0.5) {
            schedule.open_range(6, start + 2, start + 2 + saturday / 2 + 2);
        }
    }
    schedule
}

fn random_factors(rng: &mut ChaCha8Rng) -> Factors {
    let mut f = Factors::default();
    f.set(REFERRAL, rng.random_bool(0.15));
    f.set(AGE_LIMIT, rng.random_bool(0.2));
    f.set(BOOKING, rng.random_bool(0.25));
    f.set(WALK_IN, rng.random_bool(0.6));
    f.set(DRIVE_THROUGH, rng.random_bool(0.4));
    f.set(WHEELCHAIR, rng.random_bool(0.7));
    f
}

fn random_interventions(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
) -> Vec<InterventionRecord> {
    (0..config.interventions)
        .map(|i| {
            let offset = rng.random_range(0..config.days) as u64;
            let length = rng.random_range(10..=40u64);
            let start_date = config.start + Days::new(offset);
            let end_date = (start_date + Days::new(length - 1)).min(config.last_date());
            let level = rng.random_range(1..=3u8);
            let direction = if rng.random_bool(0.6) {
                Direction::Restriction
            } else {
                Direction::Eased
            };
            InterventionRecord {
                start_date,
                end_date,
                level,
                direction,
                label: format!("event-{}", i + 1),
            }
        })
        .collect()
}

fn intervention_level(interventions: &[InterventionRecord], date: NaiveDate) -> u8 {
    interventions
        .iter()
        .filter(|i| i.covers(date))
        .map(|i| i.level)
        .max()
        .unwrap_or(0)
}

/// Split `total` over release delays by a multinomial draw.
fn split_by_lag(rng: &mut ChaCha8Rng, total: u64, weights: &[f64]) -> Vec<u64> {
    let mut remaining = total;
    let mut remaining_weight: f64 = weights.iter().sum();
    let mut out = vec![0; weights.len()];
    for (k, &w) in weights.iter().enumerate() {
        if remaining == 0 || remaining_weight <= 0.0 {
            break;
        }
        let p = (w / remaining_weight).clamp(0.0, 1.0);
        let draw = if k + 1 == weights.len() || p >= 1.0 {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            Binomial::new(remaining, p).expect("valid binomial").sample(rng)
        };
        out[k] = draw;
        remaining -= draw;
        remaining_weight -= w;
    }
    out[weights.len() - 1] += remaining;
    out
}

/// Generate a synthetic input bundle and its hidden ground truth.
///
/// Output is a pure function of `(config, seed)`.
pub fn generate_synthetic(
    config: &SynthConfig,
    seed: u64,
) -> Result<(SynthBundle, GroundTruth), IngestError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_normal = Normal::<f64>::new(0.0, 1.0).expect("valid normal");
    let max_lag = config.max_lag();
    let lag_weights = &config.lag_weights[..=max_lag];

    let mut clinics: Vec<ClinicRecord> = Vec::new();
    let mut plans: Vec<UnitPlan> = Vec::new();
    let mut census = Vec::new();
    for u in 0..config.units + config.empty_units {
        let lga_id = format!("U{:03}", u + 1);
        let postcodes: Vec<String> = (0..config.postcodes_per_unit)
            .map(|p| format!("{}", 2000 + u * config.postcodes_per_unit + p))
            .collect();
        let base_rate = 40.0 * (config.scale_spread * unit_normal.sample(&mut rng)).exp();
        let area: f64 = rng.random_range(5.0..500.0);
        let population: u64 = rng.random_range(20_000..300_000);
        census.push(DemographicRecord::new(lga_id.clone(), population, area)?);
        for pc in &postcodes {
            let share = 1.0 / config.postcodes_per_unit as f64;
            census.push(DemographicRecord::new(
                pc.clone(),
                (population as f64 * share).round() as u64,
                area * share,
            )?);
        }
        let mut members = Vec::new();
        if u < config.units {
            let count = rng.random_range(config.min_clinics..=config.max_clinics);
            let (lat0, lon0) = (
                -33.8 + rng.random_range(-1.0..1.0),
                151.0 + rng.random_range(-1.0..1.0),
            );
            for k in 0..count {
                let id = format!("C{:04}", clinics.len() + 1);
                members.push(clinics.len());
                clinics.push(ClinicRecord {
                    name: format!("Clinic {id}"),
                    clinic_id: id,
                    lga_id: lga_id.clone(),
                    postcode: postcodes[k % postcodes.len()].clone(),
                    latitude: lat0 + rng.random_range(-0.05..0.05),
                    longitude: lon0 + rng.random_range(-0.05..0.05),
                    factors: random_factors(&mut rng),
                    schedule: random_schedule(&mut rng, config.weekday_only_fraction),
                });
            }
        }
        plans.push(UnitPlan {
            lga_id,
            postcodes,
            base_rate,
            clinics: members,
        });
    }
    let interventions = random_interventions(&mut rng, config);

    let simulated_from = config.start - Days::new(max_lag as u64);
    let sim_days = config.days + max_lag;
    let period_last = config.last_date();

    // released[(postcode, date)] for dates inside the period
    let mut released: BTreeMap<(String, NaiveDate), u64> = BTreeMap::new();
    let mut accounting = ReleaseAccounting {
        truth_total: 0,
        released_total: 0,
        dropped_before_period: 0,
        pending_after_period: 0,
    };
    let mut truths = Vec::new();

    for plan in &plans {
        let capacity = 20.0 * plan.base_rate;
        for offset in 0..sim_days {
            let date = simulated_from + Days::new(offset as u64);
            let dow = date.weekday().num_days_from_monday() as usize;
            let t = offset as f64 - max_lag as f64;
            let demand = config.weekday_profile[dow]
                * season_multiplier(date)
                * (1.0 + 0.25 * f64::from(intervention_level(&interventions, date)))
                * (1.0 + 0.5 * (2.0 * PI * t / 70.0).sin());
            let weights: Vec<f64> = plan
                .clinics
                .iter()
                .map(|&c| clinic_weight(&clinics[c].factors, &clinics[c].schedule, dow))
                .collect();
            let weight_sum: f64 = weights.iter().sum();
            let raw = plan.base_rate * weight_sum;
            let expected = demand * raw / (1.0 + config.coupling * raw / capacity);
            for (&c, &w) in plan.clinics.iter().zip(&weights) {
                let share = if weight_sum > 0.0 {
                    expected * w / weight_sum
                } else {
                    0.0
                };
                let noisy = share * (1.0 + config.noise * unit_normal.sample(&mut rng));
                let tests = noisy.max(0.0).round() as u64;
                let clinic = &clinics[c];
                truths.push(ClinicTruth {
                    clinic_id: clinic.clinic_id.clone(),
                    date,
                    tests,
                });
                accounting.truth_total += tests;
                for (lag, part) in split_by_lag(&mut rng, tests, lag_weights).into_iter().enumerate() {
                    let release = date + Days::new(lag as u64);
                    if release < config.start {
                        accounting.dropped_before_period += part;
                    } else if release > period_last {
                        accounting.pending_after_period += part;
                    } else {
                        accounting.released_total += part;
                        *released
                            .entry((clinic.postcode.clone(), release))
                            .or_insert(0) += part;
                    }
                }
            }
        }
    }
    truths.sort_by(|a, b| (&a.clinic_id, a.date).cmp(&(&b.clinic_id, b.date)));

    let mut tests_rows = Vec::new();
    let mut cases_rows = Vec::new();
    for plan in &plans {
        for offset in 0..config.days {
            let date = config.start + Days::new(offset as u64);
            let positivity =
                (0.02 * (1.0 + 0.8 * (2.0 * PI * offset as f64 / 120.0).sin())).clamp(0.001, 0.2);
            let mut lga_tests = 0;
            let mut lga_cases = 0;
            for pc in &plan.postcodes {
                let mut tests = released.get(&(pc.clone(), date)).copied().unwrap_or(0);
                if plan.clinics.is_empty() {
                    tests = rng.random_range(5..40);
                }
                let cases = if tests > 0 {
                    Binomial::new(tests, positivity).expect("valid binomial").sample(&mut rng)
                } else {
                    0
                };
                lga_tests += tests;
                lga_cases += cases;
                for (rows, kind, count) in [
                    (&mut tests_rows, CountKind::Tests, tests),
                    (&mut cases_rows, CountKind::Cases, cases),
                ] {
                    rows.push(RawCountRow {
                        date,
                        unit_kind: UnitKind::Postcode,
                        unit_id: pc.clone(),
                        count,
                        kind,
                        self_reported: false,
                    });
                }
            }
            for (rows, kind, count) in [
                (&mut tests_rows, CountKind::Tests, lga_tests),
                (&mut cases_rows, CountKind::Cases, lga_cases),
            ] {
                rows.push(RawCountRow {
                    date,
                    unit_kind: UnitKind::Lga,
                    unit_id: plan.lga_id.clone(),
                    count,
                    kind,
                    self_reported: false,
                });
                if rng.random_bool(config.self_reported_fraction) {
                    rows.push(RawCountRow {
                        date,
                        unit_kind: UnitKind::Lga,
                        unit_id: plan.lga_id.clone(),
                        count: rng.random_range(1..50),
                        kind,
                        self_reported: true,
                    });
                }
            }
        }
    }

    let mut files = BTreeMap::new();
    files.insert("tests.csv".to_string(), write_counts(&tests_rows)?);
    files.insert("cases.csv".to_string(), write_counts(&cases_rows)?);
    files.insert("clinics.csv".to_string(), write_clinics(&clinics)?);
    files.insert("interventions.csv".to_string(), write_interventions(&interventions)?);
    files.insert("census.csv".to_string(), write_census(&census)?);

    Ok((
        SynthBundle { files },
        GroundTruth {
            simulated_from,
            clinic_daily: truths,
            accounting,
        },
    ))
}
