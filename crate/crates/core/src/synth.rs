//! Synthetic multi-home activity logs.
//!
//! Each home follows a Markov chain over the ten categories whose transition
//! matrix depends on the hour band of the current activity. A home's matrix
//! mixes a shared base routine with a home-specific random matrix:
//! `(1 - delta) * base + delta * random`. `delta = 0` gives every home the
//! same routine; larger values make the pool less homogeneous.

use chrono::{NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{collapse_events, HomeDataset, RawRecord};
use crate::ontology::{Category, OntologyMap, NUM_CATEGORIES};
use crate::seed;

pub type Matrix = [[f64; NUM_CATEGORIES]; NUM_CATEGORIES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutineSpec {
    /// Band start hours, ascending from 0; hour `h` belongs to the last
    /// band whose start is `<= h`.
    pub band_starts: Vec<u8>,
    /// One row-stochastic matrix per band, indexed `[from][to]`.
    pub base: Vec<Matrix>,
    /// Distribution of each day's first activity.
    pub initial: [f64; NUM_CATEGORIES],
    /// Mixing weight of the home-specific random routine, in `[0, 1]`.
    pub perturbation: f64,
    /// Inclusive range of events per day.
    pub events_per_day: (u32, u32),
    /// First and last hour in which events are placed.
    pub day_hours: (u8, u8),
    pub seed: u64,
}

impl Default for RoutineSpec {
    fn default() -> Self {
        Self::daily_routine(0.3, 0)
    }
}

const MORNING: [Category; NUM_CATEGORIES] = {
    use Category::*;
    [Rest, PersonalHealthAndHygiene, Chores, Eat, Drink, LeaveHome, EnterHome, Work, Relax, Social]
};
const AFTERNOON: [Category; NUM_CATEGORIES] = {
    use Category::*;
    [Work, Eat, Drink, Relax, Social, LeaveHome, EnterHome, Chores, PersonalHealthAndHygiene, Rest]
};
const EVENING: [Category; NUM_CATEGORIES] = {
    use Category::*;
    [Chores, Eat, Relax, Social, Drink, PersonalHealthAndHygiene, Rest, Work, LeaveHome, EnterHome]
};
const NIGHT: [Category; NUM_CATEGORIES] = {
    use Category::*;
    [Relax, PersonalHealthAndHygiene, Rest, Drink, Eat, Chores, Social, Work, LeaveHome, EnterHome]
};

/// Each band follows its cycle: 0.9 to the next activity, 0.05 to the one
/// after, the rest spread evenly.
fn cycle_matrix(cycle: &[Category; NUM_CATEGORIES]) -> Matrix {
    let mut m = [[0.0; NUM_CATEGORIES]; NUM_CATEGORIES];
    for (pos, from) in cycle.iter().enumerate() {
        let row = &mut m[from.index().expect("tracked")];
        let main = cycle[(pos + 1) % NUM_CATEGORIES].index().expect("tracked");
        let second = cycle[(pos + 2) % NUM_CATEGORIES].index().expect("tracked");
        let rest = 0.05 / (NUM_CATEGORIES - 3) as f64;
        for (to, p) in row.iter_mut().enumerate() {
            *p = if to == main {
                0.9
            } else if to == second {
                0.05
            } else if to == from.index().expect("tracked") {
                0.0
            } else {
                rest
            };
        }
    }
    m
}

impl RoutineSpec {
    /// A four-band day (night, morning, afternoon, evening) with 10 to 14
    /// events between 06:00 and 23:00.
    pub fn daily_routine(perturbation: f64, seed: u64) -> Self {
        let mut initial = [0.02; NUM_CATEGORIES];
        initial[Category::Rest as usize] = 0.82;
        Self {
            band_starts: vec![0, 5, 11, 17],
            base: vec![
                cycle_matrix(&NIGHT),
                cycle_matrix(&MORNING),
                cycle_matrix(&AFTERNOON),
                cycle_matrix(&EVENING),
            ],
            initial,
            perturbation,
            events_per_day: (10, 14),
            day_hours: (6, 23),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.band_starts.is_empty() || self.band_starts[0] != 0 {
            return bad("band_starts must begin at hour 0".into());
        }
        if self.band_starts.windows(2).any(|w| w[0] >= w[1]) || self.band_starts.iter().any(|&h| h > 23) {
            return bad("band_starts must be strictly increasing hours".into());
        }
        if self.base.len() != self.band_starts.len() {
            return bad(format!(
                "{} bands but {} base matrices",
                self.band_starts.len(),
                self.base.len()
            ));
        }
        for (b, m) in self.base.iter().enumerate() {
            for (r, row) in m.iter().enumerate() {
                check_distribution(row).map_err(|e| Error::InvalidConfig(format!("band {b} row {r}: {e}")))?;
            }
        }
        check_distribution(&self.initial).map_err(|e| Error::InvalidConfig(format!("initial: {e}")))?;
        if !(0.0..=1.0).contains(&self.perturbation) {
            return bad("perturbation must be in [0, 1]".into());
        }
        let (lo, hi) = self.events_per_day;
        if lo == 0 || lo > hi {
            return bad("events_per_day must be a non-empty positive range".into());
        }
        let (start, end) = self.day_hours;
        if start > end || end > 23 {
            return bad("day_hours must be an ordered pair of hours".into());
        }
        Ok(())
    }

    pub fn band_of(&self, hour: u8) -> usize {
        self.band_starts.partition_point(|&s| s <= hour) - 1
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("entries must be finite and nonnegative".into());
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(format!("sums to {sum}"));
    }
    Ok(())
}

/// A home's realised routine.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeRoutine {
    pub bands: Vec<Matrix>,
    pub initial: [f64; NUM_CATEGORIES],
}

fn normalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= s);
}

/// Peaked random distribution: cubed uniforms, renormalised.
fn random_row(rng: &mut ChaCha8Rng, exclude: Option<usize>) -> [f64; NUM_CATEGORIES] {
    let mut row = [0.0; NUM_CATEGORIES];
    for (i, p) in row.iter_mut().enumerate() {
        let u: f64 = rng.random_range(1e-3..1.0);
        *p = if Some(i) == exclude { 0.0 } else { u * u * u };
    }
    normalize(&mut row);
    row
}

fn mix(base: &[f64; NUM_CATEGORIES], random: &[f64; NUM_CATEGORIES], delta: f64) -> [f64; NUM_CATEGORIES] {
    let mut row = [0.0; NUM_CATEGORIES];
    for i in 0..NUM_CATEGORIES {
        row[i] = (1.0 - delta) * base[i] + delta * random[i];
    }
    normalize(&mut row);
    row
}

/// Samples the home-specific routine; depends only on `(spec.seed, home_id)`.
pub fn home_routine(spec: &RoutineSpec, home_id: &str) -> Result<HomeRoutine> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed::derive(spec.seed, home_id), "routine"));
    let delta = spec.perturbation;
    let bands = spec
        .base
        .iter()
        .map(|base| {
            let mut m = [[0.0; NUM_CATEGORIES]; NUM_CATEGORIES];
            for (from, row) in m.iter_mut().enumerate() {
                let random = random_row(&mut rng, Some(from));
                *row = if delta == 0.0 { base[from] } else { mix(&base[from], &random, delta) };
            }
            m
        })
        .collect();
    let random = random_row(&mut rng, None);
    let initial = if delta == 0.0 { spec.initial } else { mix(&spec.initial, &random, delta) };
    Ok(HomeRoutine { bands, initial })
}

fn sample_from(rng: &mut ChaCha8Rng, row: &[f64], exclude: Option<usize>) -> usize {
    let total: f64 = row
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, p)| p)
        .sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if Some(i) == exclude || p == 0.0 {
            continue;
        }
        last = i;
        if u < p {
            return i;
        }
        u -= p;
    }
    last
}

const ORIGIN: (i32, u32, u32) = (2011, 1, 3);

/// Synthetic raw log for one home: each activity is logged one to three
/// times in a row, as irregular sensor-driven logs are.
pub fn generate_log(spec: &RoutineSpec, home_id: &str, n_days: u32) -> Result<Vec<RawRecord>> {
    if n_days == 0 {
        return Err(Error::InvalidConfig("n_days must be at least 1".into()));
    }
    let routine = home_routine(spec, home_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed::derive(spec.seed, home_id), "days"));
    let origin = NaiveDate::from_ymd_opt(ORIGIN.0, ORIGIN.1, ORIGIN.2).expect("valid date");
    let (first_hour, last_hour) = spec.day_hours;
    let span = u32::from(last_hour - first_hour) + 1;
    let (lo, hi) = spec.events_per_day;

    let mut records = Vec::new();
    for day in 0..n_days {
        let date = origin + chrono::Days::new(u64::from(day));
        let n = rng.random_range(lo..=hi);
        let mut current: Option<usize> = None;
        for j in 0..n {
            // Events spread evenly over the waking hours, sub-hour when crowded.
            let minutes = u64::from(j) * u64::from(span) * 60 / u64::from(n);
            let hour = u32::from(first_hour) + (minutes / 60) as u32;
            let minute = (minutes % 60) as u32;
            let category = match current {
                None => sample_from(&mut rng, &routine.initial, None),
                Some(prev) => {
                    // Transition out of the previous activity, by its band.
                    let prev_minutes = u64::from(j - 1) * u64::from(span) * 60 / u64::from(n);
                    let prev_hour = first_hour + (prev_minutes / 60) as u8;
                    let band = spec.band_of(prev_hour);
                    sample_from(&mut rng, &routine.bands[band][prev], Some(prev))
                }
            };
            current = Some(category);
            let label = Category::ALL[category].name().to_lowercase().replace('_', " ");
            let repeats = rng.random_range(1..=3u32);
            let next_minutes = u64::from(j + 1) * u64::from(span) * 60 / u64::from(n);
            let gap = (next_minutes - minutes).max(1);
            for r in 0..repeats {
                let offset = gap * u64::from(r) / u64::from(repeats);
                let total = u64::from(hour) * 60 + u64::from(minute) + offset;
                let ts: NaiveDateTime = date
                    .and_hms_opt((total / 60).min(23) as u32, (total % 60) as u32, 0)
                    .expect("valid time");
                records.push(RawRecord {
                    timestamp: ts,
                    raw_label: label.clone(),
                });
            }
        }
    }
    Ok(records)
}

/// Renders records in the ingest CSV format.
pub fn render_log(records: &[RawRecord]) -> String {
    let mut out = String::from("timestamp,activity_label\n");
    for r in records {
        out.push_str(&format!("{},{}\n", r.timestamp.format("%Y-%m-%dT%H:%M:%S"), r.raw_label));
    }
    out
}

/// Generates a home's log and runs it through the regular ingest path.
pub fn generate_home(spec: &RoutineSpec, home_id: &str, n_days: u32) -> Result<HomeDataset> {
    let records = generate_log(spec, home_id, n_days)?;
    let events = collapse_events(&records, &OntologyMap::default());
    HomeDataset::new(home_id, events)
}
