//! Staggered deployment and data availability.
//!
//! Homes join the pool at Poisson arrival times. On simulation day `t` the
//! collaborative learners may use, from every home that started before `t`,
//! the completed days `[start, min(t, share_end))` on the simulation clock.
//! A home's local day `d` is simulation day `start + d`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAPER_PRESET: &str = "casas-paper-2month";

const PAPER_START_DAYS: [(&str, u32); 30] = [
    ("103", 2),
    ("129", 5),
    ("111", 6),
    ("114", 6),
    ("127", 7),
    ("125", 9),
    ("112", 12),
    ("128", 12),
    ("118", 13),
    ("123", 13),
    ("106", 14),
    ("117", 15),
    ("109", 16),
    ("115", 19),
    ("124", 22),
    ("121", 23),
    ("102", 24),
    ("130", 26),
    ("107", 27),
    ("105", 34),
    ("119", 37),
    ("120", 42),
    ("110", 45),
    ("108", 46),
    ("126", 47),
    ("104", 47),
    ("101", 48),
    ("122", 56),
    ("116", 61),
    ("113", 62),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HomeSchedule {
    pub start: u32,
    pub share_end: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeploymentSchedule {
    entries: BTreeMap<String, HomeSchedule>,
    /// First simulated day.
    pub pool_start_day: u32,
}

/// Half-open range of simulation days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayRange {
    pub start: u32,
    pub end: u32,
}

impl DayRange {
    pub fn len(&self) -> u32 {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains_range(&self, other: &DayRange) -> bool {
        other.is_empty() || (self.start <= other.start && other.end <= self.end)
    }
}

impl DeploymentSchedule {
    pub fn get(&self, home: &str) -> Option<&HomeSchedule> {
        self.entries.get(home)
    }

    pub fn start_day(&self, home: &str) -> Option<u32> {
        self.entries.get(home).map(|h| h.start)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in home-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &HomeSchedule)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn home_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn last_start(&self) -> Option<u32> {
        self.entries.values().map(|h| h.start).max()
    }

    /// Keeps only the listed homes.
    pub fn restrict<'a>(&self, homes: impl IntoIterator<Item = &'a str>) -> Self {
        let keep: Vec<&str> = homes.into_iter().collect();
        Self {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
            pool_start_day: self.pool_start_day,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let entries: BTreeMap<String, HomeSchedule> = serde_json::from_str(text)?;
        for (home, h) in &entries {
            validate_entry(home, h)?;
        }
        Ok(Self {
            entries,
            pool_start_day: 0,
        })
    }
}

fn validate_entry(home: &str, h: &HomeSchedule) -> Result<()> {
    match h.share_end {
        Some(end) if end < h.start => Err(Error::InvalidConfig(format!(
            "home {home}: share_end {end} precedes start {}",
            h.start
        ))),
        _ => Ok(()),
    }
}

/// Start days for `home_ids` (in the given order) as floored cumulative sums
/// of exponential inter-arrival times.
pub fn sample_schedule_for(home_ids: &[String], lambda: f64, seed: u64) -> Result<DeploymentSchedule> {
    if home_ids.is_empty() {
        return Err(Error::InvalidConfig("need at least one home".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("arrival rate {lambda} must be positive")));
    }
    let exp = Exp::new(lambda).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clock = 0.0;
    let mut entries = BTreeMap::new();
    for id in home_ids {
        clock += exp.sample(&mut rng);
        let start = clock.floor() as u32;
        if entries
            .insert(id.clone(), HomeSchedule { start, share_end: None })
            .is_some()
        {
            return Err(Error::InvalidConfig(format!("duplicate home id {id}")));
        }
    }
    Ok(DeploymentSchedule {
        entries,
        pool_start_day: 0,
    })
}

/// `m` homes named `home-01`, `home-02`, ...
pub fn sample_schedule(m: usize, lambda: f64, seed: u64) -> Result<DeploymentSchedule> {
    let ids: Vec<String> = (1..=m).map(|i| format!("home-{i:02}")).collect();
    sample_schedule_for(&ids, lambda, seed)
}

pub fn fixed_schedule<I, S>(entries: I) -> Result<DeploymentSchedule>
where
    I: IntoIterator<Item = (S, u32)>,
    S: Into<String>,
{
    let mut map = BTreeMap::new();
    for (home, start) in entries {
        let home = home.into();
        if map.contains_key(&home) {
            return Err(Error::InvalidConfig(format!("duplicate home id {home}")));
        }
        map.insert(home, HomeSchedule { start, share_end: None });
    }
    Ok(DeploymentSchedule {
        entries: map,
        pool_start_day: 0,
    })
}

/// Named schedules shipped with the crate.
pub fn preset(name: &str) -> Option<DeploymentSchedule> {
    match name {
        PAPER_PRESET => Some(fixed_schedule(PAPER_START_DAYS).expect("preset ids are unique")),
        _ => None,
    }
}

/// Per-home contributed day ranges on day `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CentralView {
    pub day: u32,
    pub ranges: BTreeMap<String, DayRange>,
}

impl CentralView {
    pub fn is_empty(&self) -> bool {
        self.ranges.values().all(DayRange::is_empty)
    }

    /// Homes with a non-empty contribution, in id order.
    pub fn contributors(&self) -> impl Iterator<Item = (&str, &DayRange)> {
        self.ranges
            .iter()
            .filter(|(_, r)| !r.is_empty())
            .map(|(k, r)| (k.as_str(), r))
    }

    pub fn home_days(&self) -> u32 {
        self.ranges.values().map(DayRange::len).sum()
    }
}

/// Data available to collaborative training on day `t`: completed days only.
pub fn available_data(schedule: &DeploymentSchedule, t: u32) -> CentralView {
    let ranges = schedule
        .entries
        .iter()
        .filter(|(_, h)| h.start < t)
        .map(|(home, h)| {
            let end = h.share_end.map_or(t, |s| s.min(t)).max(h.start);
            (home.clone(), DayRange { start: h.start, end })
        })
        .collect();
    CentralView { day: t, ranges }
}

/// Sets each listed home's share-end day to its crossover day.
pub fn apply_share_end_policy(
    schedule: &DeploymentSchedule,
    crossover_days: &BTreeMap<String, u32>,
) -> Result<DeploymentSchedule> {
    let mut out = schedule.clone();
    for (home, &day) in crossover_days {
        let entry = out
            .entries
            .get_mut(home)
            .ok_or_else(|| Error::InvalidInput(format!("crossover for unknown home {home}")))?;
        if day < entry.start {
            return Err(Error::InvalidInput(format!(
                "home {home}: crossover day {day} precedes start {}",
                entry.start
            )));
        }
        entry.share_end = Some(day);
    }
    Ok(out)
}
