//! Activity-log ingestion.
//!
//! Raw logs are sampled at irregular rates and repeat the same label many
//! times in a row. Ingestion turns them into an event-based series (one
//! entry per contiguous activity), then into fixed-length sliding windows
//! for the predictor, with a chronological train/test split per home.

use std::io::{BufRead, Write};

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::ontology::{encode_features, Category, FeatureVector, OntologyMap};

pub const DEFAULT_SEQ_LEN: usize = 24;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub timestamp: NaiveDateTime,
    pub raw_label: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub records: Vec<RawRecord>,
    /// Lines that could not be parsed and were skipped.
    pub malformed: usize,
    /// Whether the input had to be re-sorted by timestamp.
    pub reordered: bool,
}

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

/// Parses `timestamp,raw_label` lines. A non-timestamp first line is taken
/// as a header. Malformed lines are counted and skipped; out-of-order
/// records are stably re-sorted.
pub fn parse_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    let mut out = ParsedLog::default();
    let mut seen_any = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        seen_any = true;
        let parsed = trimmed.split_once(',').and_then(|(ts, label)| {
            let label = label.trim();
            if label.is_empty() {
                return None;
            }
            parse_timestamp(ts).map(|timestamp| RawRecord {
                timestamp,
                raw_label: label.to_string(),
            })
        });
        match parsed {
            Some(record) => out.records.push(record),
            None if lineno == 0 && trimmed.to_ascii_lowercase().starts_with("timestamp") => {}
            None => {
                out.malformed += 1;
                log::warn!("skipping malformed log line {}: {trimmed:?}", lineno + 1);
            }
        }
    }
    if !seen_any {
        return Err(Error::EmptyDataset("log stream has no lines".into()));
    }
    if out.records.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        log::warn!("log records out of order; re-sorting by timestamp");
        out.records.sort_by_key(|r| r.timestamp);
        out.reordered = true;
    }
    Ok(out)
}

/// One collapsed activity occurrence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Days since the home's first record.
    pub day_index: u32,
    pub hour: u8,
    /// Monday = 0.
    pub weekday: u8,
    pub category: Category,
}

impl Event {
    pub fn features(&self) -> FeatureVector {
        encode_features(u32::from(self.hour), u32::from(self.weekday), self.category)
            .expect("events hold tracked categories and in-range clock fields")
    }
}

/// How runs labelled `NOT_TRACKED` are removed from the stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NotTrackedPolicy {
    /// Drop the run; neighbours with equal categories merge.
    #[default]
    Drop,
    /// Fold the run into the preceding activity of the same day, or into
    /// the following one (taking its start time) when the day begins with it.
    MergeIntoNeighbor,
}

#[derive(Debug, Clone, Default)]
pub struct Collapsed {
    pub events: Vec<Event>,
    /// Raw records that mapped to `NOT_TRACKED`.
    pub not_tracked_records: usize,
}

/// Run-length collapse with the default `Drop` policy.
pub fn collapse_events(records: &[RawRecord], map: &OntologyMap) -> Vec<Event> {
    collapse_with_policy(records, map, NotTrackedPolicy::Drop).events
}

pub fn collapse_with_policy(
    records: &[RawRecord],
    map: &OntologyMap,
    policy: NotTrackedPolicy,
) -> Collapsed {
    let mut out = Collapsed::default();
    let Some(first) = records.first() else {
        return out;
    };
    let origin = first.timestamp.date();
    // Start of a leading NOT_TRACKED run within the current day.
    let mut pending_start: Option<NaiveDateTime> = None;
    let mut pending_day = 0;

    for record in records {
        let day = (record.timestamp.date() - origin).num_days().max(0) as u32;
        let category = map.map_label(&record.raw_label);
        if !category.is_tracked() {
            out.not_tracked_records += 1;
            if policy == NotTrackedPolicy::MergeIntoNeighbor {
                let continues_previous = out.events.last().is_some_and(|e| e.day_index == day);
                if !continues_previous && (pending_start.is_none() || pending_day != day) {
                    pending_start = Some(record.timestamp);
                    pending_day = day;
                }
            }
            continue;
        }
        if let Some(last) = out.events.last() {
            if last.day_index == day && last.category == category {
                pending_start = None;
                continue;
            }
        }
        let stamp = match pending_start.take() {
            Some(ts) if pending_day == day => ts,
            _ => record.timestamp,
        };
        out.events.push(Event {
            day_index: day,
            hour: stamp.hour() as u8,
            weekday: stamp.weekday().num_days_from_monday() as u8,
            category,
        });
    }
    out
}

/// Merges adjacent same-day events with equal categories.
pub fn merge_runs(events: &[Event]) -> Vec<Event> {
    let mut out: Vec<Event> = Vec::with_capacity(events.len());
    for e in events {
        if let Some(last) = out.last() {
            if last.day_index == e.day_index && last.category == e.category {
                continue;
            }
        }
        out.push(*e);
    }
    out
}

/// A window of `l` consecutive events and the category that follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub window: Vec<FeatureVector>,
    pub target: Category,
}

/// Stride-1 sliding windows over the whole stream; yields
/// `max(0, len - l)` samples.
pub fn make_windows(events: &[Event], l: usize) -> Vec<Sample> {
    assert!(l >= 1, "window length must be positive");
    if events.len() <= l {
        return Vec::new();
    }
    let features: Vec<FeatureVector> = events.iter().map(Event::features).collect();
    (0..events.len() - l)
        .map(|start| Sample {
            window: features[start..start + l].to_vec(),
            target: events[start + l].category,
        })
        .collect()
}

/// A home's event stream with a chronological train/test split.
///
/// The split falls on a day boundary: train holds days `< split_day`.
#[derive(Debug, Clone)]
pub struct HomeDataset {
    pub home_id: String,
    events: Vec<Event>,
    split_day: u32,
    split_index: usize,
    pub validation_fraction: f64,
}

impl HomeDataset {
    pub fn new(home_id: impl Into<String>, events: Vec<Event>) -> Result<Self> {
        Self::with_fractions(home_id, events, DEFAULT_TRAIN_FRACTION, DEFAULT_VALIDATION_FRACTION)
    }

    pub fn with_fractions(
        home_id: impl Into<String>,
        events: Vec<Event>,
        train_fraction: f64,
        validation_fraction: f64,
    ) -> Result<Self> {
        let home_id = home_id.into();
        if events.is_empty() {
            return Err(Error::EmptyDataset(format!("home {home_id} has no events")));
        }
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(invalid_input(format!("train fraction {train_fraction} not in (0, 1]")));
        }
        if !(0.0..1.0).contains(&validation_fraction) {
            return Err(invalid_input(format!(
                "validation fraction {validation_fraction} not in [0, 1)"
            )));
        }
        if events.windows(2).any(|w| w[1].day_index < w[0].day_index) {
            return Err(invalid_input(format!("home {home_id}: events not in day order")));
        }
        if events.iter().any(|e| !e.category.is_tracked()) {
            return Err(invalid_input(format!("home {home_id}: NOT_TRACKED event in stream")));
        }
        let num_days = events.last().map_or(0, |e| e.day_index + 1);
        let split_day = if num_days <= 1 {
            num_days
        } else {
            ((f64::from(num_days) * train_fraction).round() as u32).clamp(1, num_days - 1)
        };
        let split_index = events.partition_point(|e| e.day_index < split_day);
        Ok(Self {
            home_id,
            events,
            split_day,
            split_index,
            validation_fraction,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn num_days(&self) -> u32 {
        self.events.last().map_or(0, |e| e.day_index + 1)
    }

    /// First day of the test partition.
    pub fn split_day(&self) -> u32 {
        self.split_day
    }

    pub fn train_events(&self) -> &[Event] {
        &self.events[..self.split_index]
    }

    pub fn test_events(&self) -> &[Event] {
        &self.events[self.split_index..]
    }

    /// Windows drawn from the test partition only.
    pub fn test_samples(&self, l: usize) -> Vec<Sample> {
        make_windows(self.test_events(), l)
    }
}

/// Train-partition events from completed days `< through_day`.
pub fn slice_days(ds: &HomeDataset, through_day: u32) -> &[Event] {
    let train = ds.train_events();
    &train[..train.partition_point(|e| e.day_index < through_day)]
}

/// Splits samples into (train, validation) with validation the chronological
/// tail of `floor(n * fraction)` samples.
pub fn split_validation(samples: Vec<Sample>, fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let n_val = (samples.len() as f64 * fraction).floor() as usize;
    let mut train = samples;
    let val = train.split_off(train.len() - n_val);
    (train, val)
}

/// Writes the canonical `home_id,day_index,hour,weekday,category` file.
pub fn write_canonical<W: Write>(mut w: W, home_id: &str, events: &[Event]) -> Result<()> {
    writeln!(w, "home_id,day_index,hour,weekday,category")?;
    for e in events {
        writeln!(w, "{home_id},{},{},{},{}", e.day_index, e.hour, e.weekday, e.category)?;
    }
    Ok(())
}

/// Reads a canonical event file back; returns the home id and events.
pub fn read_canonical<R: BufRead>(reader: R) -> Result<(String, Vec<Event>)> {
    let mut home = None;
    let mut events = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("home_id")) {
            continue;
        }
        let bad = || invalid_input(format!("canonical line {}: {line:?}", lineno + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<u32>().map_err(|_| bad());
        let (hour, weekday) = (num(fields[2])?, num(fields[3])?);
        let category: Category = fields[4].parse()?;
        // Validates ranges and rejects NOT_TRACKED.
        encode_features(hour, weekday, category)?;
        match &home {
            None => home = Some(fields[0].to_string()),
            Some(h) if h != fields[0] => {
                return Err(invalid_input(format!("mixed home ids {h} and {}", fields[0])))
            }
            _ => {}
        }
        events.push(Event {
            day_index: num(fields[1])?,
            hour: hour as u8,
            weekday: weekday as u8,
            category,
        });
    }
    let home = home.ok_or_else(|| Error::EmptyDataset("canonical file has no events".into()))?;
    Ok((home, events))
}
