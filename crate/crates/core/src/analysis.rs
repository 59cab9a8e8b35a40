//! Decision quantities derived from accuracy curves and early activity.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::HomeDataset;
use crate::ontology::{Category, NUM_CATEGORIES};
use crate::regimes::RegimeKind;

pub const DEFAULT_PROPORTION_DAYS: u32 = 2;

/// Daily test accuracy of one regime in one home.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCurve {
    pub home_id: String,
    pub regime: RegimeKind,
    /// `(day, accuracy)` with strictly increasing days.
    pub points: Vec<(u32, f64)>,
}

impl AccuracyCurve {
    pub fn new(home_id: impl Into<String>, regime: RegimeKind, points: Vec<(u32, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidInput("curve days must be strictly increasing".into()));
        }
        if let Some((d, a)) = points.iter().find(|(_, a)| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidInput(format!("accuracy {a} on day {d} outside [0, 1]")));
        }
        Ok(Self {
            home_id: home_id.into(),
            regime,
            points,
        })
    }

    pub fn days(&self) -> impl Iterator<Item = u32> + '_ {
        self.points.iter().map(|p| p.0)
    }
}

fn aligned<'a>(local: &'a AccuracyCurve, collab: &'a AccuracyCurve) -> Result<Vec<(u32, f64, f64)>> {
    if !local.days().eq(collab.days()) {
        return Err(Error::InvalidInput(format!(
            "curves for {} ({:?}) and {} ({:?}) cover different days",
            local.home_id, local.regime, collab.home_id, collab.regime
        )));
    }
    Ok(local
        .points
        .iter()
        .zip(&collab.points)
        .map(|(l, c)| (l.0, l.1, c.1))
        .collect())
}

/// First day on which local accuracy reaches the collaborative accuracy.
pub fn crossover_point(local: &AccuracyCurve, collab: &AccuracyCurve) -> Result<Option<u32>> {
    Ok(aligned(local, collab)?
        .into_iter()
        .find(|&(_, l, c)| l >= c)
        .map(|(d, _, _)| d))
}

/// First day from which local accuracy stays at or above the collaborative
/// accuracy for `window` consecutive curve points (the rest of the curve
/// when `None`). Windows running past the last point are judged on the
/// points that exist.
pub fn stable_crossover_point(
    local: &AccuracyCurve,
    collab: &AccuracyCurve,
    window: Option<usize>,
) -> Result<Option<u32>> {
    if window == Some(0) {
        return Err(Error::InvalidInput("persistence window must be positive".into()));
    }
    let pts = aligned(local, collab)?;
    let ok: Vec<bool> = pts.iter().map(|&(_, l, c)| l >= c).collect();
    // run[i] = number of consecutive satisfied points starting at i.
    let mut run = vec![0usize; ok.len() + 1];
    for i in (0..ok.len()).rev() {
        run[i] = if ok[i] { run[i + 1] + 1 } else { 0 };
    }
    Ok((0..ok.len())
        .find(|&i| {
            let need = window.map_or(ok.len() - i, |w| w.min(ok.len() - i));
            run[i] >= need
        })
        .map(|i| pts[i].0))
}

/// Area (accuracy x days) by which local accuracy trails the collaborative
/// one before the first-reach crossover, or over the whole curve if local
/// never catches up.
pub fn regret(local: &AccuracyCurve, collab: &AccuracyCurve) -> Result<f64> {
    Ok(aligned(local, collab)?
        .into_iter()
        .take_while(|&(_, l, c)| l < c)
        .map(|(_, l, c)| c - l)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossoverReport {
    pub home_id: String,
    pub collaborative: RegimeKind,
    pub first_day: Option<u32>,
    pub crossover_day: Option<u32>,
    pub stable_crossover_day: Option<u32>,
    pub regret: f64,
    /// Last day of the curves.
    pub horizon: Option<u32>,
    /// No crossover within the horizon: the regret is a lower bound.
    pub open_ended: bool,
}

pub fn crossover_report(
    local: &AccuracyCurve,
    collab: &AccuracyCurve,
    stable_window: Option<usize>,
) -> Result<CrossoverReport> {
    let crossover_day = crossover_point(local, collab)?;
    Ok(CrossoverReport {
        home_id: local.home_id.clone(),
        collaborative: collab.regime,
        first_day: local.points.first().map(|p| p.0),
        crossover_day,
        stable_crossover_day: stable_crossover_point(local, collab, stable_window)?,
        regret: regret(local, collab)?,
        horizon: local.points.last().map(|p| p.0),
        open_ended: crossover_day.is_none(),
    })
}

pub fn write_reports_json<W: Write>(w: W, reports: &[CrossoverReport]) -> Result<()> {
    serde_json::to_writer_pretty(w, reports)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityProportions {
    pub home_id: String,
    pub k: u32,
    /// Indexed like [`Category::ALL`].
    pub proportions: [f64; NUM_CATEGORIES],
    /// No events in the first `k` days; proportions are all zero.
    pub empty: bool,
}

/// Category frequencies over the events of the first `k` days.
pub fn activity_proportions(home: &HomeDataset, k: u32) -> Result<ActivityProportions> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let mut counts = [0usize; NUM_CATEGORIES];
    for e in home.events().iter().take_while(|e| e.day_index < k) {
        if let Some(i) = e.category.index() {
            counts[i] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let mut proportions = [0.0; NUM_CATEGORIES];
    if total > 0 {
        for (p, c) in proportions.iter_mut().zip(counts) {
            *p = c as f64 / total as f64;
        }
    }
    Ok(ActivityProportions {
        home_id: home.home_id.clone(),
        k,
        proportions,
        empty: total == 0,
    })
}

/// Unweighted mean of per-home proportion vectors.
pub fn pool_average_proportions(homes: &[ActivityProportions]) -> Result<[f64; NUM_CATEGORIES]> {
    if homes.is_empty() {
        return Err(Error::InvalidInput("pool average over no homes".into()));
    }
    let mut mean = [0.0; NUM_CATEGORIES];
    for h in homes {
        for (m, p) in mean.iter_mut().zip(&h.proportions) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= homes.len() as f64);
    Ok(mean)
}

pub fn write_proportions_csv<W: Write>(mut w: W, rows: &[ActivityProportions]) -> Result<()> {
    write!(w, "home_id,k")?;
    for i in 0..NUM_CATEGORIES {
        write!(w, ",cat{i}")?;
    }
    writeln!(w)?;
    for r in rows {
        write!(w, "{},{}", r.home_id, r.k)?;
        for p in &r.proportions {
            write!(w, ",{p}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses the format written by [`write_proportions_csv`].
pub fn read_proportions_csv<R: BufRead>(reader: R) -> Result<Vec<ActivityProportions>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("home_id,")) {
            continue;
        }
        let bad = || Error::InvalidInput(format!("proportions line {}: {line:?}", lineno + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 2 + NUM_CATEGORIES {
            return Err(bad());
        }
        let mut proportions = [0.0; NUM_CATEGORIES];
        for (p, v) in proportions.iter_mut().zip(&f[2..]) {
            *p = v.parse().map_err(|_| bad())?;
        }
        out.push(ActivityProportions {
            home_id: f[0].to_string(),
            k: f[1].parse().map_err(|_| bad())?,
            proportions,
            empty: proportions.iter().all(|&p| p == 0.0),
        });
    }
    Ok(out)
}

/// Column legend for the proportions CSV.
pub fn proportion_columns() -> [(String, Category); NUM_CATEGORIES] {
    std::array::from_fn(|i| (format!("cat{i}"), Category::ALL[i]))
}
