//! Daily retraining under the three regimes: local, centralized and
//! federated averaging.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::analysis::{crossover_point, AccuracyCurve};
use crate::deploy::{apply_share_end_policy, available_data, CentralView, DeploymentSchedule};
use crate::error::{Error, Result};
use crate::ingest::{make_windows, slice_days, split_validation, Event, HomeDataset, Sample};
use crate::nn::train::{run_epoch, Optimizer};
use crate::nn::{evaluate, train, ModelParameters, OptimizerKind, TrainConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeKind {
    Local,
    Centralized,
    Federated,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 3] = [RegimeKind::Local, RegimeKind::Centralized, RegimeKind::Federated];

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Local => "local",
            RegimeKind::Centralized => "centralized",
            RegimeKind::Federated => "federated",
        }
    }
}

impl std::fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeKind::ALL
            .into_iter()
            .find(|r| r.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidInput(format!("unknown regime {s:?}")))
    }
}

/// How client updates are weighted on the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    SampleCount,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederatedConfig {
    pub rounds_per_day: usize,
    pub client_epochs: usize,
    pub client_learning_rate: f64,
    pub server_learning_rate: f64,
    pub batch_size: usize,
    pub weighting: Weighting,
    /// Carry the global model across days instead of reinitialising daily.
    pub persistent: bool,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self {
            rounds_per_day: 20,
            client_epochs: 1,
            client_learning_rate: 0.001,
            server_learning_rate: 0.5,
            batch_size: 64,
            weighting: Weighting::SampleCount,
            persistent: true,
        }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds_per_day == 0 || self.client_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "rounds_per_day, client_epochs and batch_size must be positive".into(),
            ));
        }
        for (name, v) in [
            ("client_learning_rate", self.client_learning_rate),
            ("server_learning_rate", self.server_learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// A model trained for one day, with the data it saw.
#[derive(Debug, Clone)]
pub struct DayModel {
    pub params: ModelParameters,
    pub n_train_samples: usize,
    /// `(home_id, local day)` pairs whose events entered training.
    pub consumed: Vec<(String, u32)>,
}

fn consumed_days(home_id: &str, events: &[Event]) -> Vec<(String, u32)> {
    let mut days: Vec<u32> = events.iter().map(|e| e.day_index).collect();
    days.dedup();
    days.into_iter().map(|d| (home_id.to_string(), d)).collect()
}

/// Trains from a fresh initialisation on per-home sample sets. Each home is
/// split chronologically into training and validation parts before the
/// parts are concatenated; the trainer shuffles each epoch.
fn fit(per_home: Vec<Vec<Sample>>, config: &TrainConfig, run_seed: u64) -> Result<(ModelParameters, usize)> {
    let init = ModelParameters::init(config.dims(), seed::derive(run_seed, "init"));
    let mut train_set = Vec::new();
    let mut validation = Vec::new();
    for samples in per_home {
        let (t, v) = split_validation(samples, config.validation_fraction);
        train_set.extend(t);
        validation.extend(v);
    }
    if train_set.is_empty() {
        return Ok((init, 0));
    }
    let cfg = TrainConfig {
        seed: seed::derive(run_seed, "train"),
        ..config.clone()
    };
    let outcome = train(init, &train_set, &validation, &cfg)?;
    debug!(
        "trained on {} samples: {} epochs, best {}",
        train_set.len(),
        outcome.epochs_run,
        outcome.best_epoch
    );
    Ok((outcome.params, train_set.len()))
}

/// Local model of a home on simulation day `t`, trained on its completed
/// days. Returns the untrained initialisation when no window fits yet.
pub fn train_local_day(
    home: &HomeDataset,
    start: u32,
    t: u32,
    config: &TrainConfig,
    run_seed: u64,
) -> Result<DayModel> {
    if t <= start {
        return Err(Error::NotDeployed {
            home: home.home_id.clone(),
            day: t,
            start,
        });
    }
    let events = slice_days(home, t - start);
    let samples = make_windows(events, config.seq_len);
    let (params, n) = fit(vec![samples], config, run_seed)?;
    Ok(DayModel {
        params,
        n_train_samples: n,
        consumed: consumed_days(&home.home_id, events),
    })
}

/// Each contributing home's events in its contributed range, in id order.
fn contributions<'a>(view: &CentralView, homes: &'a BTreeMap<String, HomeDataset>) -> Result<Vec<(&'a str, &'a [Event])>> {
    view.contributors()
        .map(|(id, range)| {
            let (key, ds) = homes
                .get_key_value(id)
                .ok_or_else(|| Error::InvalidInput(format!("no dataset for home {id}")))?;
            Ok((key.as_str(), slice_days(ds, range.end - range.start)))
        })
        .collect()
}

/// One model trained on the pooled contributed data of every home.
pub fn train_centralized_day(
    view: &CentralView,
    homes: &BTreeMap<String, HomeDataset>,
    config: &TrainConfig,
    run_seed: u64,
) -> Result<DayModel> {
    if view.is_empty() {
        return Err(Error::NoData(view.day));
    }
    let parts = contributions(view, homes)?;
    let per_home = parts.iter().map(|(_, ev)| make_windows(ev, config.seq_len)).collect();
    let (params, n) = fit(per_home, config, run_seed)?;
    Ok(DayModel {
        params,
        n_train_samples: n,
        consumed: parts.iter().flat_map(|(id, ev)| consumed_days(id, ev)).collect(),
    })
}

/// Trains a copy of `global` on one client's samples for the configured
/// number of epochs with a fresh Adam state. Returns the updated parameters
/// and the number of samples trained on (full batches only).
pub fn client_update(
    global: &ModelParameters,
    samples: &[Sample],
    config: &TrainConfig,
    fc: &FederatedConfig,
    client_seed: u64,
) -> Result<(ModelParameters, usize)> {
    let mut params = global.clone();
    let cfg = TrainConfig {
        batch_size: fc.batch_size,
        learning_rate: fc.client_learning_rate,
        optimizer: OptimizerKind::Adam,
        ..config.clone()
    };
    let mut optimizer = Optimizer::new(OptimizerKind::Adam, &params);
    let mut used = 0;
    for epoch in 0..fc.client_epochs {
        let (_, n) = run_epoch(
            &mut params,
            &mut optimizer,
            samples,
            &cfg,
            seed::derive_n(client_seed, epoch as u64),
            true,
        )?;
        used = n;
    }
    Ok((params, used))
}

/// Server step: `global + lr * sum_i w_i (client_i - global)`.
///
/// Weights are proportional to each client's sample count (or uniform over
/// clients that trained). With `lr = 1` this is the plain weighted average
/// of client parameters. Returns `None` when no client trained.
pub fn aggregate(
    global: &ModelParameters,
    clients: &[(ModelParameters, usize)],
    weighting: Weighting,
    server_lr: f64,
) -> Result<Option<ModelParameters>> {
    if let Some((p, _)) = clients.iter().find(|(p, _)| !p.same_shape(global)) {
        return Err(Error::InvalidInput(format!(
            "client model {:?} does not match global {:?}",
            p.dims(),
            global.dims()
        )));
    }
    let active: Vec<(&ModelParameters, f64)> = clients
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(p, n)| (p, *n as f64))
        .collect();
    if active.is_empty() {
        return Ok(None);
    }
    let equal = match weighting {
        Weighting::Uniform => true,
        Weighting::SampleCount => active.iter().all(|(_, n)| *n == active[0].1),
    };
    let total: f64 = active.iter().map(|(_, n)| n).sum();
    let k = active.len() as f64;

    let mut out = global.clone();
    let g = global.as_slice();
    for (j, slot) in out.as_mut_slice().iter_mut().enumerate() {
        // Equal weights divide the sum once, so a mean of k models is exact.
        let averaged = if server_lr == 1.0 {
            if equal {
                active.iter().map(|(p, _)| p.as_slice()[j]).sum::<f64>() / k
            } else {
                active.iter().map(|(p, n)| n / total * p.as_slice()[j]).sum()
            }
        } else {
            let delta: f64 = if equal {
                active.iter().map(|(p, _)| p.as_slice()[j] - g[j]).sum::<f64>() / k
            } else {
                active.iter().map(|(p, n)| n / total * (p.as_slice()[j] - g[j])).sum()
            };
            g[j] + server_lr * delta
        };
        *slot = averaged;
    }
    Ok(Some(out))
}

/// One day of federated averaging starting from `global`.
pub fn fedavg_day(
    global: &ModelParameters,
    view: &CentralView,
    homes: &BTreeMap<String, HomeDataset>,
    config: &TrainConfig,
    fc: &FederatedConfig,
    run_seed: u64,
) -> Result<DayModel> {
    if view.is_empty() {
        return Err(Error::NoData(view.day));
    }
    fc.validate()?;
    let parts = contributions(view, homes)?;
    let clients: Vec<(&str, Vec<Sample>)> = parts
        .iter()
        .map(|(id, ev)| (*id, make_windows(ev, config.seq_len)))
        .collect();
    let mut params = global.clone();
    for round in 0..fc.rounds_per_day {
        let round_seed = seed::derive_n(run_seed, round as u64);
        let updates = clients
            .iter()
            .map(|(id, samples)| client_update(&params, samples, config, fc, seed::derive(round_seed, id)))
            .collect::<Result<Vec<_>>>()?;
        match aggregate(&params, &updates, fc.weighting, fc.server_learning_rate)? {
            Some(next) => params = next,
            None => {
                warn!(
                    "day {}: no client has a full batch of {}; skipping the remaining rounds",
                    view.day, fc.batch_size
                );
                break;
            }
        }
    }
    Ok(DayModel {
        params,
        n_train_samples: clients.iter().map(|(_, s)| s.len()).sum(),
        consumed: parts.iter().flat_map(|(id, ev)| consumed_days(id, ev)).collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub train: TrainConfig,
    pub federated: FederatedConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub day: u32,
    pub home_id: String,
    pub regime: RegimeKind,
    pub accuracy: f64,
    pub n_train_samples: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulationResult {
    pub records: Vec<AccuracyRecord>,
}

impl SimulationResult {
    /// One curve per (home, regime), ordered by home then regime.
    pub fn curves(&self) -> Vec<AccuracyCurve> {
        let mut grouped: BTreeMap<(&str, RegimeKind), Vec<(u32, f64)>> = BTreeMap::new();
        for r in &self.records {
            grouped.entry((&r.home_id, r.regime)).or_default().push((r.day, r.accuracy));
        }
        grouped
            .into_iter()
            .map(|((home, regime), mut points)| {
                points.sort_by_key(|p| p.0);
                AccuracyCurve {
                    home_id: home.to_string(),
                    regime,
                    points,
                }
            })
            .collect()
    }

    pub fn curve(&self, home_id: &str, regime: RegimeKind) -> Option<AccuracyCurve> {
        self.curves()
            .into_iter()
            .find(|c| c.home_id == home_id && c.regime == regime)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "day,home_id,regime,accuracy,n_train_samples")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{},{}", r.day, r.home_id, r.regime, r.accuracy, r.n_train_samples)?;
        }
        Ok(())
    }

    /// Parses the format written by [`SimulationResult::write_csv`].
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut records = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("day,")) {
                continue;
            }
            let bad = || Error::InvalidInput(format!("accuracy line {}: {line:?}", lineno + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            records.push(AccuracyRecord {
                day: f[0].parse().map_err(|_| bad())?,
                home_id: f[1].to_string(),
                regime: f[2].parse()?,
                accuracy: f[3].parse().map_err(|_| bad())?,
                n_train_samples: f[4].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { records })
    }

    pub fn regimes(&self) -> BTreeSet<RegimeKind> {
        self.records.iter().map(|r| r.regime).collect()
    }
}

/// Replays the deployment day by day from the first start day up to (but
/// excluding) `horizon`, retraining every requested regime each day and
/// scoring it on the fixed test partition of every deployed home.
pub fn run_simulation(
    schedule: &DeploymentSchedule,
    homes: &BTreeMap<String, HomeDataset>,
    horizon: u32,
    regimes: &[RegimeKind],
    config: &SimulationConfig,
) -> Result<SimulationResult> {
    config.train.validate()?;
    config.federated.validate()?;
    let l = config.train.seq_len;
    let mut tests = BTreeMap::new();
    for (id, _) in schedule.iter() {
        let ds = homes
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("no dataset for scheduled home {id}")))?;
        let samples = ds.test_samples(l);
        if samples.is_empty() {
            return Err(Error::InvalidInput(format!(
                "home {id} has no test windows of length {l}"
            )));
        }
        tests.insert(id, samples);
    }

    let mut result = SimulationResult::default();
    let master = config.seed;
    let fed_init_root = seed::derive(master, "federated/init");
    let mut global: Option<ModelParameters> = None;

    for t in schedule.pool_start_day..horizon {
        let deployed: Vec<(&str, u32)> = schedule
            .iter()
            .filter(|(_, h)| h.start < t)
            .map(|(id, h)| (id, h.start))
            .collect();
        if deployed.is_empty() {
            continue;
        }
        info!("day {t}: {} homes deployed", deployed.len());
        let view = available_data(schedule, t);
        let mut push = |home: &str, regime, params: &ModelParameters, n| -> Result<()> {
            result.records.push(AccuracyRecord {
                day: t,
                home_id: home.to_string(),
                regime,
                accuracy: evaluate(params, &tests[home])?,
                n_train_samples: n,
            });
            Ok(())
        };

        for &regime in regimes {
            match regime {
                RegimeKind::Local => {
                    for &(id, start) in &deployed {
                        let s = seed::derive_n(seed::derive(seed::derive(master, "local"), id), u64::from(t));
                        let m = train_local_day(&homes[id], start, t, &config.train, s)?;
                        push(id, regime, &m.params, m.n_train_samples)?;
                    }
                }
                RegimeKind::Centralized => {
                    let s = seed::derive_n(seed::derive(master, "centralized"), u64::from(t));
                    let (params, n) = if view.is_empty() {
                        (ModelParameters::init(config.train.dims(), seed::derive(s, "init")), 0)
                    } else {
                        let m = train_centralized_day(&view, homes, &config.train, s)?;
                        (m.params, m.n_train_samples)
                    };
                    for &(id, _) in &deployed {
                        push(id, regime, &params, n)?;
                    }
                }
                RegimeKind::Federated => {
                    let start_model = match (&global, config.federated.persistent) {
                        (Some(g), true) => g.clone(),
                        (_, true) => ModelParameters::init(config.train.dims(), fed_init_root),
                        (_, false) => ModelParameters::init(
                            config.train.dims(),
                            seed::derive_n(fed_init_root, u64::from(t)),
                        ),
                    };
                    let s = seed::derive_n(seed::derive(master, "federated"), u64::from(t));
                    let (params, n) = if view.is_empty() {
                        (start_model, 0)
                    } else {
                        let m = fedavg_day(&start_model, &view, homes, &config.train, &config.federated, s)?;
                        (m.params, m.n_train_samples)
                    };
                    for &(id, _) in &deployed {
                        push(id, regime, &params, n)?;
                    }
                    global = Some(params);
                }
            }
        }
    }
    Ok(result)
}

/// First-reach crossover day of local against `collab` for every home that
/// has one.
pub fn crossover_days(result: &SimulationResult, collab: RegimeKind) -> Result<BTreeMap<String, u32>> {
    let curves = result.curves();
    let mut out = BTreeMap::new();
    for local in curves.iter().filter(|c| c.regime == RegimeKind::Local) {
        if let Some(other) = curves.iter().find(|c| c.regime == collab && c.home_id == local.home_id) {
            if let Some(day) = crossover_point(local, other)? {
                out.insert(local.home_id.clone(), day);
            }
        }
    }
    Ok(out)
}

/// Reruns the simulation with every home ceasing to share from its
/// crossover day in `first`.
pub fn rerun_with_share_end(
    first: &SimulationResult,
    schedule: &DeploymentSchedule,
    homes: &BTreeMap<String, HomeDataset>,
    horizon: u32,
    regimes: &[RegimeKind],
    config: &SimulationConfig,
) -> Result<(DeploymentSchedule, SimulationResult)> {
    let ends = crossover_days(first, RegimeKind::Federated)?;
    let adjusted = apply_share_end_policy(schedule, &ends)?;
    let result = run_simulation(&adjusted, homes, horizon, regimes, config)?;
    Ok((adjusted, result))
}
