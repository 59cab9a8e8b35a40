//! Experiment configuration, read from TOML.
//!
//! Relative paths in the file resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use homefed_core::advisor::{ClassifierKind, LabelRule, MAX_D};
use homefed_core::analysis::DEFAULT_PROPORTION_DAYS;
use homefed_core::deploy::{self, DeploymentSchedule};
use homefed_core::ingest::NotTrackedPolicy;
use homefed_core::regimes::{FederatedConfig, RegimeKind, SimulationConfig};
use homefed_core::synth::RoutineSpec;
use homefed_core::{seed, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub out: Option<PathBuf>,
    /// Simulation days run from the first start day up to this day.
    pub horizon: u32,
    pub regimes: Vec<RegimeKind>,
    pub data: Option<DataSource>,
    pub schedule: Option<ScheduleSource>,
    pub train: TrainConfig,
    pub federated: FederatedConfig,
    pub analysis: AnalysisOptions,
    pub advisor: AdvisorOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: None,
            horizon: 64,
            regimes: RegimeKind::ALL.to_vec(),
            data: None,
            schedule: None,
            train: TrainConfig::default(),
            federated: FederatedConfig::default(),
            analysis: AnalysisOptions::default(),
            advisor: AdvisorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// One raw `timestamp,label` file per home; the file stem is the home id.
    Logs {
        dir: PathBuf,
        /// `raw_label<TAB>CATEGORY` lines replacing the built-in mapping.
        ontology: Option<PathBuf>,
        #[serde(default)]
        not_tracked: NotTrackedPolicy,
    },
    /// Already canonical event files.
    Events { dir: PathBuf },
    Synth(SynthSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSource {
    /// Number of homes when the schedule does not name them.
    pub homes: Option<usize>,
    pub days: u32,
    pub perturbation: f64,
    /// Defaults to a sub-seed of the master seed.
    pub routine_seed: Option<u64>,
    /// Full routine; replaces `perturbation` and `routine_seed`.
    pub routine: Option<RoutineSpec>,
}

impl Default for SynthSource {
    fn default() -> Self {
        Self {
            homes: None,
            days: 64,
            perturbation: 0.3,
            routine_seed: None,
            routine: None,
        }
    }
}

impl SynthSource {
    pub fn spec(&self, master_seed: u64) -> RoutineSpec {
        match &self.routine {
            Some(r) => r.clone(),
            None => RoutineSpec::daily_routine(
                self.perturbation,
                self.routine_seed.unwrap_or_else(|| seed::derive(master_seed, "synth")),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSource {
    Preset(String),
    /// Poisson arrivals over the data's homes in id order.
    Poisson {
        lambda: f64,
        seed: Option<u64>,
    },
    Fixed(BTreeMap<String, u32>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossoverVariant {
    #[default]
    First,
    Stable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Days of activity behind the proportions.
    pub k: u32,
    /// Compared against local; federated when present, else centralized.
    pub collaborative: Option<RegimeKind>,
    /// Crossover that labels advisor rows.
    pub crossover: CrossoverVariant,
    /// Window for the stable crossover; `None` requires staying ahead to
    /// the end of the curve.
    pub stable_window: Option<usize>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_PROPORTION_DAYS,
            collaborative: None,
            crossover: CrossoverVariant::First,
            stable_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdvisorOptions {
    pub d_max: u32,
    pub classifiers: Vec<ClassifierKind>,
    /// Append the pool-average proportions to every row.
    pub pool_average: bool,
    /// Overrides crossover labels with a fixed rule on the row features.
    pub label_rule: Option<LabelRule>,
}

impl Default for AdvisorOptions {
    fn default() -> Self {
        Self {
            d_max: MAX_D,
            classifiers: ClassifierKind::ALL.to_vec(),
            pool_average: false,
            label_rule: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates a file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(out) = &mut self.out {
            fix(out);
        }
        match &mut self.data {
            Some(DataSource::Logs { dir, ontology, .. }) => {
                fix(dir);
                if let Some(o) = ontology {
                    fix(o);
                }
            }
            Some(DataSource::Events { dir }) => fix(dir),
            _ => {}
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train.validate()?;
        self.federated.validate()?;
        if self.regimes.is_empty() {
            bail!("regimes must name at least one regime");
        }
        if self.analysis.k == 0 {
            bail!("analysis.k must be at least 1");
        }
        if self.analysis.stable_window == Some(0) {
            bail!("analysis.stable_window must be at least 1");
        }
        if self.advisor.d_max == 0 {
            bail!("advisor.d_max must be at least 1");
        }
        if self.advisor.classifiers.is_empty() {
            bail!("advisor.classifiers must name at least one classifier");
        }
        if let Some(DataSource::Synth(s)) = &self.data {
            if s.days == 0 {
                bail!("data.synth.days must be at least 1");
            }
            s.spec(self.seed).validate()?;
        }
        match &self.schedule {
            Some(ScheduleSource::Preset(name)) if deploy::preset(name).is_none() => {
                bail!("unknown schedule preset {name:?}")
            }
            Some(ScheduleSource::Poisson { lambda, .. }) if !(*lambda > 0.0 && lambda.is_finite()) => {
                bail!("schedule.poisson.lambda must be positive")
            }
            Some(ScheduleSource::Fixed(starts)) if starts.is_empty() => bail!("schedule.fixed names no homes"),
            _ => {}
        }
        Ok(())
    }

    pub fn simulation(&self) -> SimulationConfig {
        SimulationConfig {
            train: self.train.clone(),
            federated: self.federated.clone(),
            seed: seed::derive(self.seed, "simulate"),
        }
    }

    /// Homes the schedule names on its own, in id order.
    pub fn named_homes(&self) -> Option<Vec<String>> {
        match &self.schedule {
            Some(ScheduleSource::Preset(name)) => {
                deploy::preset(name).map(|s| s.home_ids().map(str::to_string).collect())
            }
            Some(ScheduleSource::Fixed(starts)) => Some(starts.keys().cloned().collect()),
            _ => None,
        }
    }

    /// Builds the schedule for `homes` (sorted ids with data).
    pub fn build_schedule(&self, homes: &[String]) -> anyhow::Result<DeploymentSchedule> {
        let schedule = match &self.schedule {
            None => bail!("no schedule configured"),
            Some(ScheduleSource::Preset(name)) => {
                deploy::preset(name).with_context(|| format!("unknown schedule preset {name:?}"))?
            }
            Some(ScheduleSource::Fixed(starts)) => deploy::fixed_schedule(starts.clone())?,
            Some(ScheduleSource::Poisson { lambda, seed: s }) => deploy::sample_schedule_for(
                homes,
                *lambda,
                s.unwrap_or_else(|| seed::derive(self.seed, "schedule")),
            )?,
        };
        let missing: Vec<&str> = schedule.home_ids().filter(|id| !homes.iter().any(|h| h == id)).collect();
        if !missing.is_empty() {
            log::warn!("no data for scheduled homes {missing:?}; they are left out");
        }
        let restricted = schedule.restrict(homes.iter().map(String::as_str));
        if restricted.is_empty() {
            bail!("no scheduled home has data");
        }
        Ok(restricted)
    }
}
