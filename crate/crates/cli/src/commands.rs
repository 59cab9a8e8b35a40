//! The subcommands. Each reads its inputs from the output directory (or the
//! configured data source), writes through a [`Stage`], and reports usage
//! problems separately from runtime failures.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context as _};

use homefed_core::advisor::{build_rows, evaluate_advisor, write_rows_csv, AdvisorReport};
use homefed_core::analysis::{
    activity_proportions, crossover_report, pool_average_proportions, read_proportions_csv, write_proportions_csv,
    write_reports_json, CrossoverReport,
};
use homefed_core::ingest::{
    collapse_with_policy, parse_log, read_canonical, write_canonical, NotTrackedPolicy, RawRecord,
    DEFAULT_TRAIN_FRACTION,
};
use homefed_core::regimes::{run_simulation, RegimeKind, SimulationResult};
use homefed_core::synth::generate_log;
use homefed_core::{seed, DeploymentSchedule, Error, Event, HomeDataset, OntologyMap};

use crate::config::{CrossoverVariant, DataSource, ExperimentConfig};
use crate::output::Stage;

pub const EVENTS_DIR: &str = "events";
pub const PREPROCESS_SUMMARY: &str = "preprocess_summary.csv";
pub const ACCURACY: &str = "accuracy.csv";
pub const SCHEDULE: &str = "schedule.json";
pub const CROSSOVER: &str = "crossover.json";
pub const PROPORTIONS: &str = "proportions.csv";
pub const ADVISOR_ROWS: &str = "advisor_rows.csv";
pub const ADVISOR_F1: &str = "advisor_f1.csv";
pub const ADVISOR_SUMMARY: &str = "advisor_summary.json";

// A failed step also clears everything derived from its outputs.
const ADVISE_OUTPUTS: &[&str] = &[ADVISOR_ROWS, ADVISOR_F1, ADVISOR_SUMMARY];
const ANALYZE_OUTPUTS: &[&str] = &[CROSSOVER, PROPORTIONS, ADVISOR_ROWS, ADVISOR_F1, ADVISOR_SUMMARY];
const SIMULATE_OUTPUTS: &[&str] = &[
    ACCURACY,
    SCHEDULE,
    CROSSOVER,
    PROPORTIONS,
    ADVISOR_ROWS,
    ADVISOR_F1,
    ADVISOR_SUMMARY,
];
const PREPROCESS_OUTPUTS: &[&str] = &[
    EVENTS_DIR,
    PREPROCESS_SUMMARY,
    ACCURACY,
    SCHEDULE,
    CROSSOVER,
    PROPORTIONS,
    ADVISOR_ROWS,
    ADVISOR_F1,
    ADVISOR_SUMMARY,
];

#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or missing/unreadable input; exit code 2.
    Usage(anyhow::Error),
    /// The run itself failed; exit code 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => e,
        }
    }
}

pub type CmdResult<T> = Result<T, Failure>;

trait Classify<T> {
    fn usage(self) -> CmdResult<T>;
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(anyhow!(msg.into())))
}

/// A resolved configuration and output directory.
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HomeSummary {
    pub home_id: String,
    pub raw_records: usize,
    pub malformed: usize,
    pub not_tracked_records: usize,
    pub events: usize,
    pub days: u32,
}

struct LoadedHome {
    summary: HomeSummary,
    events: Vec<Event>,
}

fn collapse_home(
    home_id: String,
    records: &[RawRecord],
    malformed: usize,
    map: &OntologyMap,
    policy: NotTrackedPolicy,
) -> CmdResult<LoadedHome> {
    let collapsed = collapse_with_policy(records, map, policy);
    if collapsed.events.is_empty() {
        return usage(format!("home {home_id} has no tracked activity"));
    }
    Ok(LoadedHome {
        summary: HomeSummary {
            home_id,
            raw_records: records.len(),
            malformed,
            not_tracked_records: collapsed.not_tracked_records,
            events: collapsed.events.len(),
            days: collapsed.events.last().map_or(0, |e| e.day_index + 1),
        },
        events: collapsed.events,
    })
}

/// Regular files of `dir`, sorted by name.
fn list_files(dir: &Path) -> CmdResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display())).usage()?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.usage()?.path();
        let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return usage(format!("no input files in {}", dir.display()));
    }
    Ok(files)
}

fn file_stem(path: &Path) -> CmdResult<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Failure::Usage(anyhow!("unusable file name {}", path.display())))
}

fn load_source(cfg: &ExperimentConfig) -> CmdResult<Vec<LoadedHome>> {
    let Some(data) = &cfg.data else {
        return usage("no data source configured");
    };
    let mut homes = Vec::new();
    match data {
        DataSource::Logs {
            dir,
            ontology,
            not_tracked,
        } => {
            let map = match ontology {
                Some(path) => {
                    let f = File::open(path).with_context(|| format!("opening {}", path.display())).usage()?;
                    OntologyMap::from_reader(BufReader::new(f)).usage()?
                }
                None => OntologyMap::default(),
            };
            for path in list_files(dir)? {
                let f = File::open(&path).with_context(|| format!("opening {}", path.display())).usage()?;
                let log = parse_log(BufReader::new(f))
                    .with_context(|| format!("parsing {}", path.display()))
                    .usage()?;
                homes.push(collapse_home(file_stem(&path)?, &log.records, log.malformed, &map, *not_tracked)?);
            }
        }
        DataSource::Events { dir } => {
            for path in list_files(dir)? {
                let f = File::open(&path).with_context(|| format!("opening {}", path.display())).usage()?;
                let (home_id, events) = read_canonical(BufReader::new(f))
                    .with_context(|| format!("reading {}", path.display()))
                    .usage()?;
                if events.is_empty() {
                    return usage(format!("{} holds no events", path.display()));
                }
                homes.push(LoadedHome {
                    summary: HomeSummary {
                        home_id,
                        raw_records: events.len(),
                        malformed: 0,
                        not_tracked_records: 0,
                        events: events.len(),
                        days: events.last().map_or(0, |e| e.day_index + 1),
                    },
                    events,
                });
            }
        }
        DataSource::Synth(synth) => {
            let ids: Vec<String> = match (cfg.named_homes(), synth.homes) {
                (Some(ids), _) => ids,
                (None, Some(m)) if m > 0 => (1..=m).map(|i| format!("home-{i:02}")).collect(),
                _ => return usage("data.synth.homes is required unless the schedule names the homes"),
            };
            let spec = synth.spec(cfg.seed);
            let map = OntologyMap::default();
            for id in ids {
                let records = generate_log(&spec, &id, synth.days).usage()?;
                homes.push(collapse_home(id, &records, 0, &map, NotTrackedPolicy::Drop)?);
            }
        }
    }
    homes.sort_by(|a, b| a.summary.home_id.cmp(&b.summary.home_id));
    if let Some(w) = homes.windows(2).find(|w| w[0].summary.home_id == w[1].summary.home_id) {
        return usage(format!("home {} appears twice", w[0].summary.home_id));
    }
    Ok(homes)
}

/// Parses logs, collapses them to events and writes one canonical file per
/// home plus a summary table.
pub fn preprocess(ctx: &Context) -> CmdResult<Vec<HomeSummary>> {
    let homes = load_source(&ctx.config)?;
    let stage = Stage::new(&ctx.out, "preprocess", PREPROCESS_OUTPUTS).runtime()?;
    let events_dir = stage.path(EVENTS_DIR);
    fs::create_dir(&events_dir).runtime()?;
    for h in &homes {
        let f = File::create(events_dir.join(format!("{}.csv", h.summary.home_id))).runtime()?;
        let mut w = BufWriter::new(f);
        write_canonical(&mut w, &h.summary.home_id, &h.events).runtime()?;
        w.flush().runtime()?;
    }
    let summaries: Vec<HomeSummary> = homes.into_iter().map(|h| h.summary).collect();
    let mut table = String::from("home_id,raw_records,malformed,not_tracked_records,events,days\n");
    for s in &summaries {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.home_id, s.raw_records, s.malformed, s.not_tracked_records, s.events, s.days
        ));
    }
    fs::write(stage.path(PREPROCESS_SUMMARY), &table).runtime()?;
    stage.commit().runtime()?;
    print!("{table}");
    Ok(summaries)
}

fn require(path: PathBuf, hint: &str) -> CmdResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        usage(format!("{} not found; {hint}", path.display()))
    }
}

/// Canonical event files under `out/events`, keyed by home id.
pub fn load_events(out: &Path, validation_fraction: f64) -> CmdResult<BTreeMap<String, HomeDataset>> {
    let dir = require(out.join(EVENTS_DIR), "run `preprocess` first")?;
    let mut homes = BTreeMap::new();
    for path in list_files(&dir)? {
        let f = File::open(&path).usage()?;
        let (id, events) = read_canonical(BufReader::new(f))
            .with_context(|| format!("reading {}", path.display()))
            .usage()?;
        let ds = HomeDataset::with_fractions(id.clone(), events, DEFAULT_TRAIN_FRACTION, validation_fraction)
            .with_context(|| format!("loading {}", path.display()))
            .usage()?;
        homes.insert(id, ds);
    }
    Ok(homes)
}

fn classify_core(e: Error) -> Failure {
    match e {
        Error::InvalidConfig(_) => Failure::Usage(e.into()),
        _ => Failure::Runtime(e.into()),
    }
}

/// Replays the deployment and writes the per-day accuracy of every regime.
pub fn simulate(ctx: &Context) -> CmdResult<SimulationResult> {
    let cfg = &ctx.config;
    let homes = load_events(&ctx.out, cfg.train.validation_fraction)?;
    let ids: Vec<String> = homes.keys().cloned().collect();
    let schedule = cfg.build_schedule(&ids).usage()?;
    let stage = Stage::new(&ctx.out, "simulate", SIMULATE_OUTPUTS).runtime()?;
    let result =
        run_simulation(&schedule, &homes, cfg.horizon, &cfg.regimes, &cfg.simulation()).map_err(classify_core)?;
    let mut w = BufWriter::new(File::create(stage.path(ACCURACY)).runtime()?);
    result.write_csv(&mut w).runtime()?;
    w.flush().runtime()?;
    drop(w);
    fs::write(stage.path(SCHEDULE), schedule.to_json().runtime()?).runtime()?;
    stage.commit().runtime()?;
    let deployed = schedule.iter().filter(|(_, h)| h.start < cfg.horizon).count();
    println!(
        "{} accuracy rows for {} deployed homes over {} regimes",
        result.records.len(),
        deployed,
        cfg.regimes.len()
    );
    Ok(result)
}

pub struct Analysis {
    pub reports: Vec<CrossoverReport>,
}

/// Crossover and regret per home against the collaborative regime, plus the
/// early activity proportions.
pub fn analyze(ctx: &Context) -> CmdResult<Analysis> {
    let cfg = &ctx.config;
    let path = require(ctx.out.join(ACCURACY), "run `simulate` first")?;
    let result = SimulationResult::read_csv(BufReader::new(File::open(&path).usage()?))
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    let present = result.regimes();
    if !present.contains(&RegimeKind::Local) {
        return usage("analysis needs local accuracy curves");
    }
    let collab = match cfg.analysis.collaborative {
        Some(RegimeKind::Local) => return usage("analysis.collaborative must be centralized or federated"),
        Some(r) => r,
        None if present.contains(&RegimeKind::Federated) => RegimeKind::Federated,
        None => RegimeKind::Centralized,
    };
    if !present.contains(&collab) {
        return usage(format!("analysis needs {collab} accuracy curves alongside local ones"));
    }
    let curves = result.curves();
    let find = |home: &str, regime| curves.iter().find(|c| c.home_id == home && c.regime == regime);
    let mut reports = Vec::new();
    for local in curves.iter().filter(|c| c.regime == RegimeKind::Local) {
        let other = find(&local.home_id, collab)
            .ok_or_else(|| Failure::Usage(anyhow!("home {} has no {collab} curve", local.home_id)))?;
        reports.push(crossover_report(local, other, cfg.analysis.stable_window).usage()?);
    }

    let homes = load_events(&ctx.out, cfg.train.validation_fraction)?;
    let mut proportions = Vec::new();
    for r in &reports {
        let ds = homes
            .get(&r.home_id)
            .ok_or_else(|| Failure::Usage(anyhow!("no events for home {}", r.home_id)))?;
        proportions.push(activity_proportions(ds, cfg.analysis.k).usage()?);
    }

    let stage = Stage::new(&ctx.out, "analyze", ANALYZE_OUTPUTS).runtime()?;
    let mut w = BufWriter::new(File::create(stage.path(CROSSOVER)).runtime()?);
    write_reports_json(&mut w, &reports).runtime()?;
    writeln!(w).runtime()?;
    w.flush().runtime()?;
    drop(w);
    let mut w = BufWriter::new(File::create(stage.path(PROPORTIONS)).runtime()?);
    write_proportions_csv(&mut w, &proportions).runtime()?;
    w.flush().runtime()?;
    drop(w);
    stage.commit().runtime()?;
    for r in &reports {
        let day = |d: Option<u32>| d.map_or_else(|| "-".to_string(), |d| d.to_string());
        println!(
            "{}: crossover {} (stable {}), regret {:.4}{}",
            r.home_id,
            day(r.crossover_day),
            day(r.stable_crossover_day),
            r.regret,
            if r.open_ended { " (open-ended)" } else { "" }
        );
    }
    Ok(Analysis { reports })
}

/// Builds advisor rows from the analysis outputs and scores every
/// configured classifier by leave-one-home-out F1.
pub fn advise(ctx: &Context) -> CmdResult<AdvisorReport> {
    let cfg = &ctx.config;
    let path = require(ctx.out.join(CROSSOVER), "run `analyze` first")?;
    let mut reports: Vec<CrossoverReport> = serde_json::from_reader(BufReader::new(File::open(&path).usage()?))
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    if cfg.analysis.crossover == CrossoverVariant::Stable {
        for r in &mut reports {
            r.crossover_day = r.stable_crossover_day;
        }
    }
    let path = require(ctx.out.join(PROPORTIONS), "run `analyze` first")?;
    let proportions = read_proportions_csv(BufReader::new(File::open(&path).usage()?))
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    let path = require(ctx.out.join(SCHEDULE), "run `simulate` first")?;
    let schedule = DeploymentSchedule::from_json(&fs::read_to_string(&path).usage()?)
        .with_context(|| format!("reading {}", path.display()))
        .usage()?;
    if proportions.len() < 2 {
        return usage(format!("the advisor needs at least 2 homes, found {}", proportions.len()));
    }
    let pool = if cfg.advisor.pool_average {
        Some(pool_average_proportions(&proportions).usage()?)
    } else {
        None
    };
    let mut rows = build_rows(&reports, &proportions, &schedule, cfg.advisor.d_max, pool).usage()?;
    if let Some(rule) = &cfg.advisor.label_rule {
        rule.apply(&mut rows).usage()?;
    }
    log::info!("built {} advisor rows for {} homes", rows.len(), proportions.len());
    let report =
        evaluate_advisor(&rows, &cfg.advisor.classifiers, seed::derive(cfg.seed, "advise")).map_err(classify_core)?;

    let stage = Stage::new(&ctx.out, "advise", ADVISE_OUTPUTS).runtime()?;
    let mut w = BufWriter::new(File::create(stage.path(ADVISOR_ROWS)).runtime()?);
    write_rows_csv(&mut w, &rows).runtime()?;
    w.flush().runtime()?;
    drop(w);
    let mut w = BufWriter::new(File::create(stage.path(ADVISOR_F1)).runtime()?);
    report.write_folds_csv(&mut w).runtime()?;
    w.flush().runtime()?;
    drop(w);
    let mut w = BufWriter::new(File::create(stage.path(ADVISOR_SUMMARY)).runtime()?);
    report.write_summary_json(&mut w).runtime()?;
    writeln!(w).runtime()?;
    w.flush().runtime()?;
    drop(w);
    stage.commit().runtime()?;
    println!("{} advisor rows", rows.len());
    for s in &report.summary {
        match s.mean_f1 {
            Some(f1) => println!("{}: mean F1 {f1:.4} over {} folds", s.classifier, s.folds_scored),
            None => println!("{}: no scorable fold", s.classifier),
        }
    }
    Ok(report)
}

/// Preprocess (when a data source is configured), simulate, analyze, advise.
pub fn report(ctx: &Context) -> CmdResult<AdvisorReport> {
    if ctx.config.data.is_some() {
        preprocess(ctx)?;
    }
    simulate(ctx)?;
    analyze(ctx)?;
    advise(ctx)
}
