//! Batch experiments: paired-seed episode runs, the results table and
//! planner × mode comparisons.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    default_t_max, run_episode, DecisionSource, DelayModel, EngineConfig, EngineError, EpisodeLog, LossSchedule, Mode,
};
use crate::metrics::{EpisodeMetrics, MetricSummary, MetricsError, RewardConfig, RunStats};
use crate::planners::{PlannerKind, PlannerParams, PlannerPolicy};
use crate::policy::{CheckpointError, Policy, PolicySource, RandomGoalSource};
use crate::scenario::{build_setup, episode_seeds, setup_on_map};
use crate::worldgen::{GridMap, WorldgenError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("configs are not comparable: {0}")]
    RefusesMismatched(String),
    #[error("episode {episode}: {source}")]
    Engine { episode: u64, source: EngineError },
    #[error(transparent)]
    Worldgen(#[from] WorldgenError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |e| ExperimentError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Who picks the goals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decider {
    Planner {
        planner: PlannerKind,
        #[serde(default)]
        params: PlannerParams,
    },
    Policy {
        checkpoint: PathBuf,
        #[serde(default)]
        greedy: bool,
    },
    /// Uniformly random goal blocks on a G×G grid.
    Random {
        #[serde(default = "default_goal_grid")]
        goal_grid: usize,
    },
}

fn default_goal_grid() -> usize {
    5
}

impl Decider {
    /// Value of the `planner` column.
    pub fn label(&self) -> String {
        match self {
            Decider::Planner { planner, .. } => planner.name().to_string(),
            Decider::Policy { .. } => "mcp".to_string(),
            Decider::Random { .. } => "random".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map_size: usize,
    pub n_agents: usize,
    pub mode: Mode,
    pub decider: Decider,
    pub delay: DelayModel,
    pub loss: Option<LossSchedule>,
    pub episodes: usize,
    /// Base seed; episode `i` derives all of its streams from `(seed, i)`.
    pub seed: u64,
    /// Episode cap and ACS horizon; the size default when absent.
    pub t_max_s: Option<f64>,
    pub reward: RewardConfig,
    /// ASCII map used for every episode instead of generated ones; it must
    /// be square with side `map_size`.
    pub map_file: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            map_size: 15,
            n_agents: 2,
            mode: Mode::Async,
            decider: Decider::Planner {
                planner: PlannerKind::Nearest,
                params: PlannerParams::default(),
            },
            delay: DelayModel::disabled(),
            loss: None,
            episodes: 100,
            seed: 0,
            t_max_s: None,
            reward: RewardConfig::default(),
            map_file: None,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn t_max(&self) -> f64 {
        self.t_max_s.unwrap_or_else(|| default_t_max(self.map_size))
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            n_agents: self.n_agents,
            mode: self.mode,
            delay: self.delay,
            loss: self.loss,
            t_max_s: self.t_max(),
            reward: self.reward,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.map_size < 7 {
            return bad(format!("map_size {} below 7", self.map_size));
        }
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        if let Decider::Random { goal_grid: 0 } = self.decider {
            return bad("goal_grid must be positive".into());
        }
        self.engine_config()
            .validate()
            .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }

    /// Loads `map_file`, if any, and checks its size.
    pub fn fixed_map(&self) -> Result<Option<GridMap>, ExperimentError> {
        let Some(path) = &self.map_file else {
            return Ok(None);
        };
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let map = GridMap::from_ascii(&text).map_err(|e| ExperimentError::Io {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if map.width() != self.map_size || map.height() != self.map_size {
            return Err(ExperimentError::InvalidConfig(format!(
                "{} is {}x{}, expected {}x{}",
                path.display(),
                map.width(),
                map.height(),
                self.map_size,
                self.map_size
            )));
        }
        Ok(Some(map))
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub index: u64,
    pub log: EpisodeLog,
    pub metrics: EpisodeMetrics,
}

#[derive(Serialize)]
struct EpisodeMeta<'a> {
    experiment: &'a ExperimentConfig,
    episode: u64,
}

fn run_one(
    cfg: &ExperimentConfig,
    map: Option<&GridMap>,
    policy: Option<&Policy>,
    index: u64,
) -> Result<EpisodeOutcome, ExperimentError> {
    let engine = cfg.engine_config();
    let seeds = episode_seeds(cfg.seed, index);
    let meta = serde_json::to_value(EpisodeMeta {
        experiment: cfg,
        episode: index,
    })
    .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let setup = match map {
        Some(m) => setup_on_map(m.clone(), &engine, seeds, meta)?,
        None => build_setup(cfg.map_size, &engine, seeds, meta)?,
    };
    let mut planner;
    let mut learned;
    let mut random;
    let source: &mut dyn DecisionSource = match &cfg.decider {
        Decider::Planner { planner: kind, params } => {
            planner = PlannerPolicy::new(*kind, *params, seeds.decision);
            &mut planner
        }
        Decider::Policy { greedy, .. } => {
            let policy = policy.expect("policy decider without a loaded checkpoint");
            learned = PolicySource::new(policy, seeds.decision);
            learned.greedy = *greedy;
            &mut learned
        }
        Decider::Random { goal_grid } => {
            random = RandomGoalSource::new(*goal_grid, seeds.decision);
            &mut random
        }
    };
    let log = run_episode(setup, source).map_err(|source| ExperimentError::Engine { episode: index, source })?;
    let metrics = EpisodeMetrics::from_log(&log, engine.t_max_s, engine.reward.success_threshold_pct);
    Ok(EpisodeOutcome { index, log, metrics })
}

/// Runs every episode of `cfg` on the current rayon pool. Outcomes are in
/// episode order whatever the completion order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<EpisodeOutcome>, ExperimentError> {
    cfg.validate()?;
    let map = cfg.fixed_map()?;
    let policy = match &cfg.decider {
        Decider::Policy { checkpoint, .. } => Some(Policy::load(checkpoint)?),
        _ => None,
    };
    (0..cfg.episodes as u64)
        .into_par_iter()
        .map(|i| run_one(cfg, map.as_ref(), policy.as_ref(), i))
        .collect()
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub planner: String,
    pub mode: Mode,
    pub map_size: usize,
    pub n_agents: usize,
    pub time_mean: f64,
    pub time_std: f64,
    pub overlap_mean: f64,
    pub overlap_std: f64,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub acs_mean: f64,
    pub acs_std: f64,
    pub episodes: usize,
}

pub const RESULT_COLUMNS: [&str; 13] = [
    "planner",
    "mode",
    "map_size",
    "n_agents",
    "time_mean",
    "time_std",
    "overlap_mean",
    "overlap_std",
    "coverage_mean",
    "coverage_std",
    "acs_mean",
    "acs_std",
    "episodes",
];

impl ResultRow {
    pub fn new(cfg: &ExperimentConfig, metrics: &[EpisodeMetrics]) -> Result<Self, ExperimentError> {
        let s = MetricSummary::from_episodes(metrics, cfg.t_max())?;
        Ok(ResultRow {
            planner: cfg.decider.label(),
            mode: cfg.mode,
            map_size: cfg.map_size,
            n_agents: cfg.n_agents,
            time_mean: s.time.mean,
            time_std: s.time.std,
            overlap_mean: s.overlap.mean,
            overlap_std: s.overlap.std,
            coverage_mean: s.coverage.mean,
            coverage_std: s.coverage.std,
            acs_mean: s.acs.mean,
            acs_std: s.acs.std,
            episodes: metrics.len(),
        })
    }

    /// Time, overlap, coverage and ACS statistics. Counts are the episode
    /// count; the table does not record how many episodes had an overlap.
    pub fn stats(&self) -> [RunStats; 4] {
        let st = |mean, std| RunStats {
            mean,
            std,
            count: self.episodes,
        };
        [
            st(self.time_mean, self.time_std),
            st(self.overlap_mean, self.overlap_std),
            st(self.coverage_mean, self.coverage_std),
            st(self.acs_mean, self.acs_std),
        ]
    }
}

pub fn write_results_csv<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: Read>(r: R) -> Result<Vec<ResultRow>, csv::Error> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.iter().ne(RESULT_COLUMNS) {
        return Err(csv::Error::from(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("unexpected results header {:?}", header.iter().collect::<Vec<_>>()),
        )));
    }
    rd.deserialize().collect()
}

/// Per-episode values of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: u64,
    pub map_seed: u64,
    pub time: f64,
    pub reached: bool,
    pub coverage: f64,
    pub acs: f64,
    pub overlap: Option<f64>,
}

impl EpisodeRow {
    pub fn new(o: &EpisodeOutcome, cap: f64) -> Self {
        EpisodeRow {
            episode: o.index,
            map_seed: o.log.header.seeds.map,
            time: o.metrics.time_or(cap),
            reached: o.metrics.time.is_some(),
            coverage: o.metrics.coverage,
            acs: o.metrics.acs,
            overlap: o.metrics.overlap,
        }
    }
}

/// File layout of a run directory.
pub const RESULTS_FILE: &str = "results.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_DIR: &str = "logs";

pub fn log_file_name(index: u64) -> String {
    format!("episode_{index:04}.jsonl")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_csv_file<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ExperimentError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| ExperimentError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `config.json`, one JSON-lines log per episode, the per-episode
/// table and the one-row results table into `dir`.
pub fn write_run(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcomes: &[EpisodeOutcome],
) -> Result<ResultRow, ExperimentError> {
    let logs = dir.join(LOG_DIR);
    fs::create_dir_all(&logs).map_err(io_err(&logs))?;
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    for o in outcomes {
        let path = logs.join(log_file_name(o.index));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        o.log
            .write_jsonl(std::io::BufWriter::new(file))
            .map_err(io_err(&path))?;
    }
    let cap = cfg.t_max();
    let episodes: Vec<EpisodeRow> = outcomes.iter().map(|o| EpisodeRow::new(o, cap)).collect();
    write_csv_file(&dir.join(EPISODES_FILE), &episodes)?;
    let metrics: Vec<EpisodeMetrics> = outcomes.iter().map(|o| o.metrics).collect();
    let row = ResultRow::new(cfg, &metrics)?;
    let path = dir.join(RESULTS_FILE);
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    write_results_csv(file, std::slice::from_ref(&row)).map_err(|e| ExperimentError::Io {
        path,
        message: e.to_string(),
    })?;
    Ok(row)
}

/// Refuses configs that would not replay the same episodes.
pub fn check_comparable(configs: &[ExperimentConfig]) -> Result<(), ExperimentError> {
    if configs.len() < 2 {
        return Err(ExperimentError::RefusesMismatched("need at least two configs".into()));
    }
    let first = &configs[0];
    for (i, c) in configs.iter().enumerate().skip(1) {
        let mut diffs = Vec::new();
        if c.map_size != first.map_size {
            diffs.push("map_size");
        }
        if c.n_agents != first.n_agents {
            diffs.push("n_agents");
        }
        if c.loss != first.loss {
            diffs.push("loss");
        }
        if c.seed != first.seed {
            diffs.push("seed");
        }
        if c.episodes != first.episodes {
            diffs.push("episodes");
        }
        if c.t_max() != first.t_max() {
            diffs.push("t_max_s");
        }
        if c.delay != first.delay {
            diffs.push("delay");
        }
        if c.reward != first.reward {
            diffs.push("reward");
        }
        if c.map_file != first.map_file {
            diffs.push("map_file");
        }
        if !diffs.is_empty() {
            return Err(ExperimentError::RefusesMismatched(format!(
                "config {i} differs from config 0 in {}",
                diffs.join(", ")
            )));
        }
        if configs[..i].iter().any(|p| p.decider == c.decider && p.mode == c.mode) {
            return Err(ExperimentError::RefusesMismatched(format!(
                "config {i} duplicates an earlier config"
            )));
        }
    }
    Ok(())
}

/// A comparison matrix: one results row per config plus per-episode times
/// side by side.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ResultRow>,
    /// `columns[k]` names the k-th entry of every `times` row.
    pub columns: Vec<String>,
    /// Per episode: episode index and one time per config.
    pub times: Vec<(u64, Vec<f64>)>,
}

impl Comparison {
    /// Column label of a config, unique within a valid comparison.
    pub fn column_label(cfg: &ExperimentConfig) -> String {
        let mode = match cfg.mode {
            Mode::Async => "async",
            Mode::Sync => "sync",
        };
        format!("{}_{mode}", cfg.decider.label())
    }

    /// Per-episode async − sync time for `planner`, if both modes ran.
    pub fn async_minus_sync(&self, planner: &str) -> Option<Vec<f64>> {
        let a = self.columns.iter().position(|c| *c == format!("{planner}_async"))?;
        let s = self.columns.iter().position(|c| *c == format!("{planner}_sync"))?;
        Some(self.times.iter().map(|(_, t)| t[a] - t[s]).collect())
    }

    /// Wide per-episode table: `episode`, one time column per config and an
    /// `<planner>_async_minus_sync` column for every planner run in both
    /// modes.
    pub fn write_paired_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut planners: Vec<String> = Vec::new();
        for c in &self.columns {
            if let Some(p) = c.strip_suffix("_async") {
                if self.columns.iter().any(|x| *x == format!("{p}_sync")) {
                    planners.push(p.to_string());
                }
            }
        }
        let diffs: Vec<Vec<f64>> = planners.iter().filter_map(|p| self.async_minus_sync(p)).collect();
        let mut w = csv::Writer::from_writer(w);
        let mut header = vec!["episode".to_string()];
        header.extend(self.columns.iter().map(|c| format!("{c}_time")));
        header.extend(planners.iter().map(|p| format!("{p}_async_minus_sync")));
        w.write_record(&header)?;
        for (k, (episode, times)) in self.times.iter().enumerate() {
            let mut rec = vec![episode.to_string()];
            rec.extend(times.iter().map(|t| t.to_string()));
            rec.extend(diffs.iter().map(|d| d[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every config on the same episodes. Logs are dropped after metrics
/// are taken.
pub fn compare(configs: &[ExperimentConfig]) -> Result<Comparison, ExperimentError> {
    check_comparable(configs)?;
    let mut columns = Vec::new();
    let mut rows = Vec::new();
    let mut per_config = Vec::new();
    for cfg in configs {
        let label = Comparison::column_label(cfg);
        if columns.contains(&label) {
            return Err(ExperimentError::RefusesMismatched(format!(
                "two configs share the column {label}"
            )));
        }
        let outcomes = run_experiment(cfg)?;
        let metrics: Vec<EpisodeMetrics> = outcomes.iter().map(|o| o.metrics).collect();
        rows.push(ResultRow::new(cfg, &metrics)?);
        per_config.push(metrics.iter().map(|m| m.time_or(cfg.t_max())).collect::<Vec<_>>());
        columns.push(label);
    }
    let times = (0..configs[0].episodes)
        .map(|i| (i as u64, per_config.iter().map(|t| t[i]).collect()))
        .collect();
    Ok(Comparison { rows, columns, times })
}

#[cfg(test)]
mod tests;
