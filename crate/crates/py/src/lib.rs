//! Python bindings. Configs cross the boundary as JSON strings.

use std::path::PathBuf;

use async_explore::engine::EpisodeLog;
use async_explore::experiment::{self, ExperimentConfig, ResultRow};
use async_explore::metrics::{self, RatioCurve};
use async_explore::planners::PlannerKind;
use async_explore::policy;
use async_explore::replay;
use async_explore::scenario::{episode_seeds, map_spec};
use async_explore::training::{self, TrainConfig, TrainState};
use async_explore::worldgen;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Fraction of traffic saved by the compressed peer embedding.
#[pyfunction]
fn compression_ratio(map_side: usize, goal_grid: usize) -> f64 {
    policy::compression_ratio(map_side, goal_grid)
}

/// ASCII map of episode `index` for a base seed.
#[pyfunction]
#[pyo3(signature = (side, seed, index=0))]
fn generate_map(side: usize, seed: u64, index: u64) -> PyResult<String> {
    let map = worldgen::generate_map(&map_spec(side, episode_seeds(seed, index).map)).map_err(value_err)?;
    Ok(map.to_ascii())
}

/// Accumulated coverage of a step curve of `(t, ratio)` points up to `horizon`.
#[pyfunction]
fn acs(points: Vec<(f64, f64)>, horizon: f64) -> f64 {
    metrics::acs(&RatioCurve::new(points), horizon)
}

/// Mean and population standard deviation.
#[pyfunction]
fn aggregate_stats(values: Vec<f64>) -> PyResult<(f64, f64)> {
    let s = metrics::aggregate_stats(&values).map_err(value_err)?;
    Ok((s.mean, s.std))
}

#[pyfunction]
fn planner_names() -> Vec<&'static str> {
    PlannerKind::ALL.iter().map(|p| p.name()).collect()
}

/// An experiment config with every default filled in, as JSON.
#[pyfunction]
#[pyo3(signature = (overrides=None))]
fn experiment_config(overrides: Option<&str>) -> PyResult<String> {
    let cfg: ExperimentConfig = serde_json::from_str(overrides.unwrap_or("{}")).map_err(value_err)?;
    cfg.validate().map_err(value_err)?;
    serde_json::to_string(&cfg).map_err(value_err)
}

#[pyclass(module = "async_explore", frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct Results {
    planner: String,
    mode: String,
    map_size: usize,
    n_agents: usize,
    time_mean: f64,
    time_std: f64,
    overlap_mean: f64,
    overlap_std: f64,
    coverage_mean: f64,
    coverage_std: f64,
    acs_mean: f64,
    acs_std: f64,
    episodes: usize,
}

impl From<ResultRow> for Results {
    fn from(r: ResultRow) -> Self {
        Results {
            planner: r.planner,
            mode: serde_json::to_value(r.mode).unwrap().as_str().unwrap_or("").to_string(),
            map_size: r.map_size,
            n_agents: r.n_agents,
            time_mean: r.time_mean,
            time_std: r.time_std,
            overlap_mean: r.overlap_mean,
            overlap_std: r.overlap_std,
            coverage_mean: r.coverage_mean,
            coverage_std: r.coverage_std,
            acs_mean: r.acs_mean,
            acs_std: r.acs_std,
            episodes: r.episodes,
        }
    }
}

#[pymethods]
impl Results {
    fn __repr__(&self) -> String {
        format!(
            "Results(planner={:?}, mode={:?}, time={:.2}({:.2}), coverage={:.2}, acs={:.2}, episodes={})",
            self.planner, self.mode, self.time_mean, self.time_std, self.coverage_mean, self.acs_mean, self.episodes
        )
    }
}

/// A parsed episode log.
#[pyclass(module = "async_explore", frozen)]
struct Episode {
    log: EpisodeLog,
}

#[pymethods]
impl Episode {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Episode {
            log: EpisodeLog::from_jsonl(text).map_err(value_err)?,
        })
    }

    fn to_jsonl(&self) -> String {
        self.log.to_jsonl()
    }

    #[getter]
    fn final_ratio(&self) -> f64 {
        self.log.summary.final_ratio
    }

    #[getter]
    fn terminal_time(&self) -> f64 {
        self.log.summary.terminal_time_s
    }

    #[getter]
    fn time_to_success(&self) -> Option<f64> {
        self.log.summary.time_to_success_s
    }

    #[getter]
    fn n_events(&self) -> usize {
        self.log.events.len()
    }

    #[getter]
    fn reachable_cells(&self) -> usize {
        self.log.header.reachable_cells
    }

    #[getter]
    fn map(&self) -> Vec<String> {
        self.log.header.map.clone()
    }

    /// Team reward of every event.
    fn rewards(&self) -> Vec<f64> {
        self.log.events.iter().map(|e| e.reward).collect()
    }

    /// ASCII frames: the initial one, then every `every` events.
    #[pyo3(signature = (every=1))]
    fn frames(&self, every: usize) -> PyResult<Vec<String>> {
        Ok(replay::frames(&self.log, every)
            .map_err(value_err)?
            .into_iter()
            .map(|f| f.text)
            .collect())
    }
}

/// Runs an experiment (JSON config) and returns its results row and
/// episodes. Writes the run directory when `out` is given.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn run(py: Python<'_>, config: &str, out: Option<PathBuf>) -> PyResult<(Results, Vec<Episode>)> {
    let cfg: ExperimentConfig = serde_json::from_str(config).map_err(value_err)?;
    let (row, outcomes) = py
        .detach(|| -> Result<_, experiment::ExperimentError> {
            let outcomes = experiment::run_experiment(&cfg)?;
            let row = match &out {
                Some(dir) => experiment::write_run(dir, &cfg, &outcomes)?,
                None => {
                    let m: Vec<_> = outcomes.iter().map(|o| o.metrics).collect();
                    ResultRow::new(&cfg, &m)?
                }
            };
            Ok((row, outcomes))
        })
        .map_err(value_err)?;
    Ok((
        row.into(),
        outcomes.into_iter().map(|o| Episode { log: o.log }).collect(),
    ))
}

/// Runs configs on the same episodes; one results row per config.
#[pyfunction]
fn compare(py: Python<'_>, configs: Vec<String>) -> PyResult<Vec<Results>> {
    let cfgs = configs
        .iter()
        .map(|c| serde_json::from_str::<ExperimentConfig>(c))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let cmp = py.detach(|| experiment::compare(&cfgs)).map_err(value_err)?;
    Ok(cmp.rows.into_iter().map(Results::from).collect())
}

/// Trains from a JSON config and saves the checkpoint into `out`. Returns
/// `(batches, macro_steps)`.
#[pyfunction]
#[pyo3(signature = (config, out))]
fn train(py: Python<'_>, config: &str, out: PathBuf) -> PyResult<(usize, u64)> {
    let cfg: TrainConfig = serde_json::from_str(config).map_err(value_err)?;
    let outcome = py.detach(|| training::train(&cfg)).map_err(value_err)?;
    std::fs::create_dir_all(&out).map_err(|e| PyIOError::new_err(e.to_string()))?;
    outcome.state.save(&out).map_err(value_err)?;
    Ok((outcome.state.batch, outcome.state.steps))
}

/// A saved policy checkpoint.
#[pyclass(module = "async_explore", frozen)]
struct Policy {
    inner: policy::Policy,
}

#[pymethods]
impl Policy {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Policy {
            inner: policy::Policy::load(&path).map_err(value_err)?,
        })
    }

    /// Fresh parameters for a JSON policy config.
    #[staticmethod]
    #[pyo3(signature = (config="{}", seed=0))]
    fn init(config: &str, seed: u64) -> PyResult<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(&format!("{{\"seed\":{seed},\"policy\":{config}}}")).map_err(value_err)?;
        Ok(Policy {
            inner: TrainState::init(&cfg).map_err(value_err)?.policy,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(value_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn config(&self) -> String {
        serde_json::to_string(&self.inner.config).unwrap()
    }
}

#[pymodule(name = "async_explore")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compression_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(generate_map, m)?)?;
    m.add_function(wrap_pyfunction!(acs, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_stats, m)?)?;
    m.add_function(wrap_pyfunction!(planner_names, m)?)?;
    m.add_function(wrap_pyfunction!(experiment_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Results>()?;
    m.add_class::<Episode>()?;
    m.add_class::<Policy>()?;
    Ok(())
}
