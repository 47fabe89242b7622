use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use async_explore::engine::{default_t_max, EpisodeLog, Mode};
use async_explore::experiment::{self, write_results_csv, Comparison, Decider, ExperimentConfig, ResultRow};
use async_explore::planners::{PlannerKind, PlannerParams};
use async_explore::replay::frames;
use async_explore::scenario::{episode_seeds, map_spec};
use async_explore::training::{train_from, write_curves_csv, write_eval_csv, TrainConfig, TrainState, STATE_FILE};
use async_explore::worldgen::generate_map;
use serde::{Deserialize, Serialize};

pub const CURVES_FILE: &str = "curves.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const COMPARE_FILE: &str = "compare.csv";
pub const PAIRED_FILE: &str = "paired.csv";
pub const CONFIGS_FILE: &str = "configs.json";

fn read_toml(path: &Path) -> anyhow::Result<toml::Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<toml::Table>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn from_table<T: serde::de::DeserializeOwned>(table: toml::Table, path: &Path) -> anyhow::Result<T> {
    T::deserialize(table).with_context(|| format!("invalid config {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Command-line values that replace config values.
pub struct Overrides {
    pub seed: Option<u64>,
    pub map_file: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = &self.map_file {
            cfg.map_file = Some(m.clone());
        }
    }
}

fn load_experiment(path: &Path, over: &Overrides) -> anyhow::Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = from_table(read_toml(path)?, path)?;
    over.apply(&mut cfg);
    cfg.validate()
        .with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

fn print_rows(rows: &[ResultRow]) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "{:<10} {:<6} {:>16} {:>16} {:>16} {:>16}",
        "planner", "mode", "time", "overlap", "coverage", "acs"
    )?;
    for r in rows {
        let [time, overlap, coverage, acs] = r.stats();
        writeln!(
            out,
            "{:<10} {:<6} {:>16} {:>16} {:>16} {:>16}",
            r.planner,
            mode_name(r.mode),
            time.to_string(),
            overlap.to_string(),
            coverage.to_string(),
            acs.to_string()
        )?;
    }
    Ok(())
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Async => "async",
        Mode::Sync => "sync",
    }
}

pub fn run(config: &Path, over: &Overrides, out: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_experiment(config, over)?;
    let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let outcomes = experiment::run_experiment(&cfg)?;
    let row = experiment::write_run(&dir, &cfg, &outcomes)?;
    print_rows(std::slice::from_ref(&row))?;
    eprintln!("wrote {} episodes to {}", outcomes.len(), dir.display());
    Ok(())
}

/// Planners × modes over a shared base config.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareMatrix {
    planners: Vec<PlannerKind>,
    modes: Vec<Mode>,
    base: ExperimentConfig,
}

fn load_compare(paths: &[PathBuf], over: &Overrides) -> anyhow::Result<Vec<ExperimentConfig>> {
    if let [path] = paths {
        let table = read_toml(path)?;
        if table.contains_key("base") {
            let m: CompareMatrix = from_table(table, path)?;
            let mut configs = Vec::new();
            for p in &m.planners {
                for mode in &m.modes {
                    let mut c = m.base.clone();
                    c.decider = Decider::Planner {
                        planner: *p,
                        params: match &m.base.decider {
                            Decider::Planner { params, .. } => *params,
                            _ => PlannerParams::default(),
                        },
                    };
                    c.mode = *mode;
                    over.apply(&mut c);
                    c.validate()?;
                    configs.push(c);
                }
            }
            return Ok(configs);
        }
    }
    paths.iter().map(|p| load_experiment(p, over)).collect()
}

pub fn compare(paths: &[PathBuf], over: &Overrides, out: Option<PathBuf>) -> anyhow::Result<()> {
    let configs = load_compare(paths, over)?;
    let cmp = experiment::compare(&configs)?;
    print_rows(&cmp.rows)?;
    let dir = out
        .or_else(|| configs[0].out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join(CONFIGS_FILE), &configs)?;
    write_results_csv(fs::File::create(dir.join(COMPARE_FILE))?, &cmp.rows)?;
    cmp.write_paired_csv(fs::File::create(dir.join(PAIRED_FILE))?)?;
    for planner in paired_planners(&cmp) {
        let d = cmp.async_minus_sync(&planner).unwrap_or_default();
        let le = d.iter().filter(|x| **x <= 0.0).count();
        eprintln!("{planner}: async <= sync in {le}/{} episodes", d.len());
    }
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn paired_planners(cmp: &Comparison) -> Vec<String> {
    cmp.columns
        .iter()
        .filter_map(|c| c.strip_suffix("_async"))
        .filter(|p| cmp.columns.iter().any(|c| *c == format!("{p}_sync")))
        .map(str::to_string)
        .collect()
}

/// A training config; the episode cap follows the map size unless given.
fn load_train(path: Option<&Path>, saved: Option<&Path>) -> anyhow::Result<TrainConfig> {
    if let Some(path) = path {
        let table = read_toml(path)?;
        let has_cap = table
            .get("engine")
            .and_then(|e| e.as_table())
            .is_some_and(|e| e.contains_key("t_max_s"));
        let mut cfg: TrainConfig = from_table(table, path)?;
        if !has_cap {
            cfg.engine.t_max_s = default_t_max(cfg.map_size);
        }
        return Ok(cfg);
    }
    if let Some(saved) = saved {
        let text = fs::read_to_string(saved).with_context(|| format!("reading {}", saved.display()))?;
        return serde_json::from_str(&text).with_context(|| format!("parsing {}", saved.display()));
    }
    Ok(TrainConfig::default())
}

pub fn train(config: Option<&Path>, seed: Option<u64>, out: &Path, fresh: bool) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let saved_cfg = out.join(TRAIN_CONFIG_FILE);
    let resume = !fresh && out.join(STATE_FILE).exists();
    let mut cfg = load_train(config, resume.then_some(saved_cfg.as_path()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let state = if resume {
        let state = TrainState::load(out)?;
        eprintln!("resuming at batch {} ({} steps)", state.batch, state.steps);
        state
    } else {
        for f in [CURVES_FILE, EVAL_FILE] {
            let p = out.join(f);
            if p.exists() {
                fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
        TrainState::init(&cfg)?
    };
    write_json(&saved_cfg, &cfg)?;
    state.save(out)?;
    let curves = out.join(CURVES_FILE);
    let evals = out.join(EVAL_FILE);
    let outcome = train_from(&cfg, state, &mut |st, row, eval| {
        write_curves_csv(&curves, std::slice::from_ref(row), true)?;
        if let Some(e) = eval {
            write_eval_csv(&evals, std::slice::from_ref(e), true)?;
            eprintln!(
                "batch {:>5} steps {:>8}  eval time {:.2}({:.2}) acs {:.2}",
                e.batch, e.steps, e.time_mean, e.time_std, e.acs_mean
            );
        }
        st.save(out)
    })?;
    eprintln!(
        "trained {} batches, {} macro steps; checkpoint in {}",
        outcome.state.batch,
        outcome.state.steps,
        out.display()
    );
    Ok(())
}

pub fn replay(path: &Path, every: usize) -> anyhow::Result<()> {
    if every == 0 {
        bail!("--every must be positive");
    }
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = EpisodeLog::read_jsonl(std::io::BufReader::new(file))
        .with_context(|| format!("corrupt log {}", path.display()))?;
    let frames = frames(&log, every).with_context(|| format!("bad map in {}", path.display()))?;
    let reachable = log.header.reachable_cells;
    let mut out = std::io::stdout().lock();
    for f in frames {
        writeln!(
            out,
            "t={:.1} events={} explored={}/{}",
            f.t, f.events, f.explored_reachable, reachable
        )?;
        out.write_all(f.text.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MapGenConfig {
    map_size: usize,
    count: usize,
    seed: u64,
}

impl Default for MapGenConfig {
    fn default() -> Self {
        MapGenConfig {
            map_size: 15,
            count: 1,
            seed: 0,
        }
    }
}

/// Map `i` is the map of episode `i` of a run with the same seed and size.
pub fn map_gen(config: Option<&Path>, seed: Option<u64>, out: Option<PathBuf>) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(p) => from_table(read_toml(p)?, p)?,
        None => MapGenConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dir) = &out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("map_gen.json"), &cfg)?;
    }
    for i in 0..cfg.count as u64 {
        let spec = map_spec(cfg.map_size, episode_seeds(cfg.seed, i).map);
        let map = generate_map(&spec).with_context(|| format!("map {i}"))?;
        match &out {
            Some(dir) => {
                let p = dir.join(format!("map_{i:04}.txt"));
                fs::write(&p, map.to_ascii()).with_context(|| format!("writing {}", p.display()))?;
            }
            None => {
                let mut o = std::io::stdout().lock();
                if cfg.count > 1 {
                    writeln!(o, "map {i}")?;
                }
                o.write_all(map.to_ascii().as_bytes())?;
            }
        }
    }
    Ok(())
}
