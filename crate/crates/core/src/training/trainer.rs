use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    accumulate_macro_reward, ppo_update, Adam, LossReport, MacroTransition, ReplayBuffer, RewardScaler, Successor,
    TrainError, TrainHyper, TransitionCache,
};
use crate::engine::{
    default_t_max, DecisionContext, EndReason, EngineConfig, EngineError, EpisodeLog, Mode, Simulation, StepStatus,
};
use crate::metrics::EpisodeMetrics;
use crate::policy::{observe, CommMode, Policy, PolicyConfig, PolicySource, Recorded};
use crate::scenario::{build_setup, episode_seeds};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub map_size: usize,
    pub engine: EngineConfig,
    pub policy: PolicyConfig,
    pub hyper: TrainHyper,
    /// Total macro transitions to collect.
    pub step_max: u64,
    pub episodes_per_batch: usize,
    /// Evaluate every this many batches; 0 disables evaluation.
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Keep delay randomization on during evaluation.
    pub eval_with_delay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            map_size: 15,
            engine: EngineConfig {
                n_agents: 2,
                mode: Mode::Async,
                t_max_s: default_t_max(15),
                ..Default::default()
            },
            policy: PolicyConfig::default(),
            hyper: TrainHyper::default(),
            step_max: 200_000,
            episodes_per_batch: 16,
            eval_every: 10,
            eval_episodes: 20,
            eval_with_delay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.engine
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        self.policy.validate()?;
        self.hyper.validate()?;
        if self.map_size < 7 {
            return Err(TrainError::InvalidConfig(format!("map_size {} below 7", self.map_size)));
        }
        if self.episodes_per_batch == 0 {
            return Err(TrainError::InvalidConfig("episodes_per_batch must be positive".into()));
        }
        Ok(())
    }

    fn train_base(&self) -> u64 {
        seeds::derive(self.seed, "train-episodes", 0)
    }

    pub fn eval_base(&self) -> u64 {
        seeds::derive(self.seed, "eval-episodes", 0)
    }

    /// Engine settings for evaluation episodes.
    pub fn eval_engine(&self) -> EngineConfig {
        let mut engine = self.engine.clone();
        if !self.eval_with_delay {
            engine.delay.enabled = false;
        }
        engine
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub batch: usize,
    pub steps: u64,
    pub mean_time: f64,
    pub mean_acs: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
}

/// Periodic evaluation on a fixed episode set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub batch: usize,
    pub steps: u64,
    pub episodes: usize,
    pub time_mean: f64,
    pub time_std: f64,
    pub acs_mean: f64,
    pub acs_std: f64,
    pub coverage_mean: f64,
}

/// Everything needed to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub policy: Policy,
    pub adam: Adam,
    pub rewards: RewardScaler,
    pub batch: usize,
    pub steps: u64,
    pub episodes: u64,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    /// Exact parameters; the f32 checkpoint alone would perturb a resume.
    params: Vec<f64>,
    adam: Adam,
    rewards: RewardScaler,
    batch: usize,
    steps: u64,
    episodes: u64,
}

pub const POLICY_FILE: &str = "policy.bin";
pub const STATE_FILE: &str = "trainer_state.json";

impl TrainState {
    pub fn init(cfg: &TrainConfig) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, "init", 0));
        let policy = Policy::new(cfg.policy, &mut rng)?;
        Ok(TrainState {
            adam: Adam::new(policy.param_count()),
            policy,
            rewards: RewardScaler::default(),
            batch: 0,
            steps: 0,
            episodes: 0,
        })
    }

    /// Writes the policy checkpoint and the optimizer state into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TrainError> {
        self.policy.save(&dir.join(POLICY_FILE))?;
        let file = StateFile {
            params: self.policy.params.clone(),
            adam: self.adam.clone(),
            rewards: self.rewards.clone(),
            batch: self.batch,
            steps: self.steps,
            episodes: self.episodes,
        };
        let path = dir.join(STATE_FILE);
        let text = serde_json::to_string(&file).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        fs::write(&path, text).map_err(|source| TrainError::Io { path, source })
    }

    pub fn load(dir: &Path) -> Result<Self, TrainError> {
        let mut policy = Policy::load(&dir.join(POLICY_FILE))?;
        let path = dir.join(STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|source| TrainError::Io {
            path: path.clone(),
            source,
        })?;
        let file: StateFile =
            serde_json::from_str(&text).map_err(|e| TrainError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let n = policy.param_count();
        if file.params.len() != n || file.adam.m.len() != n || file.adam.v.len() != n {
            return Err(TrainError::InvalidConfig(format!(
                "{}: optimizer state does not match the checkpoint",
                path.display()
            )));
        }
        policy.params = file.params;
        Ok(TrainState {
            policy,
            adam: file.adam,
            rewards: file.rewards,
            batch: file.batch,
            steps: file.steps,
            episodes: file.episodes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub curves: Vec<CurveRow>,
    pub evals: Vec<EvalRow>,
}

/// One rollout: per-agent caches with raw accumulated rewards, and the log.
#[derive(Debug, Clone)]
pub struct EpisodeRollout {
    pub caches: Vec<TransitionCache>,
    pub log: EpisodeLog,
    pub metrics: EpisodeMetrics,
}

fn engine_err(batch: usize) -> impl Fn(EngineError) -> TrainError {
    move |source| TrainError::Engine { batch, source }
}

/// Runs episode `index` of the stream rooted at `base` with `policy`
/// sampling goals, and turns its decisions into macro transitions.
pub fn collect_episode(
    policy: &Policy,
    map_size: usize,
    engine: &EngineConfig,
    base: u64,
    index: u64,
    gamma: f64,
    batch: usize,
) -> Result<EpisodeRollout, TrainError> {
    let seeds = episode_seeds(base, index);
    let setup = build_setup(map_size, engine, seeds, serde_json::Value::Null)?;
    let mut sim = Simulation::new(setup).map_err(engine_err(batch))?;
    let mut source = PolicySource::new(policy, seeds.decision).recording();
    let end = loop {
        match sim.step_event(&mut source).map_err(engine_err(batch))? {
            StepStatus::Running => {}
            StepStatus::Finished(r) => break r,
        }
    };
    let n = engine.n_agents;
    let with_peers = policy.config.comm_mode != CommMode::None;
    let poses = sim.poses();
    let alive = sim.alive();
    let mut bootstrap = Vec::with_capacity(n);
    for agent in 0..n {
        if end == EndReason::FullCoverage || !alive[agent] {
            bootstrap.push(Successor::Terminal);
            continue;
        }
        let ctx = DecisionContext {
            agent,
            time_s: sim.time_s(),
            map: sim.map(),
            state: sim.state(),
            poses: &poses,
            alive: &alive,
            fov_radius: engine.fov_radius,
        };
        let obs = observe(&ctx, policy.config.goal_grid, with_peers).map_err(|e| TrainError::Rollout {
            batch,
            message: e.to_string(),
        })?;
        let value = policy.forward(&obs)?.value;
        bootstrap.push(Successor::Observed { obs, value });
    }
    let log = sim.into_log();

    let mut per_agent: Vec<Vec<Recorded>> = vec![Vec::new(); n];
    for r in source.recorded {
        per_agent[r.agent].push(r);
    }
    let mut caches = Vec::with_capacity(n);
    for (agent, (records, tail)) in per_agent.into_iter().zip(bootstrap).enumerate() {
        let macros = &log.macros[agent];
        if macros.len() != records.len() {
            return Err(TrainError::Rollout {
                batch,
                message: format!(
                    "agent {agent}: {} decisions recorded but {} macros logged",
                    records.len(),
                    macros.len()
                ),
            });
        }
        let mut cache = TransitionCache::new(agent);
        let mut next: Vec<Successor> = records
            .iter()
            .skip(1)
            .map(|r| Successor::Observed {
                obs: r.input.clone(),
                value: r.value,
            })
            .collect();
        next.push(tail);
        for (b, ((r, m), succ)) in records.into_iter().zip(macros).zip(next).enumerate() {
            cache.push(MacroTransition {
                agent,
                b,
                obs: r.input,
                goal: r.action,
                reward: accumulate_macro_reward(&m.rewards, gamma),
                steps: m.steps,
                next: succ,
                value: r.value,
                log_prob: r.log_prob,
            });
        }
        caches.push(cache);
    }
    let metrics = EpisodeMetrics::from_log(&log, engine.t_max_s, engine.reward.success_threshold_pct);
    Ok(EpisodeRollout { caches, log, metrics })
}

/// Per-episode metrics of `policy` on episodes `0..episodes` of the stream
/// rooted at `base`. Goals are sampled unless `greedy`.
pub fn evaluate_policy(
    policy: &Policy,
    map_size: usize,
    engine: &EngineConfig,
    base: u64,
    episodes: usize,
    greedy: bool,
) -> Result<Vec<EpisodeMetrics>, TrainError> {
    (0..episodes as u64)
        .into_par_iter()
        .map(|i| {
            let seeds = episode_seeds(base, i);
            let setup = build_setup(map_size, engine, seeds, serde_json::Value::Null)?;
            let mut source = PolicySource::new(policy, seeds.decision);
            source.greedy = greedy;
            let log = crate::engine::run_episode(setup, &mut source).map_err(engine_err(0))?;
            Ok(EpisodeMetrics::from_log(
                &log,
                engine.t_max_s,
                engine.reward.success_threshold_pct,
            ))
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn eval_row(cfg: &TrainConfig, state: &TrainState) -> Result<EvalRow, TrainError> {
    let eps = evaluate_policy(
        &state.policy,
        cfg.map_size,
        &cfg.eval_engine(),
        cfg.eval_base(),
        cfg.eval_episodes,
        false,
    )?;
    let summary = crate::metrics::MetricSummary::from_episodes(&eps, cfg.engine.t_max_s)
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    Ok(EvalRow {
        batch: state.batch,
        steps: state.steps,
        episodes: eps.len(),
        time_mean: summary.time.mean,
        time_std: summary.time.std,
        acs_mean: summary.acs.mean,
        acs_std: summary.acs.std,
        coverage_mean: summary.coverage.mean,
    })
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_from(cfg, TrainState::init(cfg)?, &mut |_, _, _| Ok(()))
}

/// Continues training from `state` until `cfg.step_max` macro transitions
/// have been collected in total. `hook` runs after every batch.
pub fn train_from(
    cfg: &TrainConfig,
    mut state: TrainState,
    hook: &mut dyn FnMut(&TrainState, &CurveRow, Option<&EvalRow>) -> Result<(), TrainError>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if state.policy.config != cfg.policy {
        return Err(TrainError::InvalidConfig(
            "resumed policy config differs from the training config".into(),
        ));
    }
    let hyper = cfg.hyper;
    let mut curves = Vec::new();
    let mut evals = Vec::new();
    while state.steps < cfg.step_max {
        let batch = state.batch;
        let first = state.episodes;
        let rollouts: Vec<EpisodeRollout> = (first..first + cfg.episodes_per_batch as u64)
            .into_par_iter()
            .map(|i| {
                collect_episode(
                    &state.policy,
                    cfg.map_size,
                    &cfg.engine,
                    cfg.train_base(),
                    i,
                    hyper.gamma,
                    batch,
                )
            })
            .collect::<Result<_, _>>()?;

        if hyper.reward_normalization {
            let raw: Vec<f64> = rollouts
                .iter()
                .flat_map(|r| r.caches.iter().flat_map(|c| c.transitions.iter().map(|t| t.reward)))
                .collect();
            state.rewards.update(&raw);
        }
        let mut buffer = ReplayBuffer::default();
        let mut metrics = Vec::with_capacity(rollouts.len());
        for (i, mut r) in rollouts.into_iter().enumerate() {
            if hyper.reward_normalization {
                for t in r.caches.iter_mut().flat_map(|c| c.transitions.iter_mut()) {
                    t.reward = state.rewards.apply(t.reward);
                }
            }
            buffer.flush(first + i as u64, &mut r.caches, &hyper);
            metrics.push(r.metrics);
        }
        state.episodes += cfg.episodes_per_batch as u64;
        state.steps += buffer.len() as u64;

        let report = if buffer.is_empty() {
            LossReport::default()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(cfg.seed, "ppo", batch as u64));
            ppo_update(&mut state.policy, &mut state.adam, &buffer, &hyper, &mut rng).map_err(|e| match e {
                TrainError::NonFiniteLoss { epoch } => TrainError::Rollout {
                    batch,
                    message: format!("non-finite loss in epoch {epoch}"),
                },
                other => other,
            })?
        };
        if hyper.feature_normalization {
            let obs = buffer.entries.iter().flat_map(|e| {
                std::iter::once(e.obs.own.as_slice())
                    .chain(std::iter::once(e.obs.merged.as_slice()))
                    .chain(e.obs.peers.iter().map(|p| p.as_slice()))
            });
            state.policy.normalizer.update(obs);
        }
        state.batch += 1;

        let row = CurveRow {
            batch,
            steps: state.steps,
            mean_time: mean(metrics.iter().map(|m| m.time_or(cfg.engine.t_max_s))),
            mean_acs: mean(metrics.iter().map(|m| m.acs)),
            policy_loss: report.policy_loss,
            value_loss: report.value_loss,
            entropy: report.entropy,
            grad_norm: report.grad_norm,
        };
        let eval = if cfg.eval_every > 0 && state.batch % cfg.eval_every == 0 {
            let e = eval_row(cfg, &state)?;
            evals.push(e);
            Some(e)
        } else {
            None
        };
        hook(&state, &row, eval.as_ref())?;
        curves.push(row);
    }
    Ok(TrainOutcome { state, curves, evals })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], append: bool) -> Result<(), TrainError> {
    let io = |source: std::io::Error| TrainError::Io {
        path: path.to_path_buf(),
        source,
    };
    let exists = path.exists();
    let file = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(io)?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(!(append && exists))
        .from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    }
    w.flush().map_err(io)
}

/// Writes (or with `append`, extends) the training curve CSV.
pub fn write_curves_csv(path: &Path, rows: &[CurveRow], append: bool) -> Result<(), TrainError> {
    write_rows(path, rows, append)
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow], append: bool) -> Result<(), TrainError> {
    write_rows(path, rows, append)
}
