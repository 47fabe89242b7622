//! Discrete-event executor for asynchronous macro actions.
//!
//! Time is kept in integer milliseconds so event ordering never depends on
//! float rounding. Each alive agent has at most one pending event: either a
//! decision (request a new macro from the [`DecisionSource`]) or the
//! completion of its current atomic step.

mod log;

pub use log::{
    EndReason, EpisodeHeader, EpisodeLog, EpisodeSeeds, EpisodeSummary, EventKind, LogError, LogEvent, MacroRecord,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, Grid};
use crate::metrics::{event_reward, overlap_ratio, RatioCurve, RewardConfig};
use crate::perception::{
    sense, update_trajectory, AgentPose, ExplorationState, DEFAULT_FOV_RADIUS, DEFAULT_TRAJECTORY_DECAY,
};
use crate::planners::{astar_path, bfs_distance_map, KnownMap, UNREACHABLE};
use crate::seeds;
use crate::worldgen::GridMap;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("deadlock at t={time_s}s with coverage {ratio:.3}")]
    Deadlock { time_s: f64, ratio: f64 },
    #[error("agent {agent} at t={time_s}s: {message}")]
    Decision { agent: usize, time_s: f64, message: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecisionError {
    /// Nothing left to explore from this agent's point of view; the engine
    /// idles the agent for one decision cycle.
    #[error("no frontier left")]
    NoFrontier,
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomicAction {
    Forward,
    TurnLeft,
    TurnRight,
}

impl AtomicAction {
    pub fn apply(self, pose: AgentPose) -> AgentPose {
        match self {
            AtomicAction::Forward => AgentPose::new(pose.ahead(), pose.heading),
            AtomicAction::TurnLeft => AgentPose::new(pose.cell, pose.heading.left()),
            AtomicAction::TurnRight => AgentPose::new(pose.cell, pose.heading.right()),
        }
    }

    fn event_kind(self) -> EventKind {
        match self {
            AtomicAction::Forward => EventKind::Forward,
            AtomicAction::TurnLeft => EventKind::TurnLeft,
            AtomicAction::TurnRight => EventKind::TurnRight,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingModel {
    pub forward_s: f64,
    pub turn_s: f64,
    pub inference_s: f64,
    pub delay_step_s: f64,
}

impl Default for TimingModel {
    fn default() -> Self {
        TimingModel {
            forward_s: 1.0,
            turn_s: 0.5,
            inference_s: 0.1,
            delay_step_s: 1.0,
        }
    }
}

impl TimingModel {
    pub fn validate(&self) -> Result<(), EngineError> {
        for (name, v) in [
            ("forward_s", self.forward_s),
            ("turn_s", self.turn_s),
            ("inference_s", self.inference_s),
            ("delay_step_s", self.delay_step_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EngineError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn atomic_duration(action: AtomicAction, timing: &TimingModel) -> f64 {
    match action {
        AtomicAction::Forward => timing.forward_s,
        AtomicAction::TurnLeft | AtomicAction::TurnRight => timing.turn_s,
    }
}

fn to_ms(s: f64) -> u64 {
    (s * 1000.0).round().max(0.0) as u64
}

fn to_s(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DelayModel {
    pub min_steps: u32,
    pub max_steps: u32,
    pub enabled: bool,
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel {
            min_steps: 3,
            max_steps: 5,
            enabled: true,
        }
    }
}

impl DelayModel {
    pub fn disabled() -> Self {
        DelayModel {
            enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.enabled && (self.min_steps < 1 || self.min_steps > self.max_steps) {
            return Err(EngineError::InvalidConfig(format!(
                "delay range must satisfy 1 <= min <= max, got ({}, {})",
                self.min_steps, self.max_steps
            )));
        }
        Ok(())
    }
}

pub fn sample_delay<R: Rng + ?Sized>(model: &DelayModel, timing: &TimingModel, rng: &mut R) -> f64 {
    if !model.enabled {
        return 0.0;
    }
    let k = rng.random_range(model.min_steps..=model.max_steps);
    k as f64 * timing.delay_step_s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSchedule {
    pub initial_n: usize,
    pub surviving_n: usize,
    #[serde(default = "default_trigger_coverage")]
    pub trigger_coverage: f64,
}

fn default_trigger_coverage() -> f64 {
    0.5
}

impl LossSchedule {
    pub fn new(initial_n: usize, surviving_n: usize) -> Self {
        LossSchedule {
            initial_n,
            surviving_n,
            trigger_coverage: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Sync,
    Async,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub n_agents: usize,
    pub mode: Mode,
    pub timing: TimingModel,
    pub delay: DelayModel,
    pub loss: Option<LossSchedule>,
    pub t_max_s: f64,
    pub reward: RewardConfig,
    pub fov_radius: i32,
    pub trajectory_decay: f64,
    pub max_local_steps: usize,
    /// Extra per-agent wait added to every decision, on top of the sampled
    /// delay. Missing entries mean 0.
    pub extra_delay_s: Vec<f64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            n_agents: 3,
            mode: Mode::Async,
            timing: TimingModel::default(),
            delay: DelayModel::default(),
            loss: None,
            t_max_s: default_t_max(15),
            reward: RewardConfig::default(),
            fov_radius: DEFAULT_FOV_RADIUS,
            trajectory_decay: DEFAULT_TRAJECTORY_DECAY,
            max_local_steps: 5,
            extra_delay_s: Vec::new(),
        }
    }
}

/// Default episode cap for a map of the given side length, long enough for
/// every frontier baseline to finish the generated maps.
pub fn default_t_max(map_side: usize) -> f64 {
    if map_side <= 15 {
        200.0
    } else {
        500.0
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        self.timing.validate()?;
        self.delay.validate()?;
        if self.n_agents == 0 {
            return Err(EngineError::InvalidConfig("need at least one agent".into()));
        }
        if !(self.t_max_s > 0.0) {
            return Err(EngineError::InvalidConfig("t_max_s must be positive".into()));
        }
        if self.max_local_steps == 0 {
            return Err(EngineError::InvalidConfig("max_local_steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.trajectory_decay) {
            return Err(EngineError::InvalidConfig("trajectory_decay must lie in [0, 1]".into()));
        }
        if let Some(loss) = &self.loss {
            if loss.initial_n != self.n_agents || loss.surviving_n > loss.initial_n || loss.surviving_n == 0 {
                return Err(EngineError::InvalidConfig(format!(
                    "loss schedule {}=>{} does not fit {} agents",
                    loss.initial_n, loss.surviving_n, self.n_agents
                )));
            }
        }
        Ok(())
    }

    fn extra_delay(&self, agent: usize) -> f64 {
        self.extra_delay_s.get(agent).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroAction {
    pub goal: Cell,
    pub planned_path: Vec<AtomicAction>,
    pub executed_count: usize,
    pub max_local_steps: usize,
    pub issued_at: f64,
}

/// Stop condition of a macro action given the agent's pose and the current
/// team map.
pub fn macro_terminated(m: &MacroAction, pose: AgentPose, known: &KnownMap) -> bool {
    if m.executed_count >= m.max_local_steps || m.executed_count >= m.planned_path.len() || pose.cell == m.goal {
        return true;
    }
    let mut p = pose;
    for a in &m.planned_path[m.executed_count..] {
        p = a.apply(p);
        if !known.traversable(p.cell) {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub t: f64,
    /// Index into the episode event list.
    pub event: usize,
    pub action: Option<AtomicAction>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTimeline {
    pub agent: usize,
    pub next_event_time: Option<f64>,
    pub history: Vec<HistoryEntry>,
    pub alive: bool,
    pub macro_index: usize,
}

/// Read-only view handed to decision sources.
pub struct DecisionContext<'a> {
    pub agent: usize,
    pub time_s: f64,
    pub map: &'a GridMap,
    pub state: &'a ExplorationState,
    pub poses: &'a [AgentPose],
    pub alive: &'a [bool],
    pub fov_radius: i32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub goal: Cell,
    pub comm_bytes: Option<u64>,
}

impl Decision {
    pub fn goal(goal: Cell) -> Self {
        Decision { goal, comm_bytes: None }
    }
}

pub trait DecisionSource {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, DecisionError>;
}

impl<F> DecisionSource for F
where
    F: FnMut(&DecisionContext<'_>) -> Result<Decision, DecisionError>,
{
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, DecisionError> {
        self(ctx)
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub map: GridMap,
    pub spawns: Vec<AgentPose>,
    pub config: EngineConfig,
    pub seeds: EpisodeSeeds,
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Deciding,
    Stepping,
    Waiting { ready_ms: u64 },
    Dead,
}

struct AgentRuntime {
    pose: AgentPose,
    phase: Phase,
    next_ms: Option<u64>,
    current: Option<MacroAction>,
    delay_rng: ChaCha8Rng,
    timeline: AgentTimeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Running,
    Finished(EndReason),
}

pub struct Simulation {
    map: GridMap,
    config: EngineConfig,
    state: ExplorationState,
    reachable: Grid<bool>,
    reachable_total: usize,
    agents: Vec<AgentRuntime>,
    clock_ms: u64,
    success_emitted: bool,
    loss_applied: bool,
    finished: Option<EndReason>,
    header: EpisodeHeader,
    events: Vec<LogEvent>,
    curve: RatioCurve,
    macros: Vec<Vec<MacroRecord>>,
    time_to_success: Option<f64>,
    overlap_at_success: Option<f64>,
}

impl Simulation {
    pub fn new(setup: EpisodeSetup) -> Result<Self, EngineError> {
        let EpisodeSetup {
            map,
            spawns,
            config,
            seeds: episode_seeds,
            meta,
        } = setup;
        config.validate()?;
        if spawns.len() != config.n_agents {
            return Err(EngineError::InvalidConfig(format!(
                "{} spawn poses for {} agents",
                spawns.len(),
                config.n_agents
            )));
        }
        if let Some(p) = spawns.iter().find(|p| !map.is_free(p.cell)) {
            return Err(EngineError::InvalidConfig(format!("spawn {} is not free", p.cell)));
        }
        let n = config.n_agents;
        let reachable = map.reachable_from(&spawns.iter().map(|p| p.cell).collect::<Vec<_>>());
        let reachable_total = reachable.as_slice().iter().filter(|r| **r).count();
        let header = EpisodeHeader {
            config: config.clone(),
            seeds: episode_seeds,
            map: map.to_ascii().lines().map(str::to_string).collect(),
            spawns: spawns.clone(),
            reachable_cells: reachable_total,
            meta,
        };
        let agents = spawns
            .iter()
            .enumerate()
            .map(|(i, &pose)| AgentRuntime {
                pose,
                phase: Phase::Deciding,
                next_ms: Some(to_ms(config.timing.inference_s)),
                current: None,
                delay_rng: ChaCha8Rng::seed_from_u64(seeds::derive(episode_seeds.delay, "agent-delay", i as u64)),
                timeline: AgentTimeline {
                    agent: i,
                    next_event_time: Some(config.timing.inference_s),
                    history: Vec::new(),
                    alive: true,
                    macro_index: 0,
                },
            })
            .collect();
        let mut sim = Simulation {
            state: ExplorationState::for_map(&map, n),
            map,
            config,
            reachable,
            reachable_total,
            agents,
            clock_ms: 0,
            success_emitted: false,
            loss_applied: false,
            finished: None,
            header,
            events: Vec::new(),
            curve: RatioCurve::default(),
            macros: vec![Vec::new(); n],
            time_to_success: None,
            overlap_at_success: None,
        };
        for i in 0..n {
            let pose = sim.agents[i].pose;
            sense(&sim.map, &pose, &mut sim.state, i, sim.config.fov_radius);
            update_trajectory(&mut sim.state, i, pose.cell, sim.config.trajectory_decay);
            let ratio = sim.coverage_ratio();
            sim.push_event(Some(i), EventKind::Spawn, Some(pose.cell), ratio, 0.0, None, None);
        }
        sim.after_progress();
        Ok(sim)
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn state(&self) -> &ExplorationState {
        &self.state
    }

    pub fn time_s(&self) -> f64 {
        to_s(self.clock_ms)
    }

    pub fn poses(&self) -> Vec<AgentPose> {
        self.agents.iter().map(|a| a.pose).collect()
    }

    pub fn alive(&self) -> Vec<bool> {
        self.agents.iter().map(|a| a.timeline.alive).collect()
    }

    pub fn timeline(&self, agent: usize) -> &AgentTimeline {
        &self.agents[agent].timeline
    }

    pub fn current_macro(&self, agent: usize) -> Option<&MacroAction> {
        self.agents[agent].current.as_ref()
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn reachable(&self) -> &Grid<bool> {
        &self.reachable
    }

    pub fn coverage_ratio(&self) -> f64 {
        if self.reachable_total == 0 {
            return 1.0;
        }
        self.state.explored_reachable(&self.reachable) as f64 / self.reachable_total as f64
    }

    fn t_max_ms(&self) -> u64 {
        to_ms(self.config.t_max_s)
    }

    #[allow(clippy::too_many_arguments)]
    fn push_event(
        &mut self,
        agent: Option<usize>,
        kind: EventKind,
        cell: Option<Cell>,
        ratio: f64,
        reward: f64,
        comm_bytes: Option<u64>,
        action: Option<AtomicAction>,
    ) {
        let t = to_s(self.clock_ms);
        self.curve.push(t, ratio);
        self.events.push(LogEvent {
            t,
            agent,
            kind,
            cell,
            ratio,
            reward,
            comm_bytes,
        });
        if let Some(a) = agent {
            let event = self.events.len() - 1;
            self.agents[a].timeline.history.push(HistoryEntry {
                t,
                event,
                action,
                reward,
            });
        }
    }

    /// Pops and handles the globally earliest event.
    pub fn step_event(&mut self, source: &mut dyn DecisionSource) -> Result<StepStatus, EngineError> {
        if let Some(r) = self.finished {
            return Ok(StepStatus::Finished(r));
        }
        let next = self
            .agents
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.next_ms.map(|t| (t, i)))
            .min();
        let Some((t, i)) = next else {
            return Err(EngineError::Deadlock {
                time_s: self.time_s(),
                ratio: self.coverage_ratio(),
            });
        };
        if t > self.t_max_ms() {
            self.finish(EndReason::TimeCap, self.t_max_ms());
            return Ok(StepStatus::Finished(EndReason::TimeCap));
        }
        self.clock_ms = t;
        self.agents[i].next_ms = None;
        match self.agents[i].phase {
            Phase::Deciding => self.handle_decision(i, source)?,
            Phase::Stepping => self.handle_step(i),
            Phase::Waiting { .. } | Phase::Dead => unreachable!("agent {i} scheduled while not acting"),
        }
        self.sync_timelines();
        Ok(match self.finished {
            Some(r) => StepStatus::Finished(r),
            None => StepStatus::Running,
        })
    }

    pub fn run(mut self, source: &mut dyn DecisionSource) -> Result<EpisodeLog, EngineError> {
        while self.step_event(source)? == StepStatus::Running {}
        Ok(self.into_log())
    }

    fn sync_timelines(&mut self) {
        for a in &mut self.agents {
            a.timeline.next_event_time = a.next_ms.map(to_s);
        }
    }

    fn known_map(&self) -> KnownMap {
        KnownMap::from_explored(&self.map, self.state.merged())
    }

    fn handle_decision(&mut self, i: usize, source: &mut dyn DecisionSource) -> Result<(), EngineError> {
        let poses = self.poses();
        let alive = self.alive();
        let ctx = DecisionContext {
            agent: i,
            time_s: self.time_s(),
            map: &self.map,
            state: &self.state,
            poses: &poses,
            alive: &alive,
            fov_radius: self.config.fov_radius,
        };
        let pose = self.agents[i].pose;
        let decision = match source.decide(&ctx) {
            Ok(d) => d,
            Err(DecisionError::NoFrontier) => Decision::goal(pose.cell),
            Err(DecisionError::Failed(message)) => {
                return Err(EngineError::Decision {
                    agent: i,
                    time_s: self.time_s(),
                    message,
                })
            }
        };
        if !self.map.contains(decision.goal) {
            return Err(EngineError::Decision {
                agent: i,
                time_s: self.time_s(),
                message: format!("goal {} outside the map", decision.goal),
            });
        }
        let known = self.known_map();
        let (goal, path) = resolve_goal(&known, pose, decision.goal, &self.config.timing);
        let mut planned = path;
        planned.truncate(self.config.max_local_steps);
        let ratio = self.coverage_ratio();
        self.push_event(
            Some(i),
            EventKind::Decide,
            Some(goal),
            ratio,
            0.0,
            decision.comm_bytes,
            None,
        );
        self.agents[i].timeline.macro_index += 1;
        let now = self.time_s();
        self.macros[i].push(MacroRecord {
            issued_at_s: now,
            goal,
            steps: 0,
            rewards: Vec::new(),
        });
        self.agents[i].current = Some(MacroAction {
            goal,
            planned_path: planned,
            executed_count: 0,
            max_local_steps: self.config.max_local_steps,
            issued_at: self.time_s(),
        });
        self.continue_or_terminate(i, &known);
        Ok(())
    }

    fn handle_step(&mut self, i: usize) {
        let m = self.agents[i].current.as_mut().expect("stepping without a macro");
        let action = m.planned_path[m.executed_count];
        let offset = m.executed_count as u32;
        m.executed_count += 1;
        let before = self.agents[i].pose;
        let mut after = action.apply(before);
        if !self.map.is_free(after.cell) {
            after = before;
        }
        self.agents[i].pose = after;
        let outcome = sense(&self.map, &after, &mut self.state, i, self.config.fov_radius);
        update_trajectory(&mut self.state, i, after.cell, self.config.trajectory_decay);
        let ratio = self.coverage_ratio();
        let reward = event_reward(
            &self.state,
            i,
            &outcome.new_for_agent,
            outcome.new_for_team.len(),
            ratio,
            self.success_emitted,
            &self.config.reward,
        );
        self.success_emitted |= reward.success != 0.0;
        let total = reward.total();
        if let Some(rec) = self.macros[i].last_mut() {
            rec.steps = offset + 1;
            if total != 0.0 {
                rec.rewards.push((offset, total));
            }
        }
        self.push_event(
            Some(i),
            action.event_kind(),
            Some(after.cell),
            ratio,
            total,
            None,
            Some(action),
        );
        self.after_progress();
        if self.finished.is_some() || !self.agents[i].timeline.alive {
            return;
        }
        let known = self.known_map();
        self.continue_or_terminate(i, &known);
    }

    /// Success bookkeeping, full-coverage termination and agent loss after
    /// any sensing update.
    fn after_progress(&mut self) {
        let ratio = self.coverage_ratio();
        if self.time_to_success.is_none() && ratio >= self.config.reward.success_ratio() {
            self.time_to_success = Some(self.time_s());
            self.overlap_at_success = Some(overlap_ratio(&self.state, &self.map));
        }
        if self.state.explored_reachable(&self.reachable) == self.reachable_total {
            self.finish(EndReason::FullCoverage, self.clock_ms);
            return;
        }
        if let Some(schedule) = self.config.loss {
            if !self.loss_applied && ratio >= schedule.trigger_coverage {
                self.apply_agent_loss(&schedule);
            }
        }
    }

    fn continue_or_terminate(&mut self, i: usize, known: &KnownMap) {
        let pose = self.agents[i].pose;
        let m = self.agents[i].current.as_ref().expect("no macro");
        if macro_terminated(m, pose, known) {
            self.terminate_macro(i);
        } else {
            let action = m.planned_path[m.executed_count];
            let dur = to_ms(atomic_duration(action, &self.config.timing));
            let a = &mut self.agents[i];
            a.phase = Phase::Stepping;
            a.next_ms = Some(self.clock_ms + dur);
        }
    }

    fn terminate_macro(&mut self, i: usize) {
        let delay = sample_delay(&self.config.delay, &self.config.timing, &mut self.agents[i].delay_rng)
            + self.config.extra_delay(i);
        let ready = self.clock_ms + to_ms(delay);
        let inference = to_ms(self.config.timing.inference_s);
        let a = &mut self.agents[i];
        a.current = None;
        match self.config.mode {
            Mode::Async => {
                a.phase = Phase::Deciding;
                a.next_ms = Some(ready + inference);
            }
            Mode::Sync => {
                a.phase = Phase::Waiting { ready_ms: ready };
                a.next_ms = None;
                self.try_release_barrier();
            }
        }
    }

    /// Releases the sync barrier once every alive agent is waiting: all of
    /// them decide together after the slowest one is ready.
    fn try_release_barrier(&mut self) {
        let mut release = 0u64;
        let mut any = false;
        for a in self.agents.iter().filter(|a| a.timeline.alive) {
            match a.phase {
                Phase::Waiting { ready_ms } => {
                    release = release.max(ready_ms);
                    any = true;
                }
                _ => return,
            }
        }
        if !any {
            return;
        }
        let at = release + to_ms(self.config.timing.inference_s);
        for a in self.agents.iter_mut().filter(|a| a.timeline.alive) {
            a.phase = Phase::Deciding;
            a.next_ms = Some(at);
        }
    }

    /// Kills the highest-id alive agents until `surviving_n` remain. Their
    /// explored cells stay in the team map.
    pub fn apply_agent_loss(&mut self, schedule: &LossSchedule) {
        self.loss_applied = true;
        let mut alive: Vec<usize> = (0..self.agents.len())
            .filter(|i| self.agents[*i].timeline.alive)
            .collect();
        while alive.len() > schedule.surviving_n {
            let victim = alive.pop().unwrap();
            let a = &mut self.agents[victim];
            a.timeline.alive = false;
            a.phase = Phase::Dead;
            a.next_ms = None;
            a.current = None;
            let cell = a.pose.cell;
            let ratio = self.coverage_ratio();
            self.push_event(Some(victim), EventKind::Lost, Some(cell), ratio, 0.0, None, None);
        }
        if self.config.mode == Mode::Sync {
            self.try_release_barrier();
        }
    }

    fn finish(&mut self, reason: EndReason, at_ms: u64) {
        if self.finished.is_some() {
            return;
        }
        self.clock_ms = self.clock_ms.max(at_ms);
        self.finished = Some(reason);
        let ratio = self.coverage_ratio();
        self.push_event(None, EventKind::End, None, ratio, 0.0, None, None);
        for a in &mut self.agents {
            a.next_ms = None;
        }
    }

    pub fn into_log(self) -> EpisodeLog {
        let summary = EpisodeSummary {
            terminal_time_s: to_s(self.clock_ms),
            end_reason: self.finished.unwrap_or(EndReason::TimeCap),
            final_ratio: self.curve.final_ratio(),
            time_to_success_s: self.time_to_success,
            overlap_at_success: self.overlap_at_success,
        };
        EpisodeLog {
            header: self.header,
            events: self.events,
            curve: self.curve,
            macros: self.macros,
            summary,
        }
    }
}

/// Plans a path to `goal`; if the goal is unreachable, retargets to the
/// nearest reachable traversable cell. An empty path means "stay".
fn resolve_goal(known: &KnownMap, pose: AgentPose, goal: Cell, timing: &TimingModel) -> (Cell, Vec<AtomicAction>) {
    if let Ok(path) = astar_path(known, pose, goal, timing) {
        return (goal, path);
    }
    let dist = bfs_distance_map(known, pose.cell);
    let best = dist
        .iter()
        .filter(|(c, d)| **d != UNREACHABLE && *c != pose.cell)
        .min_by_key(|(c, d)| (c.dist2(goal), **d, *c))
        .map(|(c, _)| c);
    match best.and_then(|c| astar_path(known, pose, c, timing).ok().map(|p| (c, p))) {
        Some(found) => found,
        None => (pose.cell, Vec::new()),
    }
}

pub fn run_episode(setup: EpisodeSetup, source: &mut dyn DecisionSource) -> Result<EpisodeLog, EngineError> {
    Simulation::new(setup)?.run(source)
}
