//! Team reward terms and the evaluation metric suite.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{EpisodeLog, EventKind};
use crate::grid::Cell;
use crate::perception::{sensed_cells, ExplorationState};
use crate::worldgen::GridMap;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("coverage threshold never reached")]
    NotReached,
    #[error("no values to aggregate")]
    Empty,
    #[error("log replay failed: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Reward per cell newly explored by the team.
    pub team_coverage_coeff: f64,
    /// Reward per cell an agent adds beyond the team's previous map.
    pub individual_coverage_coeff: f64,
    pub overlap_coeff: f64,
    /// Success threshold C, in percent.
    pub success_threshold_pct: f64,
    /// The overlap penalty is switched off at or above this ratio.
    pub overlap_cutoff: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            team_coverage_coeff: 0.02,
            individual_coverage_coeff: 0.01,
            overlap_coeff: 0.01,
            success_threshold_pct: 98.0,
            overlap_cutoff: 0.9,
        }
    }
}

impl RewardConfig {
    pub fn success_ratio(&self) -> f64 {
        self.success_threshold_pct / 100.0
    }
}

pub fn coverage_reward(new_team_cells: usize, new_individual_cells: usize, cfg: &RewardConfig) -> f64 {
    cfg.team_coverage_coeff * new_team_cells as f64 + cfg.individual_coverage_coeff * new_individual_cells as f64
}

/// `ratio` once the success threshold is met, otherwise 0. Callers emit it
/// only at the first crossing.
pub fn success_reward(ratio: f64, cfg: &RewardConfig) -> f64 {
    if ratio >= cfg.success_ratio() {
        ratio
    } else {
        0.0
    }
}

pub fn overlap_penalty(a_overlap: usize, ratio: f64, cfg: &RewardConfig) -> f64 {
    if ratio < cfg.overlap_cutoff {
        -(a_overlap as f64) * cfg.overlap_coeff
    } else {
        0.0
    }
}

/// Per-agent overlap increments after `acting` added `new_cells` to its map
/// (state already updated). Only pairs involving `acting` can change.
pub fn overlap_increments(state: &ExplorationState, acting: usize, new_cells: &[Cell]) -> Vec<usize> {
    let n = state.agents();
    let mut out = vec![0usize; n];
    for w in (0..n).filter(|w| *w != acting) {
        let shared = new_cells.iter().filter(|c| state.agent_explored(w)[**c]).count();
        out[w] = shared;
        out[acting] += shared;
    }
    out
}

/// Team reward terms produced by one sensing event.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub coverage: f64,
    pub success: f64,
    pub overlap: f64,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.coverage + self.success + self.overlap
    }
}

/// Reward for one atomic event of `acting`. `state` is post-update, and
/// `success_emitted` says whether the success bonus was already paid out.
pub fn event_reward(
    state: &ExplorationState,
    acting: usize,
    new_for_agent: &[Cell],
    new_for_team: usize,
    ratio: f64,
    success_emitted: bool,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    // With serialized events only the acting agent's map changes, so the sum
    // of individual contributions is the acting agent's share.
    let individual = new_for_team;
    let overlap: f64 = overlap_increments(state, acting, new_for_agent)
        .into_iter()
        .map(|a| overlap_penalty(a, ratio, cfg))
        .sum();
    RewardBreakdown {
        coverage: coverage_reward(new_for_team, individual, cfg),
        success: if success_emitted {
            0.0
        } else {
            success_reward(ratio, cfg)
        },
        overlap,
    }
}

/// Piecewise-constant coverage ratio: `(t, ratio)` change points, with the
/// last value held to infinity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioCurve {
    pub points: Vec<(f64, f64)>,
}

impl RatioCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        RatioCurve { points }
    }

    pub fn push(&mut self, t: f64, ratio: f64) {
        match self.points.last_mut() {
            Some(last) if last.0 == t => last.1 = ratio,
            Some(last) if last.1 == ratio => {}
            _ => self.points.push((t, ratio)),
        }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.points
            .iter()
            .take_while(|(ti, _)| *ti <= t)
            .last()
            .map(|p| p.1)
            .unwrap_or(0.0)
    }

    pub fn final_ratio(&self) -> f64 {
        self.points.last().map(|p| p.1).unwrap_or(0.0)
    }
}

/// Earliest time at which the ratio reaches `threshold_pct` percent.
pub fn time_to_coverage(curve: &RatioCurve, threshold_pct: f64) -> Option<f64> {
    let target = threshold_pct / 100.0;
    curve.points.iter().find(|(_, r)| *r >= target).map(|p| p.0)
}

/// Exact integral of the ratio step function over `[0, horizon]`.
pub fn acs(curve: &RatioCurve, horizon: f64) -> f64 {
    let mut total = 0.0;
    for (i, &(t, r)) in curve.points.iter().enumerate() {
        if t >= horizon {
            break;
        }
        let end = curve.points.get(i + 1).map(|p| p.0.min(horizon)).unwrap_or(horizon);
        total += r * (end - t);
    }
    total
}

/// Fraction of explored free cells that two or more agents explored.
pub fn overlap_ratio(state: &ExplorationState, map: &GridMap) -> f64 {
    let mut explored = 0usize;
    let mut shared = 0usize;
    for (c, e) in state.merged().iter() {
        if !*e || !map.is_free(c) {
            continue;
        }
        explored += 1;
        let k = (0..state.agents()).filter(|a| state.agent_explored(*a)[c]).count();
        if k >= 2 {
            shared += 1;
        }
    }
    if explored == 0 {
        0.0
    } else {
        shared as f64 / explored as f64
    }
}

/// Overlap recorded at the first success-threshold crossing.
pub fn overlap_metric(log: &EpisodeLog) -> Result<f64, MetricsError> {
    log.summary.overlap_at_success.ok_or(MetricsError::NotReached)
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl fmt::Display for RunStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}({:.2})", self.mean, self.std)
    }
}

/// Welford's single-pass mean/variance.
pub fn aggregate_stats(values: &[f64]) -> Result<RunStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    Ok(RunStats {
        mean,
        std: (m2 / values.len() as f64).max(0.0).sqrt(),
        count: values.len(),
    })
}

/// Per-episode metric values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Seconds to reach C%; `None` if never reached.
    pub time: Option<f64>,
    pub coverage: f64,
    pub overlap: Option<f64>,
    pub acs: f64,
}

impl EpisodeMetrics {
    pub fn from_log(log: &EpisodeLog, horizon: f64, threshold_pct: f64) -> Self {
        EpisodeMetrics {
            time: time_to_coverage(&log.curve, threshold_pct),
            coverage: log.curve.final_ratio(),
            overlap: log.summary.overlap_at_success,
            acs: acs(&log.curve, horizon),
        }
    }

    /// Time with the episode cap substituted when C% was never reached.
    pub fn time_or(&self, cap: f64) -> f64 {
        self.time.unwrap_or(cap)
    }
}

/// Aggregated metrics of one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub time: RunStats,
    pub overlap: RunStats,
    pub coverage: RunStats,
    pub acs: RunStats,
}

impl MetricSummary {
    /// Episodes that never hit C% contribute the cap to Time and are left
    /// out of Overlap (which is defined at the crossing).
    pub fn from_episodes(episodes: &[EpisodeMetrics], cap: f64) -> Result<Self, MetricsError> {
        let time: Vec<f64> = episodes.iter().map(|e| e.time_or(cap)).collect();
        let overlap: Vec<f64> = episodes.iter().filter_map(|e| e.overlap).collect();
        let coverage: Vec<f64> = episodes.iter().map(|e| e.coverage).collect();
        let acs: Vec<f64> = episodes.iter().map(|e| e.acs).collect();
        Ok(MetricSummary {
            time: aggregate_stats(&time)?,
            overlap: aggregate_stats(&overlap).unwrap_or(RunStats {
                mean: f64::NAN,
                std: f64::NAN,
                count: 0,
            }),
            coverage: aggregate_stats(&coverage)?,
            acs: aggregate_stats(&acs)?,
        })
    }
}

/// Replays a log's sensing events against its embedded map and recomputes
/// the team reward of every event.
pub fn recompute_rewards(log: &EpisodeLog) -> Result<Vec<f64>, MetricsError> {
    let map = log.header.map().map_err(|e| MetricsError::Replay(e.to_string()))?;
    let cfg = log.header.config.reward;
    let radius = log.header.config.fov_radius;
    let n = log.header.spawns.len();
    let reachable = map.reachable_from(&log.header.spawns.iter().map(|p| p.cell).collect::<Vec<_>>());
    let total = reachable.as_slice().iter().filter(|r| **r).count();
    let mut state = ExplorationState::for_map(&map, n);
    let mut emitted = false;
    let mut out = Vec::with_capacity(log.events.len());
    for ev in &log.events {
        let reward = match (ev.kind, ev.agent, ev.cell) {
            (EventKind::Spawn, Some(a), Some(c)) => {
                state.mark(a, &sensed_cells(&map, c, radius));
                0.0
            }
            (EventKind::Forward | EventKind::TurnLeft | EventKind::TurnRight, Some(a), Some(c)) => {
                let sensed = state.mark(a, &sensed_cells(&map, c, radius));
                let ratio = state.explored_reachable(&reachable) as f64 / total as f64;
                let r = event_reward(
                    &state,
                    a,
                    &sensed.new_for_agent,
                    sensed.new_for_team.len(),
                    ratio,
                    emitted,
                    &cfg,
                );
                emitted |= r.success != 0.0;
                r.total()
            }
            _ => 0.0,
        };
        out.push(reward);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn coverage_reward_linear() {
        let cfg = RewardConfig::default();
        assert_eq!(coverage_reward(0, 0, &cfg), 0.0);
        assert!((coverage_reward(10, 6, &cfg) - 0.26).abs() < 1e-12);
    }

    #[test]
    fn success_reward_threshold() {
        let cfg = RewardConfig::default();
        assert_eq!(success_reward(0.981, &cfg), 0.981);
        assert_eq!(success_reward(0.97, &cfg), 0.0);
        assert_eq!(success_reward(0.98, &cfg), 0.98);
    }

    #[test]
    fn overlap_penalty_cutoff() {
        let cfg = RewardConfig::default();
        assert!((overlap_penalty(10, 0.5, &cfg) + 0.10).abs() < 1e-12);
        assert_eq!(overlap_penalty(10, 0.95, &cfg), 0.0);
        assert_eq!(overlap_penalty(10, 0.9, &cfg), 0.0);
        assert_eq!(overlap_penalty(0, 0.3, &cfg), 0.0);
    }

    #[test]
    fn overlap_increments_match_set_algebra() {
        // Overlap_{a,w} = Exp_a ∩ Exp_w; increments via explicit set differences.
        let mut state = ExplorationState::new(6, 6, 3);
        let cells = |v: &[(i32, i32)]| v.iter().map(|(x, y)| Cell::new(*x, *y)).collect::<Vec<_>>();
        state.mark(1, &cells(&[(1, 1), (2, 1), (3, 1)]));
        state.mark(2, &cells(&[(2, 1), (3, 1), (4, 4)]));
        state.mark(0, &cells(&[(3, 1)]));
        let sets = |s: &ExplorationState| -> Vec<HashSet<Cell>> {
            (0..3)
                .map(|a| {
                    s.agent_explored(a)
                        .iter()
                        .filter(|(_, e)| **e)
                        .map(|(c, _)| c)
                        .collect()
                })
                .collect()
        };
        let before = sets(&state);
        let out = state.mark(0, &cells(&[(1, 1), (2, 1), (3, 1), (4, 4), (5, 5)]));
        let after = sets(&state);
        let inc = overlap_increments(&state, 0, &out.new_for_agent);
        for a in 0..3 {
            let mut expected = 0;
            for w in (0..3).filter(|w| *w != a) {
                let now: HashSet<_> = after[a].intersection(&after[w]).copied().collect();
                let then: HashSet<_> = before[a].intersection(&before[w]).copied().collect();
                expected += now.difference(&then).count();
            }
            assert_eq!(inc[a], expected, "agent {a}");
        }
    }

    #[test]
    fn time_to_coverage_cases() {
        let curve = RatioCurve::new(vec![(0.0, 0.1), (12.5, 0.99)]);
        assert_eq!(time_to_coverage(&curve, 98.0), Some(12.5));
        let capped = RatioCurve::new(vec![(0.0, 0.2), (40.0, 0.8)]);
        assert_eq!(time_to_coverage(&capped, 98.0), None);
    }

    #[test]
    fn acs_piecewise() {
        let full = RatioCurve::new(vec![(0.0, 1.0)]);
        assert_eq!(acs(&full, 10.0), 10.0);
        let steps = RatioCurve::new(vec![(0.0, 0.0), (2.0, 0.5), (4.0, 1.0)]);
        assert_eq!(acs(&steps, 10.0), 7.0);
        assert_eq!(acs(&steps, 3.0), 0.5);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_stats(&[5.0, 5.0, 5.0]).unwrap().to_string(), "5.00(0.00)");
        assert_eq!(aggregate_stats(&[0.0, 10.0]).unwrap().to_string(), "5.00(5.00)");
        assert_eq!(aggregate_stats(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn overlap_ratio_extremes() {
        let map = GridMap::from_ascii("#####\n#...#\n#...#\n#####\n").unwrap();
        let free = map.free_cells();
        let mut single = ExplorationState::for_map(&map, 1);
        single.mark(0, &free);
        assert_eq!(overlap_ratio(&single, &map), 0.0);
        let mut twin = ExplorationState::for_map(&map, 2);
        twin.mark(0, &free);
        twin.mark(1, &free);
        assert_eq!(overlap_ratio(&twin, &map), 1.0);
    }

    proptest::proptest! {
        #[test]
        fn welford_matches_two_pass(values in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let s = aggregate_stats(&values).unwrap();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            proptest::prop_assert!((s.mean - mean).abs() < 1e-9);
            proptest::prop_assert!((s.std - var.sqrt()).abs() < 1e-7);
        }

        #[test]
        fn acs_matches_riemann_and_is_bounded(
            jumps in proptest::collection::vec((1u32..500, 0.0f64..0.2), 1..12),
            horizon_cs in 100u32..4000,
        ) {
            // jump times on a 0.01 s lattice so a 1e-3 midpoint sum is exact
            let mut ticks = 0u32;
            let mut r = 0.0;
            let mut curve = RatioCurve::default();
            curve.push(0.0, 0.0);
            for (dt, dr) in jumps {
                ticks += dt;
                r = f64::min(r + dr, 1.0);
                curve.push(ticks as f64 / 100.0, r);
            }
            let horizon = horizon_cs as f64 / 100.0;
            let exact = acs(&curve, horizon);
            let dt = 1e-3;
            let steps = (horizon / dt).round() as usize;
            let riemann: f64 = (0..steps).map(|i| curve.value_at((i as f64 + 0.5) * dt) * dt).sum();
            proptest::prop_assert!((exact - riemann).abs() <= 1e-6);
            proptest::prop_assert!(exact <= horizon + 1e-12);
            proptest::prop_assert!(acs(&curve, horizon + 1.0) >= exact);
        }
    }
}
