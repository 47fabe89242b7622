//! ASCII replay of episode logs.
//!
//! A frame shows walls as `#`, explored free cells as `·`, unexplored free
//! cells as a space and each live agent as its index digit (letters past 9).

use crate::engine::{EpisodeLog, EventKind};
use crate::grid::{Cell, Grid};
use crate::perception::{sensed_cells, ExplorationState};
use crate::worldgen::{GridMap, WorldgenError};

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Events applied so far.
    pub events: usize,
    pub t: f64,
    pub text: String,
    /// Explored cells among those reachable from the spawns.
    pub explored_reachable: usize,
}

pub fn agent_glyph(i: usize) -> char {
    std::char::from_digit(i as u32 % 36, 36).unwrap_or('*')
}

/// Re-senses the events of a log against its embedded map.
pub struct Replay<'a> {
    log: &'a EpisodeLog,
    map: GridMap,
    reachable: Grid<bool>,
    state: ExplorationState,
    positions: Vec<Option<Cell>>,
    applied: usize,
    t: f64,
}

impl<'a> Replay<'a> {
    pub fn new(log: &'a EpisodeLog) -> Result<Self, WorldgenError> {
        let map = log.header.map()?;
        let spawns: Vec<Cell> = log.header.spawns.iter().map(|p| p.cell).collect();
        Ok(Replay {
            reachable: map.reachable_from(&spawns),
            state: ExplorationState::for_map(&map, spawns.len()),
            positions: spawns.into_iter().map(Some).collect(),
            map,
            log,
            applied: 0,
            t: 0.0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.applied == self.log.events.len()
    }

    /// Applies the next event; false once every event is applied.
    pub fn advance(&mut self) -> bool {
        let Some(ev) = self.log.events.get(self.applied) else {
            return false;
        };
        self.applied += 1;
        self.t = ev.t;
        match (ev.kind, ev.agent, ev.cell) {
            (EventKind::Spawn | EventKind::Forward | EventKind::TurnLeft | EventKind::TurnRight, Some(a), Some(c)) => {
                if let Some(p) = self.positions.get_mut(a) {
                    *p = Some(c);
                }
                self.state
                    .mark(a, &sensed_cells(&self.map, c, self.log.header.config.fov_radius));
            }
            (EventKind::Lost, Some(a), _) => {
                if let Some(p) = self.positions.get_mut(a) {
                    *p = None;
                }
            }
            _ => {}
        }
        true
    }

    pub fn frame(&self) -> Frame {
        let merged = self.state.merged();
        let mut rows: Vec<Vec<char>> = (0..self.map.height())
            .map(|y| {
                (0..self.map.width())
                    .map(|x| {
                        let c = Cell::new(x as i32, y as i32);
                        if !self.map.is_free(c) {
                            '#'
                        } else if merged.get(c).copied().unwrap_or(false) {
                            '·'
                        } else {
                            ' '
                        }
                    })
                    .collect()
            })
            .collect();
        for (i, p) in self.positions.iter().enumerate() {
            if let Some(c) = p {
                rows[c.y as usize][c.x as usize] = agent_glyph(i);
            }
        }
        let mut text = String::new();
        for r in rows {
            text.extend(r);
            text.push('\n');
        }
        Frame {
            events: self.applied,
            t: self.t,
            text,
            explored_reachable: self.state.explored_reachable(&self.reachable),
        }
    }
}

/// The initial frame, then one frame every `every` events and a final
/// frame after the last event.
pub fn frames(log: &EpisodeLog, every: usize) -> Result<Vec<Frame>, WorldgenError> {
    let every = every.max(1);
    let mut replay = Replay::new(log)?;
    let mut out = vec![replay.frame()];
    while replay.advance() {
        if replay.applied % every == 0 || replay.is_done() {
            out.push(replay.frame());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_episode, EngineConfig};
    use crate::planners::{PlannerKind, PlannerParams, PlannerPolicy};
    use crate::scenario::{build_setup, episode_seeds};

    fn log(index: u64) -> EpisodeLog {
        let cfg = EngineConfig {
            n_agents: 2,
            ..Default::default()
        };
        let seeds = episode_seeds(5, index);
        let setup = build_setup(15, &cfg, seeds, serde_json::Value::Null).unwrap();
        let mut p = PlannerPolicy::new(PlannerKind::Nearest, PlannerParams::default(), seeds.decision);
        run_episode(setup, &mut p).unwrap()
    }

    #[test]
    fn empty_log_renders_only_the_initial_frame() {
        let mut l = log(0);
        l.events.clear();
        let f = frames(&l, 1).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].events, 0);
        assert!(!f[0].text.contains('·'));
        assert!(f[0].text.contains('0') && f[0].text.contains('1'));
    }

    #[test]
    fn final_frame_matches_final_ratio() {
        for i in 0..10 {
            let l = log(i);
            let f = frames(&l, 7).unwrap();
            let last = f.last().unwrap();
            let expected = (l.summary.final_ratio * l.header.reachable_cells as f64).round() as usize;
            assert_eq!(last.explored_reachable, expected);
            assert_eq!(last.events, l.events.len());
        }
    }

    #[test]
    fn frame_shape_and_glyphs() {
        let l = log(1);
        let f = frames(&l, 1).unwrap();
        assert_eq!(f.len(), l.events.len() + 1);
        for fr in &f {
            let lines: Vec<&str> = fr.text.lines().collect();
            assert_eq!(lines.len(), 15);
            assert!(lines.iter().all(|r| r.chars().count() == 15));
            assert!(fr.text.chars().all(|c| "#· 01\n".contains(c)));
        }
        assert_eq!(f.last().unwrap().text.lines().next().unwrap(), "#".repeat(15));
    }

    #[test]
    fn replay_is_idempotent() {
        let l = log(2);
        let again = EpisodeLog::from_jsonl(&l.to_jsonl()).unwrap();
        assert_eq!(again.to_jsonl(), l.to_jsonl());
        assert_eq!(frames(&l, 3).unwrap(), frames(&again, 3).unwrap());
    }

    #[test]
    fn glyphs_past_nine_are_letters() {
        assert_eq!(agent_glyph(3), '3');
        assert_eq!(agent_glyph(10), 'a');
    }
}
