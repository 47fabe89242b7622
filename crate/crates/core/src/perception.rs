//! Sensing, exploration bookkeeping, observation tensors and frontiers.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, Grid};
use crate::worldgen::{GridMap, Tile};

/// Chebyshev sensing radius: a 5x5 footprint.
pub const DEFAULT_FOV_RADIUS: i32 = 2;
/// Per-step decay of the trajectory channel.
pub const DEFAULT_TRAJECTORY_DECAY: f64 = 0.9;
/// Cells closer than this (Chebyshev) count as "near" the agent.
pub const TRAJECTORY_NEAR: i32 = 3;

pub const CHANNELS: usize = 7;
pub const CH_OBSTACLE: usize = 0;
pub const CH_EXPLORED: usize = 1;
pub const CH_LOCATION: usize = 2;
pub const CH_TRAJECTORY: usize = 3;
pub const CH_VIEW_MASK: usize = 4;
pub const CH_VIEW_OBSTACLE: usize = 5;
pub const CH_VIEW_FREE: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("observation size {size} smaller than map {width}x{height}")]
    ObservationTooSmall { size: usize, width: usize, height: usize },
    #[error("malformed observation buffer: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heading {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }

    pub fn left(self) -> Heading {
        Heading::ALL[(self as usize + 3) % 4]
    }

    pub fn right(self) -> Heading {
        Heading::ALL[(self as usize + 1) % 4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub cell: Cell,
    pub heading: Heading,
}

impl AgentPose {
    pub fn new(cell: Cell, heading: Heading) -> Self {
        AgentPose { cell, heading }
    }

    pub fn ahead(&self) -> Cell {
        let (dx, dy) = self.heading.delta();
        self.cell.offset(dx, dy)
    }
}

/// Per-agent and merged explored maps plus per-agent trajectory traces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationState {
    per_agent: Vec<Grid<bool>>,
    merged: Grid<bool>,
    trajectory: Vec<Grid<f64>>,
}

/// What one call to [`sense`] changed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SenseOutcome {
    /// Cells sensed from this pose (visible cells plus boundary walls).
    pub sensed: Vec<Cell>,
    /// Cells newly added to the agent's own map.
    pub new_for_agent: Vec<Cell>,
    /// Cells newly added to the merged map.
    pub new_for_team: Vec<Cell>,
}

impl ExplorationState {
    pub fn new(width: usize, height: usize, agents: usize) -> Self {
        ExplorationState {
            per_agent: vec![Grid::filled(width, height, false); agents],
            merged: Grid::filled(width, height, false),
            trajectory: vec![Grid::filled(width, height, 0.0); agents],
        }
    }

    pub fn for_map(map: &GridMap, agents: usize) -> Self {
        ExplorationState::new(map.width(), map.height(), agents)
    }

    pub fn agents(&self) -> usize {
        self.per_agent.len()
    }

    pub fn width(&self) -> usize {
        self.merged.width()
    }

    pub fn height(&self) -> usize {
        self.merged.height()
    }

    pub fn agent_explored(&self, agent: usize) -> &Grid<bool> {
        &self.per_agent[agent]
    }

    pub fn merged(&self) -> &Grid<bool> {
        &self.merged
    }

    pub fn trajectory(&self, agent: usize) -> &Grid<f64> {
        &self.trajectory[agent]
    }

    pub fn is_explored(&self, c: Cell) -> bool {
        self.merged.get(c).copied().unwrap_or(false)
    }

    /// Marks cells explored for `agent` without line-of-sight checks.
    pub fn mark(&mut self, agent: usize, cells: &[Cell]) -> SenseOutcome {
        let mut out = SenseOutcome {
            sensed: cells.to_vec(),
            ..Default::default()
        };
        for &c in cells {
            if !self.per_agent[agent][c] {
                self.per_agent[agent][c] = true;
                out.new_for_agent.push(c);
            }
            if !self.merged[c] {
                self.merged[c] = true;
                out.new_for_team.push(c);
            }
        }
        out
    }

    /// Explored free cells that are also in `reachable`.
    pub fn explored_reachable(&self, reachable: &Grid<bool>) -> usize {
        self.merged
            .as_slice()
            .iter()
            .zip(reachable.as_slice())
            .filter(|(e, r)| **e && **r)
            .count()
    }
}

/// True if the open segment between the two cell centers crosses the open
/// unit square of cell `b`.
pub(crate) fn segment_crosses_cell(from: (f64, f64), to: (f64, f64), b: Cell) -> bool {
    let lo = [b.x as f64 - 0.5, b.y as f64 - 0.5];
    let hi = [b.x as f64 + 0.5, b.y as f64 + 0.5];
    let p = [from.0, from.1];
    let d = [to.0 - from.0, to.1 - from.1];
    let (mut enter, mut exit) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if p[axis] <= lo[axis] || p[axis] >= hi[axis] {
                return false;
            }
        } else {
            let t0 = (lo[axis] - p[axis]) / d[axis];
            let t1 = (hi[axis] - p[axis]) / d[axis];
            enter = enter.max(t0.min(t1));
            exit = exit.min(t0.max(t1));
        }
    }
    enter < exit
}

/// A cell is visible when the segment between centers does not pass through
/// the interior of any wall cell other than the endpoints.
pub fn line_of_sight(map: &GridMap, from: Cell, to: Cell) -> bool {
    let (x0, x1) = (from.x.min(to.x), from.x.max(to.x));
    let (y0, y1) = (from.y.min(to.y), from.y.max(to.y));
    let a = (from.x as f64, from.y as f64);
    let b = (to.x as f64, to.y as f64);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = Cell::new(x, y);
            if c == from || c == to || map.tile(c) != Tile::Wall {
                continue;
            }
            if segment_crosses_cell(a, b, c) {
                return false;
            }
        }
    }
    true
}

/// Cells sensed from `at`: every in-bounds cell within Chebyshev `radius`
/// with line of sight, plus walls bordering a visible free cell.
pub fn sensed_cells(map: &GridMap, at: Cell, radius: i32) -> Vec<Cell> {
    let mut mask = Grid::filled(map.width(), map.height(), false);
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let c = at.offset(dx, dy);
            if map.contains(c) && line_of_sight(map, at, c) {
                mask[c] = true;
            }
        }
    }
    let visible_free: Vec<Cell> = mask
        .iter()
        .filter(|(c, v)| **v && map.is_free(*c))
        .map(|(c, _)| c)
        .collect();
    for c in visible_free {
        for n in c.neighbors4() {
            if map.contains(n) && map.tile(n) == Tile::Wall {
                mask[n] = true;
            }
        }
    }
    mask.iter().filter(|(_, v)| **v).map(|(c, _)| c).collect()
}

/// Senses from `pose` and folds the result into `state` for `agent`.
pub fn sense(map: &GridMap, pose: &AgentPose, state: &mut ExplorationState, agent: usize, radius: i32) -> SenseOutcome {
    let cells = sensed_cells(map, pose.cell, radius);
    state.mark(agent, &cells)
}

/// Near cells become 1, every other cell decays by `decay`.
pub fn update_trajectory(state: &mut ExplorationState, agent: usize, at: Cell, decay: f64) {
    let grid = &mut state.trajectory[agent];
    let w = grid.width();
    for (i, v) in grid.as_mut_slice().iter_mut().enumerate() {
        let c = Cell::new((i % w) as i32, (i / w) as i32);
        if c.chebyshev(at) < TRAJECTORY_NEAR {
            *v = 1.0;
        } else {
            *v *= decay;
        }
    }
}

/// Explored free cells 4-adjacent to at least one unexplored cell.
pub fn frontier_cells(explored: &Grid<bool>, map: &GridMap) -> Vec<Cell> {
    explored
        .iter()
        .filter(|(c, e)| **e && map.is_free(*c))
        .filter(|(c, _)| c.neighbors4().iter().any(|n| explored.get(*n).is_some_and(|e| !*e)))
        .map(|(c, _)| c)
        .collect()
}

/// `S x S x 7` observation, stored channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalInfo {
    size: usize,
    data: Vec<f64>,
}

impl LocalInfo {
    pub fn zeros(size: usize) -> Self {
        LocalInfo {
            size,
            data: vec![0.0; CHANNELS * size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, channel: usize, c: Cell) -> f64 {
        self.data[self.offset(channel, c)]
    }

    pub fn set(&mut self, channel: usize, c: Cell, v: f64) {
        let i = self.offset(channel, c);
        self.data[i] = v;
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.data[channel * n..(channel + 1) * n]
    }

    fn offset(&self, channel: usize, c: Cell) -> usize {
        channel * self.size * self.size + c.y as usize * self.size + c.x as usize
    }

    /// Little-endian: `u32 size`, `u32 channels`, then `f32` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.data.len());
        out.extend_from_slice(&(self.size as u32).to_le_bytes());
        out.extend_from_slice(&(CHANNELS as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PerceptionError> {
        if bytes.len() < 8 {
            return Err(PerceptionError::Malformed("missing header".into()));
        }
        let size = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let channels = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if channels != CHANNELS {
            return Err(PerceptionError::Malformed(format!("{channels} channels")));
        }
        let expected = 8 + 4 * CHANNELS * size * size;
        if bytes.len() != expected {
            return Err(PerceptionError::Malformed(format!(
                "{} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(LocalInfo { size, data })
    }
}

fn check_size(map: &GridMap, size: usize) -> Result<(), PerceptionError> {
    if size < map.width() || size < map.height() {
        return Err(PerceptionError::ObservationTooSmall {
            size,
            width: map.width(),
            height: map.height(),
        });
    }
    Ok(())
}

fn fill_view(info: &mut LocalInfo, map: &GridMap, at: Cell, radius: i32) {
    for c in sensed_cells(map, at, radius) {
        info.set(CH_VIEW_MASK, c, 1.0);
        match map.tile(c) {
            Tile::Wall => info.set(CH_VIEW_OBSTACLE, c, 1.0),
            Tile::Free => info.set(CH_VIEW_FREE, c, 1.0),
        }
    }
}

/// Observation for one agent from its own explored map. Maps smaller than
/// `size` sit in the top-left corner, zero padded.
pub fn build_local_info(
    map: &GridMap,
    state: &ExplorationState,
    pose: &AgentPose,
    agent: usize,
    size: usize,
    radius: i32,
) -> Result<LocalInfo, PerceptionError> {
    check_size(map, size)?;
    let mut info = LocalInfo::zeros(size);
    let explored = state.agent_explored(agent);
    let traj = state.trajectory(agent);
    for (c, e) in explored.iter() {
        if *e {
            info.set(CH_EXPLORED, c, 1.0);
            if map.tile(c) == Tile::Wall {
                info.set(CH_OBSTACLE, c, 1.0);
            }
        }
        info.set(CH_TRAJECTORY, c, traj[c]);
    }
    info.set(CH_LOCATION, pose.cell, 1.0);
    fill_view(&mut info, map, pose.cell, radius);
    Ok(info)
}

/// Team-merged observation: union of explored maps, multi-hot locations,
/// elementwise-max trajectories and the union of current views.
pub fn build_merged_local_info(
    map: &GridMap,
    state: &ExplorationState,
    poses: &[AgentPose],
    alive: &[bool],
    size: usize,
    radius: i32,
) -> Result<LocalInfo, PerceptionError> {
    check_size(map, size)?;
    let mut info = LocalInfo::zeros(size);
    for (c, e) in state.merged().iter() {
        if *e {
            info.set(CH_EXPLORED, c, 1.0);
            if map.tile(c) == Tile::Wall {
                info.set(CH_OBSTACLE, c, 1.0);
            }
        }
        let t = (0..state.agents()).map(|a| state.trajectory(a)[c]).fold(0.0, f64::max);
        info.set(CH_TRAJECTORY, c, t);
    }
    for (pose, _) in poses.iter().zip(alive).filter(|(_, a)| **a) {
        info.set(CH_LOCATION, pose.cell, 1.0);
        fill_view(&mut info, map, pose.cell, radius);
    }
    Ok(info)
}
