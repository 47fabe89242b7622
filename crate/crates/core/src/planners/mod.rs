//! Frontier-based planning baselines and the navigation primitives shared
//! with the engine.

mod apf;
mod baselines;
mod frontier;
mod rrt;
mod search;

pub use apf::{plan_apf, ApfParams};
pub use baselines::{plan_nearest, plan_utility, plan_voronoi, voronoi_partition};
pub use frontier::{cluster_frontiers, information_gain, FrontierCluster};
pub use rrt::{plan_rrt, select_rrt_goal, RrtParams};
pub use search::{astar_cost, astar_path, bfs_distance_map, UNREACHABLE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Decision, DecisionContext, DecisionError, DecisionSource};
use crate::grid::{Cell, Grid};
use crate::perception::{frontier_cells, AgentPose};
use crate::worldgen::{GridMap, Tile};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("no frontier left")]
    NoFrontier,
    #[error("no path from {from} to {to}")]
    NoPath { from: Cell, to: Cell },
}

impl From<PlanError> for DecisionError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::NoFrontier => DecisionError::NoFrontier,
            other => DecisionError::Failed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Knowledge {
    KnownFree,
    KnownWall,
    Unknown,
}

/// Team occupancy map: what has been sensed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownMap {
    grid: Grid<Knowledge>,
}

impl KnownMap {
    pub fn from_explored(map: &GridMap, explored: &Grid<bool>) -> Self {
        let data = map
            .tiles()
            .as_slice()
            .iter()
            .zip(explored.as_slice())
            .map(|(t, e)| match (e, t) {
                (false, _) => Knowledge::Unknown,
                (true, Tile::Free) => Knowledge::KnownFree,
                (true, Tile::Wall) => Knowledge::KnownWall,
            })
            .collect();
        KnownMap {
            grid: Grid::from_vec(map.width(), map.height(), data),
        }
    }

    pub fn from_grid(grid: Grid<Knowledge>) -> Self {
        KnownMap { grid }
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn grid(&self) -> &Grid<Knowledge> {
        &self.grid
    }

    /// Out-of-bounds cells read as walls.
    pub fn get(&self, c: Cell) -> Knowledge {
        self.grid.get(c).copied().unwrap_or(Knowledge::KnownWall)
    }

    pub fn is_known_free(&self, c: Cell) -> bool {
        self.get(c) == Knowledge::KnownFree
    }

    /// Passable for goal routing: anything not known to be a wall.
    pub fn traversable(&self, c: Cell) -> bool {
        self.grid.contains(c) && self.get(c) != Knowledge::KnownWall
    }
}

/// Snapshot a planner works on.
pub struct PlanningView<'a> {
    pub map: &'a GridMap,
    pub explored: &'a Grid<bool>,
    pub known: KnownMap,
    pub frontier: Vec<Cell>,
    pub poses: &'a [AgentPose],
    pub alive: &'a [bool],
}

impl<'a> PlanningView<'a> {
    pub fn new(map: &'a GridMap, explored: &'a Grid<bool>, poses: &'a [AgentPose], alive: &'a [bool]) -> Self {
        PlanningView {
            map,
            explored,
            known: KnownMap::from_explored(map, explored),
            frontier: frontier_cells(explored, map),
            poses,
            alive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    Utility,
    Nearest,
    Rrt,
    Apf,
    Voronoi,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] = [
        PlannerKind::Utility,
        PlannerKind::Nearest,
        PlannerKind::Rrt,
        PlannerKind::Apf,
        PlannerKind::Voronoi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::Utility => "utility",
            PlannerKind::Nearest => "nearest",
            PlannerKind::Rrt => "rrt",
            PlannerKind::Apf => "apf",
            PlannerKind::Voronoi => "voronoi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub ig_radius: f64,
    pub rrt: RrtParams,
    pub apf: ApfParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            ig_radius: 2.0,
            rrt: RrtParams::default(),
            apf: ApfParams::default(),
        }
    }
}

pub fn plan(
    kind: PlannerKind,
    view: &PlanningView<'_>,
    agent: usize,
    params: &PlannerParams,
    rng: &mut ChaCha8Rng,
) -> Result<Cell, PlanError> {
    let pose = view.poses[agent];
    match kind {
        PlannerKind::Utility => plan_utility(view, params.ig_radius),
        PlannerKind::Nearest => plan_nearest(view, pose),
        PlannerKind::Rrt => plan_rrt(view, pose, &params.rrt, rng),
        PlannerKind::Apf => plan_apf(view, agent, &params.apf),
        PlannerKind::Voronoi => plan_voronoi(view, agent, params.ig_radius),
    }
}

/// A baseline planner as an engine decision source.
pub struct PlannerPolicy {
    pub kind: PlannerKind,
    pub params: PlannerParams,
    rng: ChaCha8Rng,
}

impl PlannerPolicy {
    pub fn new(kind: PlannerKind, params: PlannerParams, seed: u64) -> Self {
        PlannerPolicy {
            kind,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl DecisionSource for PlannerPolicy {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, DecisionError> {
        let view = PlanningView::new(ctx.map, ctx.state.merged(), ctx.poses, ctx.alive);
        let goal = plan(self.kind, &view, ctx.agent, &self.params, &mut self.rng)?;
        Ok(Decision::goal(goal))
    }
}
