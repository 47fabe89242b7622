use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{bfs_distance_map, cluster_frontiers, plan_nearest, PlanError, PlanningView, UNREACHABLE};
use crate::grid::{Cell, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApfParams {
    pub influence_radius: f64,
    pub resistance_gain: f64,
    pub repeat_penalty: f64,
    pub max_iters: usize,
}

impl Default for ApfParams {
    fn default() -> Self {
        ApfParams {
            influence_radius: 6.0,
            resistance_gain: 1.0,
            repeat_penalty: 0.5,
            max_iters: 200,
        }
    }
}

/// Potential over KnownFree cells (`+inf` elsewhere): peer resistance minus
/// cluster attraction.
pub(crate) fn potential_field(view: &PlanningView<'_>, agent: usize, params: &ApfParams) -> Grid<f64> {
    let known = &view.known;
    let mut field = Grid::filled(known.width(), known.height(), f64::INFINITY);
    for c in known.grid().cells() {
        if known.is_known_free(c) {
            field[c] = 0.0;
        }
    }
    for (j, pose) in view.poses.iter().enumerate() {
        if j == agent || !view.alive[j] {
            continue;
        }
        for c in known.grid().cells() {
            let d = c.euclidean(pose.cell);
            if field[c].is_finite() && d < params.influence_radius {
                field[c] += params.resistance_gain * (params.influence_radius - d);
            }
        }
    }
    for cluster in cluster_frontiers(&view.frontier) {
        let dist = bfs_distance_map(known, cluster.center);
        for (c, d) in dist.iter() {
            if *d == UNREACHABLE || !field[c].is_finite() {
                continue;
            }
            let dis = if *d == 0 { 0.5 } else { *d as f64 };
            field[c] -= cluster.weight as f64 / dis;
        }
    }
    field
}

/// Descends the potential field from the agent until it settles on a
/// frontier cell; falls back to the nearest frontier otherwise.
pub fn plan_apf(view: &PlanningView<'_>, agent: usize, params: &ApfParams) -> Result<Cell, PlanError> {
    if view.frontier.is_empty() {
        return Err(PlanError::NoFrontier);
    }
    let pose = view.poses[agent];
    let mut field = potential_field(view, agent, params);
    let frontier: HashSet<Cell> = view.frontier.iter().copied().collect();
    let lowest_neighbor = |field: &Grid<f64>, u: Cell| {
        u.neighbors4()
            .into_iter()
            .filter(|n| field.get(*n).is_some_and(|v| v.is_finite()))
            .min_by(|a, b| field[*a].total_cmp(&field[*b]).then(a.cmp(b)))
    };
    let mut u = pose.cell;
    if field.get(u).is_none_or(|v| !v.is_finite()) {
        return plan_nearest(view, pose);
    }
    for _ in 0..params.max_iters {
        let next = lowest_neighbor(&field, u);
        if frontier.contains(&u) && next.is_none_or(|n| field[n] >= field[u]) {
            return Ok(u);
        }
        field[u] += params.repeat_penalty;
        match next {
            Some(n) => u = n,
            None => break,
        }
    }
    if frontier.contains(&u) {
        Ok(u)
    } else {
        plan_nearest(view, pose)
    }
}
