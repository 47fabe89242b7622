use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use super::{KnownMap, PlanError};
use crate::engine::{atomic_duration, AtomicAction, TimingModel};
use crate::grid::{Cell, Grid};
use crate::perception::{AgentPose, Heading};

pub const UNREACHABLE: u32 = u32::MAX;

/// 4-connected step counts over KnownFree cells from `source`.
pub fn bfs_distance_map(known: &KnownMap, source: Cell) -> Grid<u32> {
    let mut dist = Grid::filled(known.width(), known.height(), UNREACHABLE);
    if !dist.contains(source) {
        return dist;
    }
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(c) = queue.pop_front() {
        let d = dist[c];
        for n in c.neighbors4() {
            if known.is_known_free(n) && dist[n] == UNREACHABLE {
                dist[n] = d + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

fn heading_index(h: Heading) -> usize {
    h as usize
}

fn state_index(known: &KnownMap, pose: AgentPose) -> usize {
    (pose.cell.y as usize * known.width() + pose.cell.x as usize) * 4 + heading_index(pose.heading)
}

const ACTIONS: [AtomicAction; 3] = [AtomicAction::Forward, AtomicAction::TurnLeft, AtomicAction::TurnRight];

/// Time-optimal action sequence from `start` to any heading at `goal`,
/// treating unknown cells as free. Costs are in milliseconds.
pub fn astar_path(
    known: &KnownMap,
    start: AgentPose,
    goal: Cell,
    timing: &TimingModel,
) -> Result<Vec<AtomicAction>, PlanError> {
    let no_path = PlanError::NoPath {
        from: start.cell,
        to: goal,
    };
    if start.cell == goal {
        return Ok(Vec::new());
    }
    if !known.traversable(goal) || !known.grid().contains(start.cell) {
        return Err(no_path);
    }
    let cost = |a: AtomicAction| (atomic_duration(a, timing) * 1000.0).round() as u64;
    let fwd = cost(AtomicAction::Forward);
    let h = |c: Cell| c.manhattan(goal) as u64 * fwd;
    let n = known.width() * known.height() * 4;
    let mut g = vec![u64::MAX; n];
    let mut parent: Vec<Option<(AgentPose, AtomicAction)>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    let s = state_index(known, start);
    g[s] = 0;
    heap.push(Reverse((
        h(start.cell),
        s,
        start.cell.x,
        start.cell.y,
        heading_index(start.heading),
    )));
    let mut found = None;
    while let Some(Reverse((_, idx, x, y, hd))) = heap.pop() {
        if closed[idx] {
            continue;
        }
        closed[idx] = true;
        let pose = AgentPose::new(Cell::new(x, y), Heading::ALL[hd]);
        if pose.cell == goal {
            found = Some(pose);
            break;
        }
        for a in ACTIONS {
            let next = a.apply(pose);
            if !known.traversable(next.cell) {
                continue;
            }
            let ni = state_index(known, next);
            let ng = g[idx] + cost(a);
            if ng < g[ni] {
                g[ni] = ng;
                parent[ni] = Some((pose, a));
                heap.push(Reverse((
                    ng + h(next.cell),
                    ni,
                    next.cell.x,
                    next.cell.y,
                    heading_index(next.heading),
                )));
            }
        }
    }
    let mut pose = found.ok_or(no_path)?;
    let mut actions = Vec::new();
    while let Some((prev, a)) = parent[state_index(known, pose)] {
        actions.push(a);
        pose = prev;
    }
    actions.reverse();
    Ok(actions)
}

/// Total duration of an action sequence, in seconds.
pub fn astar_cost(actions: &[AtomicAction], timing: &TimingModel) -> f64 {
    actions.iter().map(|a| atomic_duration(*a, timing)).sum()
}
