use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cluster_frontiers, information_gain, plan_nearest, Knowledge, KnownMap, PlanError, PlanningView};
use crate::grid::Cell;
use crate::perception::{segment_crosses_cell, AgentPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RrtParams {
    pub step_len: f64,
    pub max_iters: usize,
    pub target_cap: usize,
    pub ig_radius: f64,
    /// Pick the cluster with the largest IG − N (false: the smallest).
    pub maximize_utility: bool,
}

impl Default for RrtParams {
    fn default() -> Self {
        RrtParams {
            step_len: 3.0,
            max_iters: 300,
            target_cap: 20,
            ig_radius: 2.0,
            maximize_utility: true,
        }
    }
}

fn steer(from: (f64, f64), to: (f64, f64), len: f64) -> (f64, f64) {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let d = (dx * dx + dy * dy).sqrt();
    if d <= len {
        to
    } else {
        (from.0 + dx / d * len, from.1 + dy / d * len)
    }
}

fn round_cell(p: (f64, f64)) -> Cell {
    Cell::new(p.0.round() as i32, p.1.round() as i32)
}

fn collides(known: &KnownMap, a: (f64, f64), b: (f64, f64)) -> bool {
    let x0 = a.0.min(b.0).floor() as i32 - 1;
    let x1 = a.0.max(b.0).ceil() as i32 + 1;
    let y0 = a.1.min(b.1).floor() as i32 - 1;
    let y1 = a.1.max(b.1).ceil() as i32 + 1;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let c = Cell::new(x, y);
            if known.get(c) == Knowledge::KnownWall && segment_crosses_cell(a, b, c) {
                return true;
            }
        }
    }
    false
}

/// Picks among `(center, ig, nav_cost)` candidates after min-max normalizing
/// both terms over the candidates. Ties go to the smallest center.
pub fn select_rrt_goal(candidates: &[(Cell, f64, f64)], maximize: bool) -> Option<Cell> {
    let norm = |vals: Vec<f64>| -> Vec<f64> {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        vals.iter()
            .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    };
    let ig = norm(candidates.iter().map(|c| c.1).collect());
    let nav = norm(candidates.iter().map(|c| c.2).collect());
    let sign = if maximize { 1.0 } else { -1.0 };
    let mut best: Option<(Cell, f64)> = None;
    for (i, (cell, _, _)) in candidates.iter().enumerate() {
        let u = sign * (ig[i] - nav[i]);
        let better = match best {
            None => true,
            Some((bc, bu)) => u > bu + 1e-12 || ((u - bu).abs() <= 1e-12 && *cell < bc),
        };
        if better {
            best = Some((*cell, u));
        }
    }
    best.map(|(c, _)| c)
}

pub fn plan_rrt<R: Rng + ?Sized>(
    view: &PlanningView<'_>,
    pose: AgentPose,
    params: &RrtParams,
    rng: &mut R,
) -> Result<Cell, PlanError> {
    let known = &view.known;
    let (w, h) = (known.width() as f64, known.height() as f64);
    let root = (pose.cell.x as f64, pose.cell.y as f64);
    let mut nodes = vec![root];
    let mut targets: Vec<Cell> = Vec::new();
    for _ in 0..params.max_iters {
        if targets.len() >= params.target_cap {
            break;
        }
        let p = (rng.random_range(-0.5..w - 0.5), rng.random_range(-0.5..h - 0.5));
        let s = *nodes
            .iter()
            .min_by(|a, b| {
                let da = (a.0 - p.0).powi(2) + (a.1 - p.1).powi(2);
                let db = (b.0 - p.0).powi(2) + (b.1 - p.1).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        let t = steer(s, p, params.step_len);
        let cell = round_cell(t);
        if !known.grid().contains(cell) || known.get(cell) == Knowledge::KnownWall || collides(known, s, t) {
            continue;
        }
        if known.get(cell) == Knowledge::Unknown {
            targets.push(cell);
        } else {
            nodes.push(t);
        }
    }
    targets.sort();
    targets.dedup();
    if targets.is_empty() {
        return plan_nearest(view, pose);
    }
    let candidates: Vec<(Cell, f64, f64)> = cluster_frontiers(&targets)
        .into_iter()
        .map(|c| {
            (
                c.center,
                information_gain(view.explored, c.center, params.ig_radius) as f64,
                c.center.euclidean(pose.cell),
            )
        })
        .collect();
    select_rrt_goal(&candidates, params.maximize_utility).ok_or(PlanError::NoFrontier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::perception::{ExplorationState, Heading};
    use crate::worldgen::GridMap;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn open_map(w: usize, h: usize) -> GridMap {
        let mut s = String::new();
        for y in 0..h {
            for x in 0..w {
                let wall = x == 0 || y == 0 || x == w - 1 || y == h - 1;
                s.push(if wall { '#' } else { '.' });
            }
            s.push('\n');
        }
        GridMap::from_ascii(&s).unwrap()
    }

    #[test]
    fn steer_clamps_length() {
        let t = steer((0.0, 0.0), (10.0, 0.0), 3.0);
        assert!((t.0 - 3.0).abs() < 1e-12 && t.1 == 0.0);
        assert_eq!(steer((0.0, 0.0), (1.0, 1.0), 3.0), (1.0, 1.0));
    }

    #[test]
    fn unknown_interior_gives_unknown_goal() {
        let map = open_map(7, 7);
        let mut state = ExplorationState::for_map(&map, 1);
        let at = Cell::new(3, 3);
        state.mark(0, &[at]);
        let poses = [AgentPose::new(at, Heading::North)];
        let view = PlanningView::new(&map, state.merged(), &poses, &[true]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = plan_rrt(&view, poses[0], &RrtParams::default(), &mut rng).unwrap();
        assert!(!state.merged()[g]);
    }

    #[test]
    fn fully_explored_falls_back_to_no_frontier() {
        let map = open_map(7, 7);
        let state_grid = Grid::filled(7, 7, true);
        let poses = [AgentPose::new(Cell::new(3, 3), Heading::North)];
        let view = PlanningView::new(&map, &state_grid, &poses, &[true]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            plan_rrt(&view, poses[0], &RrtParams::default(), &mut rng),
            Err(PlanError::NoFrontier)
        );
    }

    #[test]
    fn walls_block_the_tree() {
        // Agent boxed in by known walls: no target can be reached.
        let map = open_map(9, 9);
        let mut state = ExplorationState::for_map(&map, 1);
        let at = Cell::new(4, 4);
        let mut grid = Grid::filled(9, 9, Knowledge::Unknown);
        for n in at.neighbors8() {
            grid[n] = Knowledge::KnownWall;
        }
        grid[at] = Knowledge::KnownFree;
        state.mark(0, &[at]);
        let poses = [AgentPose::new(at, Heading::North)];
        let mut view = PlanningView::new(&map, state.merged(), &poses, &[true]);
        view.known = KnownMap::from_grid(grid);
        view.frontier.clear();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(
            plan_rrt(&view, poses[0], &RrtParams::default(), &mut rng),
            Err(PlanError::NoFrontier)
        );
    }

    #[test]
    fn normalization_makes_ig_scale_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let k = rng.random_range(1..8);
            let cands: Vec<(Cell, f64, f64)> = (0..k)
                .map(|i| {
                    (
                        Cell::new(i, rng.random_range(0..5)),
                        rng.random_range(0..20) as f64,
                        rng.random_range(0.0..15.0),
                    )
                })
                .collect();
            let scale = rng.random_range(0.1..50.0);
            let scaled: Vec<_> = cands.iter().map(|(c, ig, n)| (*c, ig * scale, *n)).collect();
            for maximize in [true, false] {
                assert_eq!(select_rrt_goal(&cands, maximize), select_rrt_goal(&scaled, maximize));
            }
        }
    }

    #[test]
    fn sign_flag_selects_extremes() {
        let cands = [(Cell::new(0, 0), 10.0, 1.0), (Cell::new(5, 0), 0.0, 9.0)];
        assert_eq!(select_rrt_goal(&cands, true), Some(Cell::new(0, 0)));
        assert_eq!(select_rrt_goal(&cands, false), Some(Cell::new(5, 0)));
    }
}
