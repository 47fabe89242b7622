use super::{bfs_distance_map, information_gain, KnownMap, PlanError, PlanningView, UNREACHABLE};
use crate::grid::{Cell, Grid};
use crate::perception::AgentPose;

/// Largest key wins, ties go to the smallest cell.
fn argmax_by_key<K: PartialOrd>(cells: impl Iterator<Item = Cell>, key: impl Fn(Cell) -> K) -> Option<Cell> {
    let mut best: Option<(Cell, K)> = None;
    for c in cells {
        let k = key(c);
        let better = match &best {
            None => true,
            Some((bc, bk)) => k > *bk || (k == *bk && c < *bc),
        };
        if better {
            best = Some((c, k));
        }
    }
    best.map(|(c, _)| c)
}

pub fn plan_utility(view: &PlanningView<'_>, ig_radius: f64) -> Result<Cell, PlanError> {
    argmax_by_key(view.frontier.iter().copied(), |c| {
        information_gain(view.explored, c, ig_radius)
    })
    .ok_or(PlanError::NoFrontier)
}

pub fn plan_nearest(view: &PlanningView<'_>, pose: AgentPose) -> Result<Cell, PlanError> {
    let dist = bfs_distance_map(&view.known, pose.cell);
    view.frontier
        .iter()
        .filter(|c| dist[**c] != UNREACHABLE)
        .min_by_key(|c| (dist[**c], **c))
        .copied()
        .ok_or(PlanError::NoFrontier)
}

/// Assigns each KnownFree cell to the alive agent with the smallest BFS
/// distance, ties to the lower id. Cells no agent can reach are equally far
/// from everyone and go to the lowest alive id.
pub fn voronoi_partition(known: &KnownMap, poses: &[AgentPose], alive: &[bool]) -> Grid<Option<usize>> {
    let mut owner = Grid::filled(known.width(), known.height(), None);
    let mut best = Grid::filled(known.width(), known.height(), UNREACHABLE);
    let first = (0..poses.len()).find(|i| alive[*i]);
    for c in known.grid().cells() {
        if known.is_known_free(c) {
            owner[c] = first;
        }
    }
    for (i, pose) in poses.iter().enumerate().filter(|(i, _)| alive[*i]) {
        let dist = bfs_distance_map(known, pose.cell);
        for (c, d) in dist.iter() {
            if *d != UNREACHABLE && known.is_known_free(c) && *d < best[c] {
                best[c] = *d;
                owner[c] = Some(i);
            }
        }
    }
    owner
}

pub fn plan_voronoi(view: &PlanningView<'_>, agent: usize, ig_radius: f64) -> Result<Cell, PlanError> {
    let owner = voronoi_partition(&view.known, view.poses, view.alive);
    let mine = view.frontier.iter().copied().filter(|c| owner[*c] == Some(agent));
    match argmax_by_key(mine, |c| information_gain(view.explored, c, ig_radius)) {
        Some(c) => Ok(c),
        None => plan_utility(view, ig_radius),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{sense, ExplorationState, Heading};
    use crate::planners::Knowledge;
    use crate::worldgen::{generate_map, spawn_agents, GridMap, MapSpec};

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

    fn explored_state(seed: u64, agents: usize, steps: usize) -> (GridMap, ExplorationState, Vec<AgentPose>) {
        let map = generate_map(&MapSpec::small(seed)).unwrap();
        let poses = spawn_agents(&map, agents, seed + 1).unwrap();
        let mut state = ExplorationState::for_map(&map, agents);
        for (i, p) in poses.iter().enumerate() {
            sense(&map, p, &mut state, i, 2);
        }
        // Sense along a random walk to get irregular explored regions.
        let free = map.free_cells();
        for k in 0..steps {
            let c = free[(seed as usize * 31 + k * 17) % free.len()];
            sense(&map, &AgentPose::new(c, Heading::North), &mut state, k % agents, 2);
        }
        (map, state, poses)
    }

    #[test]
    fn utility_and_nearest_match_brute_force() {
        for seed in 0..40 {
            let (map, state, poses) = explored_state(seed, 3, (seed % 6) as usize);
            let alive = vec![true; 3];
            let view = PlanningView::new(&map, state.merged(), &poses, &alive);
            if view.frontier.is_empty() {
                assert_eq!(plan_utility(&view, 2.0), Err(PlanError::NoFrontier));
                continue;
            }
            let mut best = None;
            for c in map.tiles().cells() {
                if !view.frontier.contains(&c) {
                    continue;
                }
                let ig = information_gain(state.merged(), c, 2.0);
                if best.is_none_or(|(_, b)| ig > b) {
                    best = Some((c, ig));
                }
            }
            let u = plan_utility(&view, 2.0).unwrap();
            assert_eq!(u, best.unwrap().0);

            let dist = bfs_distance_map(&view.known, poses[0].cell);
            let mut near = None;
            for c in map.tiles().cells() {
                if view.frontier.contains(&c) && dist[c] != UNREACHABLE && near.is_none_or(|(_, d)| dist[c] < d) {
                    near = Some((c, dist[c]));
                }
            }
            match near {
                Some((c, d)) => {
                    let n = plan_nearest(&view, poses[0]).unwrap();
                    assert_eq!(n, c);
                    assert!(d <= dist[u]);
                }
                None => assert_eq!(plan_nearest(&view, poses[0]), Err(PlanError::NoFrontier)),
            }
        }
    }

    #[test]
    fn nearest_picks_closer_frontier() {
        let map = open_map(14, 3);
        let mut state = ExplorationState::for_map(&map, 1);
        let cells: Vec<Cell> = (1..=4).map(|x| Cell::new(x, 1)).collect();
        state.mark(0, &cells);
        let poses = [AgentPose::new(Cell::new(2, 1), Heading::East)];
        let view = PlanningView::new(&map, state.merged(), &poses, &[true]);
        assert_eq!(
            view.frontier,
            vec![Cell::new(1, 1), Cell::new(2, 1), Cell::new(3, 1), Cell::new(4, 1)]
        );
        assert_eq!(plan_nearest(&view, poses[0]).unwrap(), Cell::new(2, 1));
    }

    #[test]
    fn utility_two_frontiers() {
        let map = open_map(12, 7);
        let mut state = ExplorationState::for_map(&map, 1);
        // Everything explored except a pocket near (9, 3); the single
        // frontier cells bordering it decide the argmax.
        let all: Vec<Cell> = map
            .tiles()
            .cells()
            .filter(|c| c.euclidean(Cell::new(9, 3)) > 1.5 && *c != Cell::new(2, 1))
            .collect();
        state.mark(0, &all);
        let poses = [AgentPose::new(Cell::new(5, 3), Heading::North)];
        let view = PlanningView::new(&map, state.merged(), &poses, &[true]);
        let u = plan_utility(&view, 2.0).unwrap();
        let ig = |c| information_gain(state.merged(), c, 2.0);
        assert!(view.frontier.iter().all(|c| ig(*c) <= ig(u)));
        assert!(u.euclidean(Cell::new(9, 3)) < 2.5);
    }

    #[test]
    fn voronoi_single_agent_is_utility() {
        for seed in 0..20 {
            let (map, state, poses) = explored_state(seed, 1, 3);
            let view = PlanningView::new(&map, state.merged(), &poses, &[true]);
            assert_eq!(plan_voronoi(&view, 0, 2.0), plan_utility(&view, 2.0));
        }
    }

    #[test]
    fn voronoi_corridor_mirror() {
        let w = 13;
        let data = vec![Knowledge::KnownFree; w];
        let known = KnownMap::from_grid(Grid::from_vec(w, 1, data));
        let poses = [
            AgentPose::new(Cell::new(0, 0), Heading::East),
            AgentPose::new(Cell::new(w as i32 - 1, 0), Heading::West),
        ];
        let owner = voronoi_partition(&known, &poses, &[true, true]);
        for x in 0..w as i32 {
            let expect = if x <= 6 { 0 } else { 1 };
            assert_eq!(owner[Cell::new(x, 0)], Some(expect), "x={x}");
        }
        // Mirror image apart from the tie cell in the middle.
        for x in 0..6 {
            assert_eq!(
                owner[Cell::new(x, 0)].map(|o| 1 - o),
                owner[Cell::new(w as i32 - 1 - x, 0)]
            );
        }
    }

    #[test]
    fn voronoi_goal_in_own_partition() {
        let map = open_map(15, 5);
        let mut state = ExplorationState::for_map(&map, 2);
        let poses = [
            AgentPose::new(Cell::new(3, 2), Heading::East),
            AgentPose::new(Cell::new(11, 2), Heading::West),
        ];
        let middle: Vec<Cell> = map.tiles().cells().filter(|c| (2..=12).contains(&c.x)).collect();
        state.mark(0, &middle);
        let alive = [true, true];
        let view = PlanningView::new(&map, state.merged(), &poses, &alive);
        let owner = voronoi_partition(&view.known, &poses, &alive);
        for a in 0..2 {
            let g = plan_voronoi(&view, a, 2.0).unwrap();
            assert_eq!(owner[g], Some(a));
        }
        assert!(plan_voronoi(&view, 0, 2.0).unwrap().x < 7);
        assert!(plan_voronoi(&view, 1, 2.0).unwrap().x > 7);
    }

    #[test]
    fn voronoi_brute_force_partition() {
        for seed in 0..15 {
            let (map, state, poses) = explored_state(seed, 3, 8);
            let known = KnownMap::from_explored(&map, state.merged());
            let alive = [true, seed % 2 == 0, true];
            let owner = voronoi_partition(&known, &poses, &alive);
            let dists: Vec<_> = poses.iter().map(|p| bfs_distance_map(&known, p.cell)).collect();
            for c in map.tiles().cells() {
                let expect = if known.is_known_free(c) {
                    (0..3).filter(|i| alive[*i]).min_by_key(|i| (dists[*i][c], *i))
                } else {
                    None
                };
                assert_eq!(owner[c], expect);
            }
        }
    }
}
