//! Procedural multi-room maps and agent spawning.
//!
//! Maps are built by binary space partitioning of the interior: every split
//! draws a one-cell-thick wall and, once the tree is complete, one door is
//! carved into each split wall. Sibling regions are therefore joined through
//! exactly one opening, which keeps all free cells in a single 4-connected
//! component.

use std::collections::VecDeque;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, Grid};
use crate::perception::{AgentPose, Heading};

/// Smallest room side (in cells) the splitter will produce.
pub const MIN_ROOM_SIDE: usize = 2;
const MAX_ATTEMPTS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum WorldgenError {
    #[error("invalid map spec: {0}")]
    InvalidSpec(String),
    #[error("not enough free cells: requested {requested}, map has {available}")]
    NotEnoughFreeCells { requested: usize, available: usize },
    #[error("map parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tile {
    Free,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSpec {
    pub width: usize,
    pub height: usize,
    /// Inclusive room-count range `[min, max]`.
    pub rooms: (usize, usize),
    pub seed: u64,
}

impl MapSpec {
    pub fn new(width: usize, height: usize, rooms: (usize, usize), seed: u64) -> Self {
        MapSpec {
            width,
            height,
            rooms,
            seed,
        }
    }

    /// 15x15 with 4-9 rooms.
    pub fn small(seed: u64) -> Self {
        MapSpec::new(15, 15, (4, 9), seed)
    }

    /// 25x25 with 4-25 rooms.
    pub fn large(seed: u64) -> Self {
        MapSpec::new(25, 25, (4, 25), seed)
    }

    fn validate(&self) -> Result<(), WorldgenError> {
        if self.width < 7 || self.height < 7 {
            return Err(WorldgenError::InvalidSpec(format!(
                "dimensions {}x{} below the 7x7 minimum",
                self.width, self.height
            )));
        }
        let (lo, hi) = self.rooms;
        if lo == 0 || lo > hi {
            return Err(WorldgenError::InvalidSpec(format!("empty room range {lo}..={hi}")));
        }
        let per_axis = |len: usize| (len + 1) / (MIN_ROOM_SIDE + 1);
        let capacity = per_axis(self.width - 2) * per_axis(self.height - 2);
        if lo > capacity {
            return Err(WorldgenError::InvalidSpec(format!(
                "{}x{} holds at most {capacity} rooms, {lo} requested",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Static occupancy grid. The outer ring is always wall.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMap {
    tiles: Grid<Tile>,
    rooms: usize,
}

impl GridMap {
    pub fn width(&self) -> usize {
        self.tiles.width()
    }

    pub fn height(&self) -> usize {
        self.tiles.height()
    }

    pub fn tiles(&self) -> &Grid<Tile> {
        &self.tiles
    }

    /// Number of BSP leaves; 0 for maps loaded from text.
    pub fn room_count(&self) -> usize {
        self.rooms
    }

    pub fn contains(&self, c: Cell) -> bool {
        self.tiles.contains(c)
    }

    pub fn tile(&self, c: Cell) -> Tile {
        self.tiles.get(c).copied().unwrap_or(Tile::Wall)
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.tile(c) == Tile::Free
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        self.tiles
            .iter()
            .filter(|(_, t)| **t == Tile::Free)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn free_count(&self) -> usize {
        self.tiles.as_slice().iter().filter(|t| **t == Tile::Free).count()
    }

    /// Free cells 4-connected to any of `sources`.
    pub fn reachable_from(&self, sources: &[Cell]) -> Grid<bool> {
        let mut seen = Grid::filled(self.width(), self.height(), false);
        let mut queue = VecDeque::new();
        for &s in sources {
            if self.is_free(s) && !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        while let Some(c) = queue.pop_front() {
            for n in c.neighbors4() {
                if self.is_free(n) && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        seen
    }

    pub fn from_tiles(tiles: Grid<Tile>) -> Result<Self, WorldgenError> {
        let (w, h) = (tiles.width(), tiles.height());
        if w < 3 || h < 3 {
            return Err(WorldgenError::InvalidSpec(format!("map {w}x{h} too small")));
        }
        for c in tiles.cells() {
            let ring = c.x == 0 || c.y == 0 || c.x as usize == w - 1 || c.y as usize == h - 1;
            if ring && tiles[c] != Tile::Wall {
                return Err(WorldgenError::InvalidSpec(format!(
                    "outer ring must be wall, found free cell at {c}"
                )));
            }
        }
        Ok(GridMap { tiles, rooms: 0 })
    }

    /// `#` for wall, `.` for free; one line per row, each terminated by `\n`.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width() + 1) * self.height());
        for y in 0..self.height() as i32 {
            for x in 0..self.width() as i32 {
                out.push(match self.tile(Cell::new(x, y)) {
                    Tile::Wall => '#',
                    Tile::Free => '.',
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_ascii(text: &str) -> Result<Self, WorldgenError> {
        let rows: Vec<&str> = text.lines().collect();
        let width = rows.first().map(|r| r.chars().count()).unwrap_or(0);
        let mut data = Vec::with_capacity(width * rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(WorldgenError::Parse {
                    line: i + 1,
                    message: format!("expected {width} columns, found {}", row.chars().count()),
                });
            }
            for ch in row.chars() {
                data.push(match ch {
                    '#' => Tile::Wall,
                    '.' => Tile::Free,
                    other => {
                        return Err(WorldgenError::Parse {
                            line: i + 1,
                            message: format!("unexpected character {other:?}"),
                        })
                    }
                });
            }
        }
        GridMap::from_tiles(Grid::from_vec(width, rows.len(), data))
    }
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

#[derive(Debug, Clone, Copy)]
enum Split {
    /// Wall occupies column `at`, rows `from..from+len`.
    Vertical { at: usize, from: usize, len: usize },
    /// Wall occupies row `at`, columns `from..from+len`.
    Horizontal { at: usize, from: usize, len: usize },
}

fn can_split(len: usize) -> bool {
    len > 2 * MIN_ROOM_SIDE
}

fn partition(spec: &MapSpec, target: usize, rng: &mut ChaCha8Rng) -> (Vec<Rect>, Vec<Split>) {
    let mut leaves = vec![Rect {
        x: 1,
        y: 1,
        w: spec.width - 2,
        h: spec.height - 2,
    }];
    let mut splits = Vec::new();
    while leaves.len() < target {
        // largest splittable leaf first; ties go to the older leaf
        let Some(pick) = leaves
            .iter()
            .enumerate()
            .filter(|(_, r)| can_split(r.w) || can_split(r.h))
            .max_by(|(ia, a), (ib, b)| (a.w * a.h).cmp(&(b.w * b.h)).then(ib.cmp(ia)))
            .map(|(i, _)| i)
        else {
            break;
        };
        let r = leaves[pick];
        let vertical = match (can_split(r.w), can_split(r.h)) {
            (true, false) => true,
            (false, true) => false,
            _ if r.w != r.h => r.w > r.h,
            _ => rng.random_bool(0.5),
        };
        let (a, b, split) = if vertical {
            let at = rng.random_range(r.x + MIN_ROOM_SIDE..=r.x + r.w - 1 - MIN_ROOM_SIDE);
            (
                Rect { w: at - r.x, ..r },
                Rect {
                    x: at + 1,
                    w: r.x + r.w - at - 1,
                    ..r
                },
                Split::Vertical {
                    at,
                    from: r.y,
                    len: r.h,
                },
            )
        } else {
            let at = rng.random_range(r.y + MIN_ROOM_SIDE..=r.y + r.h - 1 - MIN_ROOM_SIDE);
            (
                Rect { h: at - r.y, ..r },
                Rect {
                    y: at + 1,
                    h: r.y + r.h - at - 1,
                    ..r
                },
                Split::Horizontal {
                    at,
                    from: r.x,
                    len: r.w,
                },
            )
        };
        leaves[pick] = a;
        leaves.push(b);
        splits.push(split);
    }
    (leaves, splits)
}

/// Generates a connected multi-room map; deterministic in `spec.seed`.
pub fn generate_map(spec: &MapSpec) -> Result<GridMap, WorldgenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target = rng.random_range(spec.rooms.0..=spec.rooms.1);

    for _ in 0..MAX_ATTEMPTS {
        let (leaves, splits) = partition(spec, target, &mut rng);
        if leaves.len() < spec.rooms.0 {
            continue;
        }
        let mut tiles = Grid::filled(spec.width, spec.height, Tile::Wall);
        for r in &leaves {
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    tiles[Cell::new(x as i32, y as i32)] = Tile::Free;
                }
            }
        }
        for split in &splits {
            let candidates: Vec<Cell> = match *split {
                Split::Vertical { at, from, len } => (from..from + len)
                    .map(|y| Cell::new(at as i32, y as i32))
                    .filter(|c| tiles[c.offset(-1, 0)] == Tile::Free && tiles[c.offset(1, 0)] == Tile::Free)
                    .collect(),
                Split::Horizontal { at, from, len } => (from..from + len)
                    .map(|x| Cell::new(x as i32, at as i32))
                    .filter(|c| tiles[c.offset(0, -1)] == Tile::Free && tiles[c.offset(0, 1)] == Tile::Free)
                    .collect(),
            };
            // The first cell of every split wall is free on both sides, since
            // child walls start at least MIN_ROOM_SIDE cells in.
            debug_assert!(!candidates.is_empty());
            let door = candidates[rng.random_range(0..candidates.len())];
            tiles[door] = Tile::Free;
        }
        return Ok(GridMap {
            tiles,
            rooms: leaves.len(),
        });
    }
    Err(WorldgenError::InvalidSpec(format!(
        "could not partition {}x{} into at least {} rooms",
        spec.width, spec.height, spec.rooms.0
    )))
}

/// Places `n` agents on distinct free cells, uniformly at random, with
/// uniformly random cardinal headings.
pub fn spawn_agents(map: &GridMap, n: usize, seed: u64) -> Result<Vec<AgentPose>, WorldgenError> {
    let free = map.free_cells();
    if n > free.len() {
        return Err(WorldgenError::NotEnoughFreeCells {
            requested: n,
            available: free.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, free.len(), n);
    Ok(picks
        .into_iter()
        .map(|i| AgentPose::new(free[i], Heading::ALL[rng.random_range(0..4)]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bfs_count(map: &GridMap) -> usize {
        let start = map.free_cells()[0];
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(c) = stack.pop() {
            for n in c.neighbors4() {
                if map.is_free(n) && seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        seen.len()
    }

    #[test]
    fn small_map_room_count_and_connectivity() {
        let map = generate_map(&MapSpec::small(7)).unwrap();
        assert!((4..=9).contains(&map.room_count()), "rooms {}", map.room_count());
        assert_eq!(bfs_count(&map), map.free_count());
    }

    #[test]
    fn single_room_is_open_interior() {
        let map = generate_map(&MapSpec::new(9, 8, (1, 1), 3)).unwrap();
        assert_eq!(map.room_count(), 1);
        for c in map.tiles().cells() {
            let ring = c.x == 0 || c.y == 0 || c.x == 8 || c.y == 7;
            assert_eq!(map.is_free(c), !ring, "at {c}");
        }
    }

    #[test]
    fn bfs_visits_every_free_cell() {
        for seed in 0..200 {
            for spec in [MapSpec::small(seed), MapSpec::large(seed)] {
                let map = generate_map(&spec).unwrap();
                assert_eq!(bfs_count(&map), map.free_count(), "seed {seed}");
                let (lo, hi) = spec.rooms;
                assert!((lo..=hi).contains(&map.room_count()));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_map(&MapSpec::large(11)).unwrap();
        let b = generate_map(&MapSpec::large(11)).unwrap();
        assert_eq!(a, b);
        let c = generate_map(&MapSpec::large(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(matches!(
            generate_map(&MapSpec::new(6, 15, (1, 1), 0)),
            Err(WorldgenError::InvalidSpec(_))
        ));
        assert!(matches!(
            generate_map(&MapSpec::new(15, 15, (5, 4), 0)),
            Err(WorldgenError::InvalidSpec(_))
        ));
        assert!(matches!(
            generate_map(&MapSpec::new(7, 7, (5, 9), 0)),
            Err(WorldgenError::InvalidSpec(_))
        ));
    }

    #[test]
    fn ascii_roundtrip() {
        let map = generate_map(&MapSpec::small(5)).unwrap();
        let text = map.to_ascii();
        let back = GridMap::from_ascii(&text).unwrap();
        assert_eq!(back.to_ascii(), text);
        assert_eq!(back.tiles(), map.tiles());
    }

    #[test]
    fn ascii_rejects_bad_input() {
        assert!(matches!(
            GridMap::from_ascii("###\n#x#\n###\n"),
            Err(WorldgenError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            GridMap::from_ascii("###\n#.\n###\n"),
            Err(WorldgenError::Parse { line: 2, .. })
        ));
        assert!(GridMap::from_ascii("#.#\n#.#\n###\n").is_err());
    }

    #[test]
    fn spawn_fills_every_free_cell() {
        let map = generate_map(&MapSpec::small(1)).unwrap();
        let n = map.free_count();
        let poses = spawn_agents(&map, n, 9).unwrap();
        let mut cells: Vec<Cell> = poses.iter().map(|p| p.cell).collect();
        cells.sort();
        cells.dedup();
        assert_eq!(cells.len(), n);
        assert!(cells.iter().all(|c| map.is_free(*c)));
        assert_eq!(
            spawn_agents(&map, n + 1, 9),
            Err(WorldgenError::NotEnoughFreeCells {
                requested: n + 1,
                available: n
            })
        );
    }

    #[test]
    fn spawn_is_deterministic() {
        let map = generate_map(&MapSpec::small(2)).unwrap();
        assert_eq!(spawn_agents(&map, 2, 4).unwrap(), spawn_agents(&map, 2, 4).unwrap());
    }

    #[test]
    fn spawn_is_uniform() {
        // Per-cell frequency of a single spawn against Binomial(N, 1/k).
        let map = generate_map(&MapSpec::new(9, 9, (1, 1), 0)).unwrap();
        let free = map.free_cells();
        let k = free.len() as f64;
        let draws = 100_000u64;
        let mut counts = std::collections::HashMap::new();
        let mut headings = [0u64; 4];
        for seed in 0..draws {
            let pose = spawn_agents(&map, 1, seed).unwrap()[0];
            *counts.entry(pose.cell).or_insert(0u64) += 1;
            headings[pose.heading as usize] += 1;
        }
        let p = 1.0 / k;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in &free {
            let n = *counts.get(c).unwrap_or(&0) as f64;
            assert!((n - mean).abs() <= 4.0 * sigma, "cell {c}: {n} vs {mean}±{sigma}");
        }
        // chi-square over cells, dof = k-1; mean k-1, sd sqrt(2(k-1))
        let chi2: f64 = free
            .iter()
            .map(|c| {
                let n = *counts.get(c).unwrap_or(&0) as f64;
                (n - mean).powi(2) / mean
            })
            .sum();
        let dof = k - 1.0;
        assert!(chi2 < dof + 3.0 * (2.0 * dof).sqrt(), "chi2 {chi2} dof {dof}");
        let hm = draws as f64 / 4.0;
        let hs = (draws as f64 * 0.25 * 0.75).sqrt();
        for h in headings {
            assert!((h as f64 - hm).abs() <= 3.0 * hs);
        }
    }
}
