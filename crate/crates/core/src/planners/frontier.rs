use std::collections::BTreeSet;

use crate::grid::{Cell, Grid};

/// Unexplored cells within Euclidean distance `radius` of `cell`.
pub fn information_gain(explored: &Grid<bool>, cell: Cell, radius: f64) -> usize {
    let r = radius.floor() as i32;
    let r2 = radius * radius;
    let mut count = 0;
    for dy in -r..=r {
        for dx in -r..=r {
            let c = cell.offset(dx, dy);
            if (dx * dx + dy * dy) as f64 <= r2 && explored.get(c).is_some_and(|e| !*e) {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierCluster {
    /// Members in ascending order.
    pub cells: Vec<Cell>,
    pub center: Cell,
    pub weight: usize,
}

/// 8-connected components, ordered by their smallest member. The center is
/// the member nearest the centroid.
pub fn cluster_frontiers(cells: &[Cell]) -> Vec<FrontierCluster> {
    let mut remaining: BTreeSet<Cell> = cells.iter().copied().collect();
    let mut out = Vec::new();
    while let Some(seed) = remaining.pop_first() {
        let mut members = vec![seed];
        let mut stack = vec![seed];
        while let Some(c) = stack.pop() {
            for n in c.neighbors8() {
                if remaining.remove(&n) {
                    members.push(n);
                    stack.push(n);
                }
            }
        }
        members.sort();
        let k = members.len() as f64;
        let cx = members.iter().map(|c| c.x as f64).sum::<f64>() / k;
        let cy = members.iter().map(|c| c.y as f64).sum::<f64>() / k;
        let center = *members
            .iter()
            .min_by(|a, b| {
                let da = (a.x as f64 - cx).powi(2) + (a.y as f64 - cy).powi(2);
                let db = (b.x as f64 - cx).powi(2) + (b.y as f64 - cy).powi(2);
                da.total_cmp(&db).then(a.cmp(b))
            })
            .unwrap();
        out.push(FrontierCluster {
            weight: members.len(),
            cells: members,
            center,
        });
    }
    out
}
