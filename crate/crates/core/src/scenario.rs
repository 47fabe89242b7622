//! Episode construction shared by experiments and training: map and spawn
//! generation from one base seed and an episode index.

use crate::engine::{EngineConfig, EpisodeSeeds, EpisodeSetup};
use crate::seeds;
use crate::worldgen::{generate_map, spawn_agents, GridMap, MapSpec, WorldgenError};

/// Map family for a side length: the two standard sizes keep their room
/// ranges, other sides scale the upper bound with area.
pub fn map_spec(side: usize, seed: u64) -> MapSpec {
    match side {
        15 => MapSpec::small(seed),
        25 => MapSpec::large(seed),
        s => {
            let per_axis = (s.saturating_sub(2) + 1) / 3;
            MapSpec::new(s, s, (1, (s * s / 25).clamp(1, (per_axis * per_axis).max(1))), seed)
        }
    }
}

/// Seeds of episode `index`. Every stream depends only on `(base, index)`,
/// so runs differing in mode or planner replay the same maps, spawns and
/// delays.
pub fn episode_seeds(base: u64, index: u64) -> EpisodeSeeds {
    EpisodeSeeds {
        map: seeds::derive(base, "map", index),
        spawn: seeds::derive(base, "spawn", index),
        delay: seeds::derive(base, "delay", index),
        decision: seeds::derive(base, "decision", index),
    }
}

pub fn build_setup(
    side: usize,
    config: &EngineConfig,
    seeds: EpisodeSeeds,
    meta: serde_json::Value,
) -> Result<EpisodeSetup, WorldgenError> {
    setup_on_map(generate_map(&map_spec(side, seeds.map))?, config, seeds, meta)
}

/// Episode on a given map; spawns still come from the episode seeds.
pub fn setup_on_map(
    map: GridMap,
    config: &EngineConfig,
    seeds: EpisodeSeeds,
    meta: serde_json::Value,
) -> Result<EpisodeSetup, WorldgenError> {
    let spawns = spawn_agents(&map, config.n_agents, seeds.spawn)?;
    Ok(EpisodeSetup {
        map,
        spawns,
        config: config.clone(),
        seeds,
        meta,
    })
}
