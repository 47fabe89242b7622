use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{block_goal, padded_size, pool_local_info, CommMode, Policy, PolicyInput};
use crate::engine::{Decision, DecisionContext, DecisionError, DecisionSource};
use crate::grid::Cell;
use crate::perception::{build_local_info, build_merged_local_info, frontier_cells};

/// Frontier cell of the team map closest to `goal` (ties to the smaller
/// cell), or `goal` itself when nothing is left to explore.
pub fn snap_to_frontier(ctx: &DecisionContext<'_>, goal: Cell) -> Cell {
    frontier_cells(ctx.state.merged(), ctx.map)
        .into_iter()
        .min_by_key(|c| (c.dist2(goal), *c))
        .unwrap_or(goal)
}

/// Pooled observations for the deciding agent. Peer observations are only
/// gathered when `with_peers` is set.
pub fn observe(ctx: &DecisionContext<'_>, g: usize, with_peers: bool) -> Result<PolicyInput, DecisionError> {
    let (w, h) = (ctx.map.width(), ctx.map.height());
    let size = padded_size(w, h, g);
    let fail = |e: crate::perception::PerceptionError| DecisionError::Failed(e.to_string());
    let local = |agent: usize| {
        build_local_info(ctx.map, ctx.state, &ctx.poses[agent], agent, size, ctx.fov_radius)
            .map(|info| pool_local_info(&info, g))
            .map_err(fail)
    };
    let own = local(ctx.agent)?;
    let peers = if with_peers {
        (0..ctx.poses.len())
            .filter(|j| *j != ctx.agent && ctx.alive[*j])
            .map(local)
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    let merged = build_merged_local_info(ctx.map, ctx.state, ctx.poses, ctx.alive, size, ctx.fov_radius)
        .map(|info| pool_local_info(&info, g))
        .map_err(fail)?;
    Ok(PolicyInput {
        own,
        peers,
        merged,
        alpha: size / g,
    })
}

/// What the trainer needs from one decision.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub agent: usize,
    pub input: PolicyInput,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
}

/// Drives agents with a policy, optionally recording every decision.
pub struct PolicySource<'a> {
    pub policy: &'a Policy,
    pub greedy: bool,
    /// Send the agent to the frontier nearest the chosen block center.
    pub snap: bool,
    pub record: bool,
    pub recorded: Vec<Recorded>,
    rng: ChaCha8Rng,
}

impl<'a> PolicySource<'a> {
    pub fn new(policy: &'a Policy, seed: u64) -> Self {
        PolicySource {
            policy,
            greedy: false,
            snap: true,
            record: false,
            recorded: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn greedy(mut self) -> Self {
        self.greedy = true;
        self
    }
}

impl DecisionSource for PolicySource<'_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, DecisionError> {
        let cfg = &self.policy.config;
        let g = cfg.goal_grid;
        let input = observe(ctx, g, cfg.comm_mode != CommMode::None)?;
        let out = self
            .policy
            .forward(&input)
            .map_err(|e| DecisionError::Failed(e.to_string()))?;
        let k = if self.greedy {
            out.dist.argmax()
        } else {
            out.dist.sample(&mut self.rng)
        };
        let (w, h) = (ctx.map.width(), ctx.map.height());
        let mut goal = block_goal(k, g, input.alpha, w, h);
        if self.snap {
            goal = snap_to_frontier(ctx, goal);
        }
        if self.record {
            self.recorded.push(Recorded {
                agent: ctx.agent,
                log_prob: out.dist.log_prob(k),
                value: out.value,
                action: k,
                input,
            });
        }
        Ok(Decision {
            goal,
            comm_bytes: Some(cfg.comm_bytes(w.max(h))),
        })
    }
}

/// Uniformly random goal block, decoded like the policy's goals.
pub struct RandomGoalSource {
    pub goal_grid: usize,
    pub snap: bool,
    rng: ChaCha8Rng,
}

impl RandomGoalSource {
    pub fn new(goal_grid: usize, seed: u64) -> Self {
        RandomGoalSource {
            goal_grid,
            snap: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl DecisionSource for RandomGoalSource {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, DecisionError> {
        let g = self.goal_grid;
        let (w, h) = (ctx.map.width(), ctx.map.height());
        let alpha = padded_size(w, h, g) / g;
        let k = self.rng.random_range(0..g * g);
        let goal = block_goal(k, g, alpha, w, h);
        Ok(Decision::goal(if self.snap {
            snap_to_frontier(ctx, goal)
        } else {
            goal
        }))
    }
}
