//! Goal policy: a weight-shared feature extractor over pooled observations,
//! mean-pooled peer aggregation and a categorical decoder over a G×G goal
//! grid, plus a critic head. All gradients are written out by hand.

mod checkpoint;
mod net;
mod source;

pub use checkpoint::CheckpointError;
pub use net::{
    aggregate_relations, decode_action, exact_mean, extract_features, value_estimate, ActorCache, CriticCache,
    ParamLayout, ParamSlice,
};
pub use source::{observe, snap_to_frontier, PolicySource, RandomGoalSource, Recorded};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Cell;
use crate::perception::{LocalInfo, CHANNELS};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("input has {got} values, expected {expected}")]
    Shape { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommMode {
    None,
    Compressed,
    Perfect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Observation side used for communication accounting.
    pub input_size: usize,
    pub goal_grid: usize,
    pub channels_out: usize,
    pub hidden: usize,
    pub comm_mode: CommMode,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            input_size: 15,
            goal_grid: 5,
            channels_out: 4,
            hidden: 64,
            comm_mode: CommMode::Compressed,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if ![1, 2, 4].contains(&self.channels_out) {
            return Err(PolicyError::InvalidConfig(format!(
                "channels_out must be 1, 2 or 4, got {}",
                self.channels_out
            )));
        }
        if self.goal_grid == 0 || self.hidden == 0 {
            return Err(PolicyError::InvalidConfig(
                "goal_grid and hidden must be positive".into(),
            ));
        }
        if self.input_size < self.goal_grid {
            return Err(PolicyError::InvalidConfig(format!(
                "input size {} smaller than goal grid {}",
                self.input_size, self.goal_grid
            )));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.goal_grid * self.goal_grid
    }

    /// Bytes a deciding agent receives per decision on an S×S map.
    pub fn comm_bytes(&self, s: usize) -> u64 {
        match self.comm_mode {
            CommMode::None => 0,
            CommMode::Compressed => (self.cells() * self.channels_out * 4) as u64,
            CommMode::Perfect => (s * s * CHANNELS * 4) as u64,
        }
    }
}

/// Traffic saved by sending a G×G×4 embedding instead of an S×S×7 map.
pub fn compression_ratio(s: usize, g: usize) -> f64 {
    1.0 - (4 * g * g) as f64 / (7 * s * s) as f64
}

/// Smallest multiple of `g` that fits the map.
pub fn padded_size(width: usize, height: usize, g: usize) -> usize {
    width.max(height).div_ceil(g) * g
}

/// Average-pools each channel of an S×S observation into G×G blocks.
/// Layout: `[cell k][channel c]` with k = gy·G + gx.
pub fn pool_local_info(info: &LocalInfo, g: usize) -> Vec<f64> {
    let s = info.size();
    let alpha = s / g;
    let mut out = vec![0.0; g * g * CHANNELS];
    let scale = 1.0 / (alpha * alpha) as f64;
    for c in 0..CHANNELS {
        let plane = info.channel(c);
        for y in 0..g * alpha {
            for x in 0..g * alpha {
                let k = (y / alpha) * g + x / alpha;
                out[k * CHANNELS + c] += plane[y * s + x] * scale;
            }
        }
    }
    out
}

/// Center cell of goal block `k` on a map whose padded side is `g·alpha`,
/// clamped to the map.
pub fn block_goal(k: usize, g: usize, alpha: usize, width: usize, height: usize) -> Cell {
    let (gx, gy) = (k % g, k / g);
    let x = (gx * alpha + (alpha - 1) / 2).min(width - 1);
    let y = (gy * alpha + (alpha - 1) / 2).min(height - 1);
    Cell::new(x as i32, y as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalDistribution {
    pub probs: Vec<f64>,
}

impl GoalDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        GoalDistribution {
            probs: exps.into_iter().map(|e| e / z).collect(),
        }
    }

    pub fn uniform(n: usize) -> Self {
        GoalDistribution {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn log_prob(&self, k: usize) -> f64 {
        self.probs[k].max(f64::MIN_POSITIVE).ln()
    }

    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// Samples a goal block and maps it to its center cell.
pub fn sample_goal<R: Rng + ?Sized>(
    dist: &GoalDistribution,
    rng: &mut R,
    g: usize,
    width: usize,
    height: usize,
) -> (usize, Cell) {
    let k = dist.sample(rng);
    let alpha = padded_size(width, height, g) / g;
    (k, block_goal(k, g, alpha, width, height))
}

/// Running per-channel mean and variance of pooled observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl Default for FeatureNormalizer {
    fn default() -> Self {
        FeatureNormalizer {
            count: 0.0,
            mean: vec![0.0; CHANNELS],
            m2: vec![0.0; CHANNELS],
        }
    }
}

impl FeatureNormalizer {
    fn std(&self, c: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2[c] / self.count + 1e-8).sqrt()
        }
    }

    pub fn normalize(&self, pooled: &[f64]) -> Vec<f64> {
        pooled
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let c = i % CHANNELS;
                (x - self.mean[c]) / self.std(c)
            })
            .collect()
    }

    /// Merges a batch of pooled observations (Chan et al. parallel update).
    pub fn update<'a>(&mut self, batch: impl IntoIterator<Item = &'a [f64]>) {
        let mut n = 0.0;
        let mut sum = vec![0.0; CHANNELS];
        let mut vals: Vec<Vec<f64>> = vec![Vec::new(); CHANNELS];
        for obs in batch {
            for (i, x) in obs.iter().enumerate() {
                let c = i % CHANNELS;
                sum[c] += x;
                vals[c].push(*x);
            }
            n += (obs.len() / CHANNELS) as f64;
        }
        if n == 0.0 {
            return;
        }
        for c in 0..CHANNELS {
            let mean_b = sum[c] / n;
            let m2_b: f64 = vals[c].iter().map(|x| (x - mean_b).powi(2)).sum();
            let total = self.count + n;
            let delta = mean_b - self.mean[c];
            self.mean[c] += delta * n / total;
            self.m2[c] += m2_b + delta * delta * self.count * n / total;
        }
        self.count += n;
    }
}

/// One decision's inputs, raw (unnormalized) pooled observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyInput {
    pub own: Vec<f64>,
    pub peers: Vec<Vec<f64>>,
    pub merged: Vec<f64>,
    /// Padded observation side / G for goal decoding.
    pub alpha: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    pub normalizer: FeatureNormalizer,
}

/// Forward output of one decision.
#[derive(Debug, Clone)]
pub struct PolicyOutput {
    pub dist: GoalDistribution,
    pub value: f64,
    pub actor: ActorCache,
    pub critic: CriticCache,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(config: PolicyConfig, rng: &mut R) -> Result<Self, PolicyError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let params = layout.init(rng);
        Ok(Policy {
            config,
            layout,
            params,
            normalizer: FeatureNormalizer::default(),
        })
    }

    pub fn zeros(config: PolicyConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        Ok(Policy {
            params: vec![0.0; layout.len()],
            config,
            layout,
            normalizer: FeatureNormalizer::default(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check(&self, v: &[f64]) -> Result<(), PolicyError> {
        let expected = self.config.cells() * CHANNELS;
        if v.len() != expected {
            return Err(PolicyError::Shape { got: v.len(), expected });
        }
        Ok(())
    }

    /// Normalized actor/critic inputs for this policy's comm mode.
    pub fn prepare(&self, input: &PolicyInput) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>), PolicyError> {
        self.check(&input.own)?;
        self.check(&input.merged)?;
        for p in &input.peers {
            self.check(p)?;
        }
        let own = match self.config.comm_mode {
            CommMode::Perfect => self.normalizer.normalize(&input.merged),
            _ => self.normalizer.normalize(&input.own),
        };
        let peers = match self.config.comm_mode {
            CommMode::None => Vec::new(),
            _ => input.peers.iter().map(|p| self.normalizer.normalize(p)).collect(),
        };
        let merged = self.normalizer.normalize(&input.merged);
        Ok((own, peers, merged))
    }

    pub fn forward(&self, input: &PolicyInput) -> Result<PolicyOutput, PolicyError> {
        let (own, peers, merged) = self.prepare(input)?;
        let actor = net::actor_forward(&self.layout, &self.params, &own, &peers);
        let critic = net::critic_forward(&self.layout, &self.params, &merged, &own);
        Ok(PolicyOutput {
            dist: GoalDistribution::from_logits(&actor.logits),
            value: critic.value,
            actor,
            critic,
        })
    }

    /// Gradient of `dlogits · logits + dvalue · value` w.r.t. all params,
    /// accumulated into `grad`.
    pub fn backward(&self, out: &PolicyOutput, dlogits: &[f64], dvalue: f64, grad: &mut [f64]) {
        net::actor_backward(&self.layout, &self.params, &out.actor, dlogits, grad);
        net::critic_backward(&self.layout, &self.params, &out.critic, dvalue, grad);
    }
}
