//! Async-MAPPO: per-agent transition caches filled from asynchronous
//! episodes, macro-level GAE and clipped PPO updates.

mod ppo;
mod trainer;

pub use ppo::{ppo_loss, ppo_update, Adam, LossReport};
pub use trainer::{
    collect_episode, evaluate_policy, train, train_from, write_curves_csv, write_eval_csv, CurveRow, EpisodeRollout,
    EvalRow, TrainConfig, TrainOutcome, TrainState, POLICY_FILE, STATE_FILE,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EngineError;
use crate::policy::{CheckpointError, PolicyError, PolicyInput};
use crate::worldgen::WorldgenError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss or gradient in epoch {epoch}; update discarded")]
    NonFiniteLoss { epoch: usize },
    #[error("batch {batch}: {source}")]
    Engine { batch: usize, source: EngineError },
    #[error("batch {batch}: {message}")]
    Rollout { batch: usize, message: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Worldgen(#[from] WorldgenError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub grad_clip_norm: f64,
    pub huber_delta: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub clip_eps: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub reward_normalization: bool,
    pub feature_normalization: bool,
    /// Discount whole macros by γ instead of γ^Δ.
    pub per_macro_discount: bool,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            gamma: 0.99,
            gae_lambda: 0.95,
            grad_clip_norm: 10.0,
            huber_delta: 10.0,
            adam_eps: 1e-5,
            weight_decay: 0.0,
            lr: 2.5e-5,
            clip_eps: 0.2,
            ppo_epochs: 3,
            minibatches: 1,
            value_coef: 0.5,
            entropy_coef: 0.01,
            reward_normalization: true,
            feature_normalization: true,
            per_macro_discount: false,
        }
    }
}

impl TrainHyper {
    /// The higher learning rate variant for grid maps.
    pub fn grid_preset() -> Self {
        TrainHyper {
            lr: 5e-4,
            ..Default::default()
        }
    }

    /// Settings that learn within a few hundred thousand macro steps on one
    /// CPU: larger steps, minibatches and more epochs per batch.
    pub fn desk_preset() -> Self {
        TrainHyper {
            lr: 1e-3,
            minibatches: 4,
            ppo_epochs: 5,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return Err(TrainError::InvalidConfig(
                "gamma and gae_lambda must lie in (0, 1]".into(),
            ));
        }
        let positive = [self.grad_clip_norm, self.huber_delta, self.adam_eps, self.clip_eps];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(TrainError::InvalidConfig(
                "grad_clip_norm, huber_delta, adam_eps and clip_eps must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) || !(self.value_coef >= 0.0) || !(self.entropy_coef >= 0.0)
        {
            return Err(TrainError::InvalidConfig(
                "lr, weight_decay and loss coefficients must be >= 0".into(),
            ));
        }
        if self.ppo_epochs == 0 || self.minibatches == 0 {
            return Err(TrainError::InvalidConfig(
                "ppo_epochs and minibatches must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Σ γ^t · r_t over `(offset t, reward)` pairs.
pub fn accumulate_macro_reward(rewards: &[(u32, f64)], gamma: f64) -> f64 {
    rewards.iter().map(|(t, r)| gamma.powi(*t as i32) * r).sum()
}

/// What follows a macro transition.
#[derive(Debug, Clone, PartialEq)]
pub enum Successor {
    /// Next decision's observation and its value estimate.
    Observed { obs: PolicyInput, value: f64 },
    /// Episode ended at full coverage.
    Terminal,
    /// Successor never recorded; bootstrapped with the transition's own value.
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroTransition {
    pub agent: usize,
    /// Macro index within the agent's episode.
    pub b: usize,
    pub obs: PolicyInput,
    /// Goal block index.
    pub goal: usize,
    /// Accumulated discounted reward of the macro.
    pub reward: f64,
    /// Atomic steps executed.
    pub steps: u32,
    pub next: Successor,
    pub value: f64,
    pub log_prob: f64,
}

impl MacroTransition {
    fn next_value(&self) -> f64 {
        match &self.next {
            Successor::Observed { value, .. } => *value,
            Successor::Terminal => 0.0,
            Successor::Missing => self.value,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionCache {
    pub agent: usize,
    pub transitions: Vec<MacroTransition>,
}

impl TransitionCache {
    pub fn new(agent: usize) -> Self {
        TransitionCache {
            agent,
            transitions: Vec::new(),
        }
    }

    pub fn push(&mut self, t: MacroTransition) {
        self.transitions.push(t);
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// One GAE input row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaeStep {
    pub reward: f64,
    pub value: f64,
    pub next_value: f64,
    pub steps: u32,
    /// Cuts the backward accumulation (episode end).
    pub terminal: bool,
}

/// Advantages and returns of one agent's ordered macro sequence:
/// δ_b = R̂_b + γ^Δ V(s_b) − V(s_{b−1}), A_b = δ_b + (γλ)^Δ A_{b+1}.
pub fn compute_gae(steps: &[GaeStep], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let mut adv = vec![0.0; steps.len()];
    let mut next_adv = 0.0;
    for (i, s) in steps.iter().enumerate().rev() {
        let d = s.steps.max(1) as i32;
        let delta = s.reward + gamma.powi(d) * s.next_value - s.value;
        let carry = if s.terminal {
            0.0
        } else {
            (gamma * lambda).powi(d) * next_adv
        };
        adv[i] = delta + carry;
        next_adv = adv[i];
    }
    let ret = adv.iter().zip(steps).map(|(a, s)| a + s.value).collect();
    (adv, ret)
}

/// One training sample in the centralized buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub episode: u64,
    pub agent: usize,
    pub b: usize,
    pub obs: PolicyInput,
    pub action: usize,
    pub old_log_prob: f64,
    pub old_value: f64,
    pub advantage: f64,
    pub ret: f64,
    /// Bootstrapped without a recorded successor.
    pub incomplete: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlushReport {
    pub added: usize,
    pub incomplete: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayBuffer {
    pub entries: Vec<BufferEntry>,
}

impl ReplayBuffer {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Moves every cached transition of `episode` into the buffer with its
    /// advantage and return, preserving per-agent order, and empties the
    /// caches. A last transition without successor is bootstrapped with its
    /// own value and flagged.
    pub fn flush(&mut self, episode: u64, caches: &mut [TransitionCache], hyper: &TrainHyper) -> FlushReport {
        let mut report = FlushReport::default();
        for cache in caches.iter_mut() {
            let rows: Vec<GaeStep> = cache
                .transitions
                .iter()
                .map(|t| GaeStep {
                    reward: t.reward,
                    value: t.value,
                    next_value: t.next_value(),
                    steps: if hyper.per_macro_discount { 1 } else { t.steps },
                    terminal: matches!(t.next, Successor::Terminal),
                })
                .collect();
            let (adv, ret) = compute_gae(&rows, hyper.gamma, hyper.gae_lambda);
            for ((t, a), r) in cache.transitions.drain(..).zip(adv).zip(ret) {
                let incomplete = matches!(t.next, Successor::Missing);
                report.incomplete += incomplete as usize;
                report.added += 1;
                self.entries.push(BufferEntry {
                    episode,
                    agent: t.agent,
                    b: t.b,
                    obs: t.obs,
                    action: t.goal,
                    old_log_prob: t.log_prob,
                    old_value: t.value,
                    advantage: a,
                    ret: r,
                    incomplete,
                });
            }
        }
        report
    }
}

/// Running variance of rewards, used to rescale them without shifting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardScaler {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl RewardScaler {
    pub fn update(&mut self, values: &[f64]) {
        for v in values {
            self.count += 1.0;
            let d = v - self.mean;
            self.mean += d / self.count;
            self.m2 += d * (v - self.mean);
        }
    }

    pub fn scale(&self) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2 / self.count + 1e-8).sqrt()
        }
    }

    pub fn apply(&self, r: f64) -> f64 {
        r / self.scale()
    }
}
