use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BufferEntry, ReplayBuffer, TrainError, TrainHyper};
use crate::policy::Policy;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, eps: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Means over the samples of one loss evaluation, or over all minibatch
/// steps of an update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clip_fraction: f64,
    /// Largest |ratio − 1| over the first minibatch of the first epoch.
    pub initial_ratio_dev: f64,
}

fn huber(d: f64, delta: f64) -> (f64, f64) {
    if d.abs() <= delta {
        (0.5 * d * d, d)
    } else {
        (delta * (d.abs() - 0.5 * delta), delta * d.signum())
    }
}

/// PPO loss over `batch` with advantages taken as given:
/// −min(ρA, clip(ρ)A) + c_v·Huber(V − R) − c_e·H, averaged. When `grad` is
/// given the gradient is accumulated into it.
pub fn ppo_loss(
    policy: &Policy,
    batch: &[&BufferEntry],
    hyper: &TrainHyper,
    mut grad: Option<&mut [f64]>,
) -> Result<LossReport, TrainError> {
    let n = batch.len() as f64;
    let mut rep = LossReport::default();
    let mut clipped = 0usize;
    for e in batch {
        let out = policy.forward(&e.obs)?;
        let probs = &out.dist.probs;
        let logp = out.dist.log_prob(e.action);
        let ratio = (logp - e.old_log_prob).exp();
        let a = e.advantage;
        let lo = 1.0 - hyper.clip_eps;
        let hi = 1.0 + hyper.clip_eps;
        let unclipped = ratio * a;
        let clipped_term = ratio.clamp(lo, hi) * a;
        let surr = unclipped.min(clipped_term);
        let is_clipped = (a > 0.0 && ratio > hi) || (a < 0.0 && ratio < lo);
        clipped += is_clipped as usize;
        let entropy = out.dist.entropy();
        let (vl, dvl) = huber(out.value - e.ret, hyper.huber_delta);
        rep.policy_loss += -surr / n;
        rep.value_loss += vl / n;
        rep.entropy += entropy / n;
        rep.initial_ratio_dev = rep.initial_ratio_dev.max((ratio - 1.0).abs());

        if let Some(g) = grad.as_deref_mut() {
            let dlogp = if is_clipped { 0.0 } else { -unclipped / n };
            let dlogits: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(j, p)| {
                    let onehot = if j == e.action { 1.0 } else { 0.0 };
                    let logp_j = p.max(f64::MIN_POSITIVE).ln();
                    let dentropy = -p * (logp_j + entropy);
                    dlogp * (onehot - p) - hyper.entropy_coef * dentropy / n
                })
                .collect();
            policy.backward(&out, &dlogits, hyper.value_coef * dvl / n, g);
        }
    }
    rep.total = rep.policy_loss + hyper.value_coef * rep.value_loss - hyper.entropy_coef * rep.entropy;
    rep.clip_fraction = clipped as f64 / n;
    Ok(rep)
}

/// Clipped-surrogate update over the whole buffer. Advantages are
/// normalized per update batch. On a non-finite loss or gradient the policy
/// and optimizer are left untouched.
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut Policy,
    adam: &mut Adam,
    buffer: &ReplayBuffer,
    hyper: &TrainHyper,
    rng: &mut R,
) -> Result<LossReport, TrainError> {
    hyper.validate()?;
    if buffer.is_empty() {
        return Err(TrainError::InvalidConfig("ppo_update on an empty buffer".into()));
    }
    let mut entries = buffer.entries.clone();
    if entries.len() > 1 {
        let n = entries.len() as f64;
        let mean = entries.iter().map(|e| e.advantage).sum::<f64>() / n;
        let var = entries.iter().map(|e| (e.advantage - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(1e-8);
        for e in &mut entries {
            e.advantage = (e.advantage - mean) / std;
        }
    }

    let mut work = policy.clone();
    let mut opt = adam.clone();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mb = hyper.minibatches.min(entries.len());
    let mut sum = LossReport::default();
    let mut count = 0.0;
    let mut initial_dev = 0.0;
    for epoch in 0..hyper.ppo_epochs {
        order.shuffle(rng);
        for k in 0..mb {
            let lo = k * order.len() / mb;
            let hi = (k + 1) * order.len() / mb;
            let batch: Vec<&BufferEntry> = order[lo..hi].iter().map(|i| &entries[*i]).collect();
            let mut grad = vec![0.0; work.param_count()];
            let rep = ppo_loss(&work, &batch, hyper, Some(&mut grad))?;
            if epoch == 0 && k == 0 {
                initial_dev = rep.initial_ratio_dev;
            }
            if hyper.weight_decay > 0.0 {
                for (g, p) in grad.iter_mut().zip(&work.params) {
                    *g += hyper.weight_decay * p;
                }
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !rep.total.is_finite() || !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch });
            }
            if norm > hyper.grad_clip_norm {
                let s = hyper.grad_clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            opt.step(&mut work.params, &grad, hyper.lr, hyper.adam_eps);
            sum.total += rep.total;
            sum.policy_loss += rep.policy_loss;
            sum.value_loss += rep.value_loss;
            sum.entropy += rep.entropy;
            sum.clip_fraction += rep.clip_fraction;
            sum.grad_norm += norm;
            count += 1.0;
        }
    }
    *policy = work;
    *adam = opt;
    Ok(LossReport {
        total: sum.total / count,
        policy_loss: sum.policy_loss / count,
        value_loss: sum.value_loss / count,
        entropy: sum.entropy / count,
        grad_norm: sum.grad_norm / count,
        clip_fraction: sum.clip_fraction / count,
        initial_ratio_dev: initial_dev,
    })
}
