//! Clipped-surrogate PPO for one-step episodes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{gaussian_log_prob, PolicyNet, ACTION_DIM};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Standardize advantages within each update.
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            epochs: 8,
            minibatch: 64,
            max_grad_norm: Some(0.5),
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::invalid("clip ratio must lie in (0, 1)"));
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return Err(Error::invalid("loss coefficients must be non-negative"));
        }
        if self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::invalid("epochs and mini-batch size must be positive"));
        }
        if let Some(g) = self.max_grad_norm {
            if !(g > 0.0) {
                return Err(Error::invalid("gradient-norm cap must be positive"));
            }
        }
        Ok(())
    }
}

/// One single-step episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: f64,
    /// Pre-squash action sample.
    pub raw: [f64; ACTION_DIM],
    /// Gaussian log-density of `raw` under the behaviour policy. The squash
    /// correction depends only on `raw`, so it cancels in the ratio.
    pub log_prob_old: f64,
    pub reward: f64,
}

/// Per-sample clipped surrogate `min(ρA, clip(ρ, 1-ε, 1+ε) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    /// Mean entropy of the pre-squash Gaussian.
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
    /// Estimate `mean(logp_old - logp_new)`.
    pub approx_kl: f64,
}

/// Loss over `batch` with fixed advantages, and its gradient in
/// [`PolicyNet::params`] layout.
pub fn loss_and_grad(net: &PolicyNet, batch: &[Transition], advantages: &[f64], cfg: &PpoConfig) -> (LossParts, Vec<f64>) {
    let n = batch.len() as f64;
    let na = net.actor.param_count();
    let mut grad = vec![0.0; net.param_count()];
    let mut parts = LossParts::default();
    let mut clipped = 0usize;
    let mut g_log_std = [0.0; ACTION_DIM];
    let log_std = net.forward(0.0).log_std;

    for (t, &adv) in batch.iter().zip(advantages) {
        let (mu, trace_a) = net.actor.forward(&[t.state]);
        let (v, trace_c) = net.critic.forward(&[t.state]);
        let means: [f64; ACTION_DIM] = mu.as_slice().try_into().expect("actor width");
        let logp = gaussian_log_prob(&t.raw, &means, &log_std);
        let ratio = (logp - t.log_prob_old).exp();
        let surrogate = clipped_surrogate(ratio, adv, cfg.clip);
        parts.policy -= surrogate / n;
        parts.approx_kl += (t.log_prob_old - logp) / n;
        if (ratio - 1.0).abs() > cfg.clip {
            clipped += 1;
        }

        // d(-surrogate/n)/d logp; zero when the clipped branch is selected
        let d_logp = if ratio * adv <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv {
            -adv * ratio / n
        } else {
            0.0
        };
        if d_logp != 0.0 {
            let mut d_mu = vec![0.0; ACTION_DIM];
            for k in 0..ACTION_DIM {
                let inv_var = (-2.0 * log_std[k]).exp();
                let diff = t.raw[k] - mu[k];
                d_mu[k] = d_logp * diff * inv_var;
                g_log_std[k] += d_logp * (diff * diff * inv_var - 1.0);
            }
            net.actor.backward(&trace_a, &d_mu, &mut grad[..na]);
        }

        let err = v[0] - t.reward;
        parts.value += err * err / n;
        let d_v = cfg.value_coef * 2.0 * err / n;
        net.critic.backward(&trace_c, &[d_v], &mut grad[na + ACTION_DIM..]);
    }

    let half_log_2pie = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    parts.entropy = net
        .log_std
        .iter()
        .map(|s| s.clamp(super::net::LOG_STD_MIN, super::net::LOG_STD_MAX) + half_log_2pie)
        .sum();
    for k in 0..ACTION_DIM {
        let s = net.log_std[k];
        // clamped coordinates carry no gradient
        let live = (super::net::LOG_STD_MIN..=super::net::LOG_STD_MAX).contains(&s);
        let g = g_log_std[k] - if live { cfg.entropy_coef } else { 0.0 };
        grad[na + k] = if live { g } else { 0.0 };
    }
    parts.clip_fraction = clipped as f64 / n;
    parts.total = parts.policy + cfg.value_coef * parts.value - cfg.entropy_coef * parts.entropy;
    (parts, grad)
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Averages over all mini-batch steps of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub steps: usize,
}

/// Run `epochs` passes of shuffled mini-batch Adam steps on `batch`.
/// Advantages are `R - V(s)` from the value network before the update.
pub fn ppo_update<R: Rng>(
    net: &mut PolicyNet,
    adam: &mut Adam,
    batch: &[Transition],
    cfg: &PpoConfig,
    lr: f64,
    rng: &mut R,
) -> Result<UpdateStats> {
    if batch.is_empty() {
        return Err(Error::invalid("PPO batch is empty"));
    }
    cfg.validate()?;
    let mut adv: Vec<f64> = batch.iter().map(|t| t.reward - net.forward(t.state).value).collect();
    if cfg.normalize_advantages && adv.len() > 1 {
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let sd = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64).sqrt();
        for a in &mut adv {
            *a = (*a - mean) / (sd + 1e-8);
        }
    }

    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let mb: Vec<Transition> = chunk.iter().map(|&i| batch[i].clone()).collect();
            let ma: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
            let (parts, mut grad) = loss_and_grad(net, &mb, &ma, cfg);
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical("PPO loss is not finite".into()));
            }
            if let Some(cap) = cfg.max_grad_norm {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cap {
                    grad.iter_mut().for_each(|g| *g *= cap / norm);
                }
            }
            let mut p = net.params();
            adam.step(&mut p, &grad, lr);
            net.set_params(&p);
            net.clamp_log_std();

            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            stats.clip_fraction += parts.clip_fraction;
            stats.approx_kl += parts.approx_kl;
            stats.steps += 1;
        }
    }
    let k = stats.steps as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
    net.check_finite()?;
    Ok(stats)
}
