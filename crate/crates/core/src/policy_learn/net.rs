//! Gaussian MLP policy with a separate value network and hand-written
//! backpropagation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ACTION_DIM: usize = 5;
pub const HIDDEN: usize = 64;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Two tanh hidden layers and a linear output. Weights are row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + w[i * x.len()..(i + 1) * x.len()].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            inputs,
            hidden,
            outputs,
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; outputs * hidden],
            b3: vec![0.0; outputs],
        }
    }

    /// Gaussian weights with variance `1 / fan_in`; the output layer is
    /// scaled by `out_gain`. Biases start at zero.
    pub fn random<R: Rng>(inputs: usize, hidden: usize, outputs: usize, out_gain: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(inputs, hidden, outputs);
        let mut fill = |w: &mut Vec<f64>, fan_in: usize, gain: f64| {
            let s = gain / (fan_in as f64).sqrt();
            for v in w.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = z * s;
            }
        };
        fill(&mut m.w1, inputs, 1.0);
        fill(&mut m.w2, hidden, 1.0);
        fill(&mut m.w3, hidden, out_gain);
        m
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len() + self.w3.len() + self.b3.len()
    }

    fn blocks(&self) -> [&Vec<f64>; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, MlpTrace) {
        let h1: Vec<f64> = affine(&self.w1, &self.b1, x).into_iter().map(f64::tanh).collect();
        let h2: Vec<f64> = affine(&self.w2, &self.b2, &h1).into_iter().map(f64::tanh).collect();
        let y = affine(&self.w3, &self.b3, &h2);
        (
            y,
            MlpTrace {
                x: x.to_vec(),
                h1,
                h2,
            },
        )
    }

    /// Accumulate parameter gradients for output gradient `dy` into `grad`
    /// (same layout as [`Mlp::param_count`]).
    pub fn backward(&self, trace: &MlpTrace, dy: &[f64], grad: &mut [f64]) {
        let (ni, nh, no) = (self.inputs, self.hidden, self.outputs);
        let (g_w1, rest) = grad.split_at_mut(nh * ni);
        let (g_b1, rest) = rest.split_at_mut(nh);
        let (g_w2, rest) = rest.split_at_mut(nh * nh);
        let (g_b2, rest) = rest.split_at_mut(nh);
        let (g_w3, g_b3) = rest.split_at_mut(no * nh);

        let mut dh2 = vec![0.0; nh];
        for o in 0..no {
            g_b3[o] += dy[o];
            for j in 0..nh {
                g_w3[o * nh + j] += dy[o] * trace.h2[j];
                dh2[j] += self.w3[o * nh + j] * dy[o];
            }
        }
        let dz2: Vec<f64> = dh2.iter().zip(&trace.h2).map(|(d, h)| d * (1.0 - h * h)).collect();
        let mut dh1 = vec![0.0; nh];
        for i in 0..nh {
            g_b2[i] += dz2[i];
            for j in 0..nh {
                g_w2[i * nh + j] += dz2[i] * trace.h1[j];
                dh1[j] += self.w2[i * nh + j] * dz2[i];
            }
        }
        for i in 0..nh {
            let dz1 = dh1[i] * (1.0 - trace.h1[i] * trace.h1[i]);
            g_b1[i] += dz1;
            for j in 0..ni {
                g_w1[i * ni + j] += dz1 * trace.x[j];
            }
        }
    }
}

/// Policy: MLP action means with a state-independent log-std vector, and a
/// value MLP of the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub actor: Mlp,
    pub log_std: Vec<f64>,
    pub critic: Mlp,
}

/// Output of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub means: [f64; ACTION_DIM],
    pub log_std: [f64; ACTION_DIM],
    pub value: f64,
}

impl PolicyNet {
    pub fn zeros() -> Self {
        Self {
            actor: Mlp::zeros(1, HIDDEN, ACTION_DIM),
            log_std: vec![0.0; ACTION_DIM],
            critic: Mlp::zeros(1, HIDDEN, 1),
        }
    }

    pub fn random<R: Rng>(initial_log_std: f64, rng: &mut R) -> Self {
        Self {
            actor: Mlp::random(1, HIDDEN, ACTION_DIM, 0.01, rng),
            log_std: vec![initial_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); ACTION_DIM],
            critic: Mlp::random(1, HIDDEN, 1, 1.0, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + ACTION_DIM + self.critic.param_count()
    }

    /// Flattened parameters: actor blocks, log-std, critic blocks.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for b in self.actor.blocks() {
            p.extend_from_slice(b);
        }
        p.extend_from_slice(&self.log_std);
        for b in self.critic.blocks() {
            p.extend_from_slice(b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut at = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let n = dst.len();
            dst.copy_from_slice(&p[at..at + n]);
            at += n;
        };
        for b in self.actor.blocks_mut() {
            take(b);
        }
        take(&mut self.log_std);
        for b in self.critic.blocks_mut() {
            take(b);
        }
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.params().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("policy parameters are not finite".into()))
        }
    }

    pub fn forward(&self, state: f64) -> PolicyOutput {
        let (mu, _) = self.actor.forward(&[state]);
        let (v, _) = self.critic.forward(&[state]);
        let mut means = [0.0; ACTION_DIM];
        means.copy_from_slice(&mu);
        let mut log_std = [0.0; ACTION_DIM];
        for (d, s) in log_std.iter_mut().zip(&self.log_std) {
            *d = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        PolicyOutput {
            means,
            log_std,
            value: v[0],
        }
    }
}

/// Gaussian log-density of pre-squash sample `raw`.
pub fn gaussian_log_prob(raw: &[f64; ACTION_DIM], means: &[f64; ACTION_DIM], log_std: &[f64; ACTION_DIM]) -> f64 {
    (0..ACTION_DIM)
        .map(|k| {
            let z = (raw[k] - means[k]) * (-log_std[k]).exp();
            -0.5 * z * z - log_std[k] - 0.5 * LN_2PI
        })
        .sum()
}

/// Box the squashed actions are mapped into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub lower: [f64; ACTION_DIM],
    pub upper: [f64; ACTION_DIM],
}

impl Default for ActionBounds {
    /// ψ1, ψ3 in [70, 90]°; ψ2, ψ4, θ in [35, 55]°.
    fn default() -> Self {
        Self {
            lower: [70.0, 35.0, 70.0, 35.0, 35.0],
            upper: [90.0, 55.0, 90.0, 55.0, 55.0],
        }
    }
}

impl ActionBounds {
    pub fn squash(&self, raw: &[f64; ACTION_DIM]) -> [f64; ACTION_DIM] {
        let mut a = [0.0; ACTION_DIM];
        for k in 0..ACTION_DIM {
            let t = raw[k].tanh();
            a[k] = (self.lower[k] + 0.5 * (t + 1.0) * (self.upper[k] - self.lower[k])).clamp(self.lower[k], self.upper[k]);
        }
        a
    }

    /// `log |d action / d raw|` summed over dimensions.
    pub fn log_jacobian(&self, raw: &[f64; ACTION_DIM]) -> f64 {
        (0..ACTION_DIM)
            .map(|k| {
                // log(1 - tanh²x) = 2 (ln 2 - x - softplus(-2x)), stable for large |x|
                let x = raw[k];
                let y = -2.0 * x;
                let softplus = y.max(0.0) + (-y.abs()).exp().ln_1p();
                let log_dtanh = 2.0 * (std::f64::consts::LN_2 - x - softplus);
                (0.5 * (self.upper[k] - self.lower[k])).ln() + log_dtanh
            })
            .sum()
    }

    pub fn contains(&self, a: &[f64; ACTION_DIM]) -> bool {
        (0..ACTION_DIM).all(|k| a[k] >= self.lower[k] && a[k] <= self.upper[k])
    }
}

/// One sampled action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    /// Pre-squash Gaussian sample.
    pub raw: [f64; ACTION_DIM],
    pub action: [f64; ACTION_DIM],
    /// Log-density of `action`, including the squash correction.
    pub log_prob: f64,
}

/// Draw an action for normalized state `state`.
pub fn sample_action<R: Rng>(net: &PolicyNet, bounds: &ActionBounds, state: f64, rng: &mut R) -> ActionSample {
    let out = net.forward(state);
    let mut raw = [0.0; ACTION_DIM];
    for k in 0..ACTION_DIM {
        let z: f64 = StandardNormal.sample(rng);
        raw[k] = out.means[k] + out.log_std[k].exp() * z;
    }
    ActionSample {
        raw,
        action: bounds.squash(&raw),
        log_prob: gaussian_log_prob(&raw, &out.means, &out.log_std) - bounds.log_jacobian(&raw),
    }
}

/// Deterministic evaluation action: the squashed mean.
pub fn mean_action(net: &PolicyNet, bounds: &ActionBounds, state: f64) -> [f64; ACTION_DIM] {
    bounds.squash(&net.forward(state).means)
}
