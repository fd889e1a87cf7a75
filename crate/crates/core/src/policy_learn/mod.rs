//! One-step reinforcement learning of thrust angles from the target offset.
//!
//! Each episode observes the target Z position, picks the five thrust angles
//! once, runs a full capture, and receives a terminal reward.

mod net;
mod ppo;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capture_metrics::SuccessThresholds;
use crate::error::{Error, Result};
use crate::simulator::{run_episode, EpisodeResult, Scenario, ThrustActions};

pub use net::{
    gaussian_log_prob, mean_action, sample_action, ActionBounds, ActionSample, Mlp, PolicyNet, PolicyOutput, ACTION_DIM,
    HIDDEN, LOG_STD_MAX, LOG_STD_MIN,
};
pub use ppo::{clipped_surrogate, loss_and_grad, ppo_update, Adam, LossParts, PpoConfig, Transition, UpdateStats};

/// Deployment plus settle time subtracted from the episode time in the fuel
/// term (s).
pub const NON_THRUST_TIME: f64 = 35.0;
/// Safety factor on the fuel estimate.
pub const FUEL_SAFETY: f64 = 1.2;
/// Bonus for meeting every constraint.
pub const SUCCESS_BONUS: f64 = 10.0;
/// Capture index assumed for a diverged episode.
pub const DIVERGED_CQI: f64 = 1e3;

/// State and action spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub bounds: ActionBounds,
}

impl MdpSpec {
    /// Target Z range `nominal ± noise` of the scenario.
    pub fn for_scenario(s: &Scenario) -> Self {
        Self {
            z_min: s.target.z_nominal - s.target.z_noise,
            z_max: s.target.z_nominal + s.target.z_noise,
            bounds: ActionBounds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z_min.is_finite() && self.z_max.is_finite() && self.z_min <= self.z_max) {
            return Err(Error::invalid("state range must be finite and ordered"));
        }
        for k in 0..ACTION_DIM {
            if !(self.bounds.lower[k] < self.bounds.upper[k]) {
                return Err(Error::invalid("action bounds must have positive width"));
            }
        }
        Ok(())
    }

    /// Map a Z position into [-1, 1].
    pub fn normalize(&self, z: f64) -> f64 {
        if self.z_max == self.z_min {
            return 0.0;
        }
        (2.0 * (z - self.z_min) / (self.z_max - self.z_min) - 1.0).clamp(-1.0, 1.0)
    }
}

/// Reward terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub fuel: f64,
    pub cqi: f64,
    pub locked_pairs: f64,
    pub mass: f64,
    pub end: f64,
    pub total: f64,
}

fn log_penalty(gap: f64) -> f64 {
    -(gap * gap + 1.0).ln()
}

/// Terminal reward of one episode. A diverged result is scored as a miss with
/// capture index [`DIVERGED_CQI`].
pub fn reward(result: &EpisodeResult, m0: f64, burn_rate: f64) -> RewardBreakdown {
    let th = SuccessThresholds::default();
    let cqi_value = if result.diverged || !result.settled_cqi.is_finite() {
        DIVERGED_CQI
    } else {
        result.settled_cqi
    };
    let fuel = m0 - burn_rate * FUEL_SAFETY * (result.sim_time - NON_THRUST_TIME);
    let cqi = if cqi_value > th.max_cqi { log_penalty(cqi_value - th.max_cqi) } else { 0.0 };
    let nl = result.locked_pairs as f64;
    let locked_pairs = if nl < th.min_locked_pairs as f64 {
        log_penalty(nl - th.min_locked_pairs as f64)
    } else {
        0.0
    };
    let mass = if result.final_mu_mass < th.min_final_mass {
        log_penalty(result.final_mu_mass - th.min_final_mass)
    } else {
        0.0
    };
    let met = !result.diverged
        && th.cqi_ok(cqi_value)
        && th.locks_ok(result.locked_pairs)
        && th.mass_ok(result.final_mu_mass);
    let end = if met { SUCCESS_BONUS } else { 0.0 };
    RewardBreakdown {
        fuel,
        cqi,
        locked_pairs,
        mass,
        end,
        total: fuel + cqi + locked_pairs + mass + end,
    }
}

/// Learning rate from `from_fraction` of the total episodes onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrStage {
    pub from_fraction: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    /// Episodes rolled out per update.
    pub batch_episodes: usize,
    pub total_episodes: usize,
    pub lr_schedule: Vec<LrStage>,
    pub ppo: PpoConfig,
    pub burn_rate: f64,
    pub initial_mass: f64,
    pub initial_log_std: f64,
    pub short_window: usize,
    pub long_window: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    /// Stage boundaries at 1600 and 9600 of 11712 episodes.
    fn default() -> Self {
        Self {
            batch_episodes: 32,
            total_episodes: 11_712,
            lr_schedule: vec![
                LrStage {
                    from_fraction: 0.0,
                    lr: 1e-4,
                },
                LrStage {
                    from_fraction: 1600.0 / 11_712.0,
                    lr: 1e-3,
                },
                LrStage {
                    from_fraction: 9600.0 / 11_712.0,
                    lr: 5e-4,
                },
            ],
            ppo: PpoConfig::default(),
            burn_rate: 0.0121,
            initial_mass: 2.5,
            initial_log_std: -0.5,
            short_window: 32,
            long_window: 192,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        if self.batch_episodes == 0 || self.total_episodes == 0 {
            return Err(Error::invalid("batch and total episode counts must be positive"));
        }
        if self.short_window == 0 || self.long_window == 0 {
            return Err(Error::invalid("averaging windows must be positive"));
        }
        if self.lr_schedule.is_empty() || self.lr_schedule[0].from_fraction != 0.0 {
            return Err(Error::invalid("learning-rate schedule must start at fraction 0"));
        }
        let mut last = -1.0;
        for s in &self.lr_schedule {
            if !(s.lr > 0.0 && s.lr.is_finite()) || s.from_fraction <= last || s.from_fraction >= 1.0 {
                return Err(Error::invalid("learning-rate stages need positive rates and increasing fractions in [0, 1)"));
            }
            last = s.from_fraction;
        }
        if !(self.burn_rate > 0.0 && self.initial_mass > 0.0) {
            return Err(Error::invalid("burn rate and initial mass must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, episodes_done: usize) -> f64 {
        let f = episodes_done as f64 / self.total_episodes as f64;
        self.lr_schedule.iter().rev().find(|s| f >= s.from_fraction).map_or(self.lr_schedule[0].lr, |s| s.lr)
    }
}

/// Environment: target Z and thrust angles in, episode result out.
pub trait Environment: Sync {
    fn run(&self, z: f64, angles: &[f64; ACTION_DIM]) -> EpisodeResult;
}

impl<F: Fn(f64, &[f64; ACTION_DIM]) -> EpisodeResult + Sync> Environment for F {
    fn run(&self, z: f64, angles: &[f64; ACTION_DIM]) -> EpisodeResult {
        self(z, angles)
    }
}

/// Runs the physics scenario with the target placed at `z` (no noise).
#[derive(Debug, Clone)]
pub struct ScenarioEnv {
    pub scenario: Scenario,
}

impl ScenarioEnv {
    pub fn new(scenario: Scenario) -> Self {
        Self { scenario }
    }

    pub fn actions(&self, angles: &[f64; ACTION_DIM]) -> ThrustActions {
        ThrustActions {
            psi_deg: [angles[0], angles[1], angles[2], angles[3]],
            theta_deg: angles[4],
            ..self.scenario.actions.clone()
        }
    }
}

impl Environment for ScenarioEnv {
    fn run(&self, z: f64, angles: &[f64; ACTION_DIM]) -> EpisodeResult {
        let mut s = self.scenario.clone();
        s.target.z_nominal = z;
        s.target.z_noise = 0.0;
        s.actions = self.actions(angles);
        run_episode(&s).unwrap_or_else(|_| diverged_result(&s, z))
    }
}

/// Placeholder result for an episode the simulator rejected or lost.
pub fn diverged_result(s: &Scenario, z: f64) -> EpisodeResult {
    EpisodeResult {
        settled_cqi: f64::INFINITY,
        locked_pairs: 0,
        fuel_consumed: 0.0,
        final_mu_mass: s.actions.initial_mass,
        sim_time: s.phases.max_time,
        success: false,
        diverged: true,
        closing_time: None,
        thrust_duration: 0.0,
        target_z: z,
        max_penetration: 0.0,
        trajectory: Vec::new(),
    }
}

/// One row of the training curve, written once per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub batch: usize,
    pub episodes: usize,
    pub lr: f64,
    pub mean_reward: f64,
    pub avg_short: f64,
    pub avg_long: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

pub const CHECKPOINT_FORMAT: &str = "tethernet-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized policy with enough context to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub mdp: MdpSpec,
    pub episodes: usize,
    /// Long-window average reward when the snapshot was taken.
    pub avg_reward: f64,
    pub net: PolicyNet,
}

impl Checkpoint {
    pub fn new(net: PolicyNet, mdp: MdpSpec, episodes: usize, avg_reward: f64) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            mdp,
            episodes,
            avg_reward,
            net,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        if c.net.actor.param_count() + ACTION_DIM + c.net.critic.param_count() != PolicyNet::zeros().param_count()
            || c.net.log_std.len() != ACTION_DIM
        {
            return Err(Error::invalid("checkpoint network has the wrong shape"));
        }
        c.net.check_finite()?;
        c.mdp.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub curve: Vec<CurveRow>,
    /// Snapshot at the best long-window average.
    pub best: Checkpoint,
    pub last: Checkpoint,
}

/// Train from a fresh network seeded by `cfg.seed`.
pub fn train<E: Environment>(env: &E, mdp: &MdpSpec, cfg: &RlConfig) -> Result<TrainReport> {
    train_observed(env, mdp, cfg, |_, _| {})
}

/// [`train`] with a callback after every batch.
pub fn train_observed<E: Environment>(
    env: &E,
    mdp: &MdpSpec,
    cfg: &RlConfig,
    on_batch: impl FnMut(&CurveRow, &PolicyNet),
) -> Result<TrainReport> {
    let (net, mut rng) = initial_policy(cfg);
    train_from(env, mdp, cfg, net, &mut rng, on_batch)
}

/// The untrained network for `cfg.seed`, and the generator state training
/// continues from.
pub fn initial_policy(cfg: &RlConfig) -> (PolicyNet, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = PolicyNet::random(cfg.initial_log_std, &mut rng);
    (net, rng)
}

/// Training loop. `on_batch` sees each curve row and the updated network.
pub fn train_from<E: Environment, R: Rng>(
    env: &E,
    mdp: &MdpSpec,
    cfg: &RlConfig,
    mut net: PolicyNet,
    rng: &mut R,
    mut on_batch: impl FnMut(&CurveRow, &PolicyNet),
) -> Result<TrainReport> {
    cfg.validate()?;
    mdp.validate()?;
    net.check_finite()?;
    let th = SuccessThresholds::default();
    let mut adam = Adam::new(net.param_count());
    let mut history: Vec<f64> = Vec::with_capacity(cfg.total_episodes);
    let mut curve = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut done = 0;

    while done < cfg.total_episodes {
        let n = cfg.batch_episodes.min(cfg.total_episodes - done);
        let lr = cfg.learning_rate(done);
        let draws: Vec<(f64, f64, ActionSample)> = (0..n)
            .map(|_| {
                let z = rng.random_range(mdp.z_min..=mdp.z_max);
                let s = mdp.normalize(z);
                (z, s, sample_action(&net, &mdp.bounds, s, rng))
            })
            .collect();
        let results: Vec<EpisodeResult> = draws.par_iter().map(|(z, _, a)| env.run(*z, &a.action)).collect();

        let mut batch = Vec::with_capacity(n);
        let mut successes = 0;
        for ((_, s, a), r) in draws.iter().zip(&results) {
            let rw = reward(r, cfg.initial_mass, cfg.burn_rate);
            if !r.diverged && th.is_success(r.settled_cqi, r.locked_pairs, r.final_mu_mass) {
                successes += 1;
            }
            history.push(rw.total);
            let out = net.forward(*s);
            batch.push(Transition {
                state: *s,
                raw: a.raw,
                log_prob_old: gaussian_log_prob(&a.raw, &out.means, &out.log_std),
                reward: rw.total,
            });
        }
        let stats = ppo_update(&mut net, &mut adam, &batch, &cfg.ppo, lr, rng)?;
        done += n;

        let trailing = |w: usize| {
            let tail = &history[history.len().saturating_sub(w)..];
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        let row = CurveRow {
            batch: curve.len(),
            episodes: done,
            lr,
            mean_reward: batch.iter().map(|t| t.reward).sum::<f64>() / n as f64,
            avg_short: trailing(cfg.short_window),
            avg_long: trailing(cfg.long_window),
            success_rate: successes as f64 / n as f64,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            approx_kl: stats.approx_kl,
        };
        on_batch(&row, &net);
        let full_window = history.len() >= cfg.long_window || done == cfg.total_episodes;
        if full_window && best.as_ref().is_none_or(|b| row.avg_long > b.avg_reward) {
            best = Some(Checkpoint::new(net.clone(), mdp.clone(), done, row.avg_long));
        }
        curve.push(row);
    }

    let last_avg = curve.last().map_or(f64::NAN, |r| r.avg_long);
    let last = Checkpoint::new(net, mdp.clone(), done, last_avg);
    Ok(TrainReport {
        curve,
        best: best.unwrap_or_else(|| last.clone()),
        last,
    })
}

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub z: f64,
    pub action: [f64; ACTION_DIM],
    pub cqi: f64,
    pub locked_pairs: u32,
    pub final_mass: f64,
    pub fuel: f64,
    pub reward: f64,
    pub success: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: Vec<EvalSample>,
    /// `None` when no samples were drawn.
    pub success_rate: Option<f64>,
    pub mean_reward: Option<f64>,
    /// Median target Z over successful samples.
    pub median_success_z: Option<f64>,
}

/// Target positions for evaluation, uniform over the state range.
pub fn evaluation_offsets(mdp: &MdpSpec, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(mdp.z_min..=mdp.z_max)).collect()
}

/// Evaluate an arbitrary Z-to-angles policy on `n` seeded offsets.
pub fn evaluate_with<E: Environment>(
    env: &E,
    mdp: &MdpSpec,
    policy: impl Fn(f64) -> [f64; ACTION_DIM] + Sync,
    n: usize,
    seed: u64,
    m0: f64,
    burn_rate: f64,
) -> EvalReport {
    let th = SuccessThresholds::default();
    let samples: Vec<EvalSample> = evaluation_offsets(mdp, n, seed)
        .into_par_iter()
        .map(|z| {
            let action = policy(z);
            let r = env.run(z, &action);
            EvalSample {
                z,
                action,
                cqi: r.settled_cqi,
                locked_pairs: r.locked_pairs,
                final_mass: r.final_mu_mass,
                fuel: r.fuel_consumed,
                reward: reward(&r, m0, burn_rate).total,
                success: !r.diverged && th.is_success(r.settled_cqi, r.locked_pairs, r.final_mu_mass),
                diverged: r.diverged,
            }
        })
        .collect();
    summarize(samples)
}

/// Evaluate the network's mean actions.
pub fn evaluate<E: Environment>(env: &E, ckpt: &Checkpoint, n: usize, seed: u64, m0: f64, burn_rate: f64) -> EvalReport {
    let mdp = &ckpt.mdp;
    evaluate_with(env, mdp, |z| mean_action(&ckpt.net, &mdp.bounds, mdp.normalize(z)), n, seed, m0, burn_rate)
}

fn summarize(samples: Vec<EvalSample>) -> EvalReport {
    if samples.is_empty() {
        return EvalReport {
            samples,
            success_rate: None,
            mean_reward: None,
            median_success_z: None,
        };
    }
    let n = samples.len() as f64;
    let mut zs: Vec<f64> = samples.iter().filter(|s| s.success).map(|s| s.z).collect();
    zs.sort_by(f64::total_cmp);
    let median = match zs.len() {
        0 => None,
        k if k % 2 == 1 => Some(zs[k / 2]),
        k => Some(0.5 * (zs[k / 2 - 1] + zs[k / 2])),
    };
    EvalReport {
        success_rate: Some(samples.iter().filter(|s| s.success).count() as f64 / n),
        mean_reward: Some(samples.iter().map(|s| s.reward).sum::<f64>() / n),
        median_success_z: median,
        samples,
    }
}
