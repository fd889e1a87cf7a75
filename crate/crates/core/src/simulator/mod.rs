//! Capture-episode time stepping: deployment, thrusting, closing and settle.

mod engine;
mod phases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::capture_metrics::classify_success;
use crate::contact::ContactParams;
use crate::error::{Error, Result};
use crate::net_model::{NetConfig, TetherSpec};
use crate::Vec3;

pub use engine::{accumulate_spring_forces, integrate_points, ForceSum, SimState, Simulator, Spring};
pub use phases::{advance_phase, burn_rate, closing_step, fuel_consumed, fuel_step, mu_thrust_world, thrust_vector};

/// Ejection of the stowed net from the chaser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployConfig {
    /// MU ejection speed v_e (m/s).
    pub ejection_speed: f64,
    /// Shooting angle from the deployment axis (deg).
    pub shooting_angle_deg: f64,
    /// Gap between the chaser face and the stowed net (m).
    pub stow_gap: f64,
}

impl Default for DeployConfig {
    fn default() -> Self {
        Self {
            ejection_speed: 2.5,
            shooting_angle_deg: 36.87,
            stow_gap: 0.1,
        }
    }
}

/// Free-floating chaser carrying the winch at the center of its -Z face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaserConfig {
    pub mass: f64,
    /// Cube side (m).
    pub side: f64,
    /// Tether tension the free winch pays out against (N).
    pub spool_tension: f64,
}

impl Default for ChaserConfig {
    fn default() -> Self {
        Self {
            mass: 1600.0,
            side: 1.5,
            spool_tension: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetConfig {
    pub radius: f64,
    pub length: f64,
    pub mass: f64,
    pub x_offset: f64,
    pub z_nominal: f64,
    /// Half-range of the uniform Z noise drawn from the seed (m).
    pub z_noise: f64,
    /// Overrides of the geometric reference constants used by the capture index.
    pub reference_volume: Option<f64>,
    pub reference_area: Option<f64>,
    pub reference_length: Option<f64>,
}

impl TargetConfig {
    pub fn upper_stage() -> Self {
        Self {
            radius: 1.95,
            length: 11.0,
            mass: 9000.0,
            x_offset: 9.0,
            z_nominal: -50.0,
            z_noise: 5.0,
            reference_volume: Some(125.3),
            reference_area: Some(159.9),
            reference_length: Some(1.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub dt: f64,
    pub thrust_on_time: f64,
    /// Net-to-target COM distance that triggers closing (m).
    pub closing_distance: f64,
    pub settle_duration: f64,
    /// Closing gives way to Settle after this long even with open pairs (s).
    pub max_closing_time: f64,
    /// Episode length when closing never triggers (s).
    pub max_time: f64,
    pub lock_distance: f64,
    pub closing_force: f64,
    pub lock_stiffness: f64,
    pub lock_damping_ratio: f64,
    /// Averaging window of the settled capture index (s).
    pub cqi_window: f64,
    pub sample_interval: f64,
    pub divergence_speed: f64,
    /// Fraction of the explicit stability limit used for internal substeps.
    pub substep_safety: f64,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            thrust_on_time: 15.0,
            closing_distance: 2.5,
            settle_duration: 20.0,
            max_closing_time: 10.0,
            max_time: 60.0,
            lock_distance: 2.0,
            closing_force: 5.0,
            lock_stiffness: 2000.0,
            lock_damping_ratio: 0.5,
            cqi_window: 2.0,
            sample_interval: 0.1,
            divergence_speed: 1e3,
            substep_safety: 0.8,
        }
    }
}

/// Thrust action variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThrustActions {
    /// Per-MU thrust azimuth in the MU's quadrant frame (deg).
    pub psi_deg: [f64; 4],
    /// Common thrust polar angle from the deployment axis (deg).
    pub theta_deg: f64,
    /// Thrust magnitude per MU (N).
    pub thrust: f64,
    /// Initial MU mass including propellant (kg).
    pub initial_mass: f64,
}

impl Default for ThrustActions {
    fn default() -> Self {
        Self {
            psi_deg: [84.7, 40.8, 86.0, 43.2],
            theta_deg: 37.3,
            thrust: 8.9,
            initial_mass: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropulsionConfig {
    /// Propellant rate at the nominal thrust (kg/s).
    pub burn_rate: f64,
    pub nominal_thrust: f64,
    /// MU mass below which the thruster shuts off (kg).
    pub dry_mass: f64,
}

impl Default for PropulsionConfig {
    fn default() -> Self {
        Self {
            burn_rate: 0.0121,
            nominal_thrust: 8.9,
            dry_mass: 1.5,
        }
    }
}

/// Subsystems that can be switched off for controlled experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    pub thrust: bool,
    pub contact: bool,
    pub closing: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self {
            thrust: true,
            contact: true,
            closing: true,
        }
    }
}

/// One capture problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub net: NetConfig,
    pub deploy: DeployConfig,
    pub tether: TetherSpec,
    pub chaser: ChaserConfig,
    pub target: TargetConfig,
    pub contact: ContactParams,
    pub phases: PhaseConfig,
    pub actions: ThrustActions,
    pub propulsion: PropulsionConfig,
    pub switches: Switches,
    pub seed: u64,
}

impl Scenario {
    /// Full-size net against the upper-stage target.
    pub fn paper() -> Self {
        Self {
            net: NetConfig::paper(),
            deploy: DeployConfig::default(),
            tether: TetherSpec::paper(),
            chaser: ChaserConfig::default(),
            target: TargetConfig::upper_stage(),
            contact: ContactParams::default(),
            phases: PhaseConfig::default(),
            actions: ThrustActions::default(),
            propulsion: PropulsionConfig::default(),
            switches: Switches::default(),
            seed: 0,
        }
    }

    /// Reduced 8x8 net with soft threads and a scaled cylinder target.
    #[allow(clippy::approx_constant)]
    pub fn desk() -> Self {
        Self {
            net: NetConfig {
                mesh_count: 8,
                side_length: 7.0,
                mesh_length: 1.0,
                thread_radius: 0.0011,
                thread_density: 1390.0,
                youngs_modulus: 8.0e8,
                damping_ratio: 0.106,
                knot_mass: 0.05,
                corner_thread_length: 1.4142,
                corner_thread_radius: 0.0011,
                mu_radius: 0.0605,
                mu_mass: 2.5,
                stowed_side_length: 1.1,
            },
            deploy: DeployConfig {
                ejection_speed: 1.0,
                shooting_angle_deg: 36.87,
                stow_gap: 0.1,
            },
            tether: TetherSpec {
                density: 1390.0,
                youngs_modulus: 4.0e7,
                radius: 0.002,
                length: 40.0,
                damping_ratio: 0.106,
                segment_count: 10,
            },
            chaser: ChaserConfig::default(),
            target: TargetConfig {
                radius: 0.65,
                length: 3.6,
                mass: 4000.0,
                x_offset: 3.0,
                z_nominal: -30.0,
                z_noise: 5.0,
                reference_volume: None,
                reference_area: None,
                reference_length: None,
            },
            contact: ContactParams {
                stiffness: 5e3,
                damping: 5.0,
                friction: 0.3,
                regularization_speed: 0.01,
                knot_radius: 0.05,
            },
            phases: PhaseConfig {
                closing_distance: 1.0,
                lock_distance: 0.7,
                closing_force: 5.0,
                lock_stiffness: 500.0,
                ..PhaseConfig::default()
            },
            actions: ThrustActions::default(),
            propulsion: PropulsionConfig::default(),
            switches: Switches::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.tether.validate()?;
        self.contact.validate()?;
        let p = &self.phases;
        let positive = [
            ("dt", p.dt),
            ("settle_duration", p.settle_duration),
            ("max_time", p.max_time),
            ("lock_distance", p.lock_distance),
            ("cqi_window", p.cqi_window),
            ("sample_interval", p.sample_interval),
            ("divergence_speed", p.divergence_speed),
            ("substep_safety", p.substep_safety),
            ("max_closing_time", p.max_closing_time),
            ("ejection_speed", self.deploy.ejection_speed),
            ("stow_gap", self.deploy.stow_gap),
            ("chaser mass", self.chaser.mass),
            ("chaser side", self.chaser.side),
            ("spool_tension", self.chaser.spool_tension),
            ("target radius", self.target.radius),
            ("target length", self.target.length),
            ("target mass", self.target.mass),
            ("burn_rate", self.propulsion.burn_rate),
            ("nominal_thrust", self.propulsion.nominal_thrust),
            ("dry_mass", self.propulsion.dry_mass),
            ("initial_mass", self.actions.initial_mass),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("thrust_on_time", p.thrust_on_time),
            ("closing_distance", p.closing_distance),
            ("closing_force", p.closing_force),
            ("lock_stiffness", p.lock_stiffness),
            ("lock_damping_ratio", p.lock_damping_ratio),
            ("thrust", self.actions.thrust),
            ("z_noise", self.target.z_noise),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if p.cqi_window > p.settle_duration || p.cqi_window > p.max_time {
            return Err(Error::invalid("cqi_window must fit inside the settle duration and max_time"));
        }
        if !(0.0..90.0).contains(&self.deploy.shooting_angle_deg) {
            return Err(Error::invalid("shooting_angle_deg must lie in [0, 90)"));
        }
        if self.actions.initial_mass < self.propulsion.dry_mass {
            return Err(Error::invalid(format!(
                "initial MU mass {} is below the dry mass {}",
                self.actions.initial_mass, self.propulsion.dry_mass
            )));
        }
        let angles = self.actions.psi_deg.iter().chain(std::iter::once(&self.actions.theta_deg));
        if angles.into_iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("thrust angles must be finite"));
        }
        if self.target.z_nominal + self.target.z_noise >= 0.0 {
            return Err(Error::invalid("target must lie on the deployment side (z < 0)"));
        }
        for v in [
            self.target.reference_volume,
            self.target.reference_area,
            self.target.reference_length,
        ]
        .into_iter()
        .flatten()
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("target reference constants must be positive"));
            }
        }
        Ok(())
    }

    /// Target Z position for this scenario's seed.
    pub fn target_z(&self) -> f64 {
        if self.target.z_noise == 0.0 {
            return self.target.z_nominal;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        self.target.z_nominal + rng.random_range(-self.target.z_noise..=self.target.z_noise)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Deployment,
    Thrusting,
    Closing,
    Settle,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Deployment => "deployment",
            Phase::Thrusting => "thrusting",
            Phase::Closing => "closing",
            Phase::Settle => "settle",
            Phase::Done => "done",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub time: f64,
    pub phase: Phase,
    pub net_com: Vec3,
    pub mu_positions: [Vec3; 4],
    pub target_position: Vec3,
    /// Target orientation quaternion (w, i, j, k).
    pub target_orientation: [f64; 4],
    pub cqi: f64,
    /// Net node positions (knots then MUs); empty unless requested.
    pub nodes: Vec<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// Settled capture index; `+inf` after divergence.
    pub settled_cqi: f64,
    pub locked_pairs: u32,
    /// Propellant burned per MU (kg).
    pub fuel_consumed: f64,
    pub final_mu_mass: f64,
    pub sim_time: f64,
    pub success: bool,
    pub diverged: bool,
    pub closing_time: Option<f64>,
    pub thrust_duration: f64,
    pub target_z: f64,
    pub max_penetration: f64,
    pub trajectory: Vec<TrajectorySample>,
}

impl EpisodeResult {
    pub(crate) fn finish(mut self) -> Self {
        self.success = !self.diverged && classify_success(self.settled_cqi, self.locked_pairs, self.final_mu_mass);
        self
    }
}

/// What to record while running an episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Recording {
    #[default]
    None,
    /// Summary samples every `sample_interval`.
    Summary,
    /// Summary samples plus every net node position.
    Nodes,
}

/// Run one episode to completion without recording a trajectory.
pub fn run_episode(scenario: &Scenario) -> Result<EpisodeResult> {
    run_episode_with(scenario, Recording::None)
}

pub fn run_episode_with(scenario: &Scenario, recording: Recording) -> Result<EpisodeResult> {
    let mut sim = Simulator::new(scenario)?;
    sim.set_recording(recording);
    sim.run()
}
