//! Simulation and learning core for maneuverable tether-net debris capture.
//!
//! The crate is organized bottom-up:
//!
//! * [`net_model`] builds the lumped-mass net and its thread constitutive laws.
//! * [`contact`] resolves net-node contact against a rigid capped cylinder.
//! * [`simulator`] time-steps a full capture episode.
//! * [`capture_metrics`] computes convex hulls and the capture quality index.
//! * [`bayes_opt`] searches thrust actions with constrained Bayesian optimization.
//! * [`policy_learn`] trains a Gaussian MLP policy with PPO.
//! * [`config`] and [`records`] define the on-disk formats.

pub mod bayes_opt;
pub mod capture_metrics;
pub mod config;
pub mod contact;
mod error;
pub mod net_model;
pub mod policy_learn;
pub mod records;
pub mod rigid_body;
pub mod simulator;

pub use error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;

pub use capture_metrics::{classify_success, convex_hull_3d, cqi, HullSummary};
pub use contact::{ContactParams, TargetBody};
pub use net_model::{build_topology, NetConfig, NetTopology, TetherSpec};
pub use simulator::{run_episode, EpisodeResult, Scenario};
pub use config::ScenarioFile;
pub use records::{ResultRecord, SCHEMA_VERSION};
