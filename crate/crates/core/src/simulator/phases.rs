//! Phase machine, thrust directions, propellant and the closing mechanism.

use super::engine::SimState;
use super::{Phase, PropulsionConfig, Scenario, ThrustActions};
use crate::Vec3;

const TIME_EPS: f64 = 1e-9;

/// Thrust components `(F sinθ cosψ, F sinθ sinψ, F cosθ)` in an MU thrust frame.
/// `_mu` is accepted for symmetry with [`mu_thrust_world`].
pub fn thrust_vector(_mu: usize, psi_deg: f64, theta_deg: f64, force: f64) -> Vec3 {
    let (psi, theta) = (psi_deg.to_radians(), theta_deg.to_radians());
    Vec3::new(
        force * theta.sin() * psi.cos(),
        force * theta.sin() * psi.sin(),
        force * theta.cos(),
    )
}

/// World-frame thrust of MU `mu`. Its thrust frame is the world frame turned
/// by `90° * mu` about Z, with the frame's +Z axis along the deployment
/// direction (world -Z), so `ψ = 45°` points out of the MU's own quadrant.
pub fn mu_thrust_world(mu: usize, psi_deg: f64, theta_deg: f64, force: f64) -> Vec3 {
    let local = thrust_vector(mu, psi_deg, theta_deg, force);
    let mut f = Vec3::new(local.x, local.y, -local.z);
    // Exact quarter turns, so mirrored MUs get bitwise mirrored thrust.
    for _ in 0..mu % 4 {
        f = Vec3::new(-f.y, f.x, f.z);
    }
    f
}

/// Apply the phase transitions due at the current time.
pub fn advance_phase(state: &mut SimState, scenario: &Scenario) {
    let p = &scenario.phases;
    let t = state.time;
    if let Some(tc) = state.closing_started {
        if t >= tc + p.settle_duration - TIME_EPS {
            state.phase = Phase::Done;
            return;
        }
    } else if t >= p.max_time - TIME_EPS {
        state.phase = Phase::Done;
        return;
    }
    match state.phase {
        Phase::Deployment if t >= p.thrust_on_time - TIME_EPS => state.phase = Phase::Thrusting,
        Phase::Thrusting if scenario.switches.closing && state.com_distance() <= p.closing_distance => {
            state.phase = Phase::Closing;
            state.closing_started = Some(t);
            state.winch_locked = true;
        }
        Phase::Closing => {
            let tc = state.closing_started.unwrap_or(t);
            if state.locked_count() as usize == state.locked.len() || t >= tc + p.max_closing_time - TIME_EPS {
                state.phase = Phase::Settle;
            }
        }
        _ => {}
    }
}

/// Lock every open ring pair closer than `lock_distance`; returns the number
/// of locked pairs.
pub fn closing_step(state: &mut SimState, lock_distance: f64) -> u32 {
    if matches!(state.phase, Phase::Closing | Phase::Settle) {
        let n = state.ring.len();
        for k in 0..n {
            if !state.locked[k] {
                let (a, b) = (state.ring[k], state.ring[(k + 1) % n]);
                if (state.positions[b] - state.positions[a]).norm() < lock_distance {
                    state.locked[k] = true;
                }
            }
        }
    }
    state.locked_count()
}

/// Propellant rate for a given thrust (kg/s).
pub fn burn_rate(propulsion: &PropulsionConfig, thrust: f64) -> f64 {
    propulsion.burn_rate * (thrust / propulsion.nominal_thrust)
}

/// Burn one step of propellant if the thrusters may fire. Returns whether the
/// thrusters fire during this step.
pub fn fuel_step(state: &mut SimState, propulsion: &PropulsionConfig, actions: &ThrustActions, dt: f64) -> bool {
    if state.phase != Phase::Thrusting || state.thrust_cut || actions.thrust == 0.0 || dt == 0.0 {
        return false;
    }
    let rate = burn_rate(propulsion, actions.thrust);
    let next = actions.initial_mass - rate * ((state.burn_steps + 1) as f64 * dt);
    if next < propulsion.dry_mass {
        state.thrust_cut = true;
        return false;
    }
    state.burn_steps += 1;
    for (i, &node) in state.mu_nodes.iter().enumerate() {
        let dm = state.mu_mass[i] - next;
        state.expelled_momentum += state.velocities[node] * dm;
        state.expelled_angular_momentum += state.positions[node].cross(&state.velocities[node]) * dm;
        state.mu_mass[i] = next;
        state.masses[node] = state.mu_structure_mass[i] + next;
    }
    true
}

/// Fuel burned per MU after `burn_steps` steps of length `dt`.
pub fn fuel_consumed(propulsion: &PropulsionConfig, thrust: f64, burn_steps: u64, dt: f64) -> f64 {
    burn_rate(propulsion, thrust) * (burn_steps as f64 * dt)
}

#[cfg(test)]
mod tests {
    use nalgebra::{Rotation3, Vector3};

    use super::*;

    #[test]
    fn eq8_examples() {
        assert_eq!(thrust_vector(0, 10.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 3.0));
        let f = thrust_vector(1, 90.0, 45.0, 8.9);
        assert!(f.x.abs() < 1e-12);
        assert!((f.y - 6.2932).abs() < 1e-4 && (f.z - 6.2932).abs() < 1e-4);
        for (psi, theta) in [(0.0, 0.0), (33.0, 71.0), (270.0, 12.5), (84.7, 37.3)] {
            assert!((thrust_vector(0, psi, theta, 8.9).norm() - 8.9).abs() < 1e-12);
        }
    }

    #[test]
    fn world_thrust_points_forward_and_out_of_quadrant() {
        for mu in 0..4 {
            let f = mu_thrust_world(mu, 45.0, 30.0, 2.0);
            let (sx, sy) = crate::net_model::QUADRANT_SIGNS[mu];
            assert!(f.z < 0.0);
            assert!(f.x * sx > 0.0 && f.y * sy > 0.0, "mu {mu}: {f:?}");
            assert!((f.norm() - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn world_thrust_is_quarter_turn_symmetric() {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        for mu in 0..3 {
            let a = r * mu_thrust_world(mu, 62.0, 41.0, 8.9);
            let b = mu_thrust_world(mu + 1, 62.0, 41.0, 8.9);
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn proportional_burn_rate() {
        let p = PropulsionConfig::default();
        assert_eq!(fuel_consumed(&p, 8.9, 1000, 0.01), 0.0121 * 10.0);
        assert!((fuel_consumed(&p, 8.9, 1000, 0.01) - 0.121).abs() < 1e-15);
        assert!((fuel_consumed(&p, 4.45, 1000, 0.01) - 0.0605).abs() < 1e-15);
        assert_eq!(fuel_consumed(&p, 8.9, 1500, 0.01), 0.1815);
        assert_eq!(fuel_consumed(&p, 4.45, 1500, 0.01) * 2.0, fuel_consumed(&p, 8.9, 1500, 0.01));
        assert_eq!(fuel_consumed(&p, 8.9, 0, 0.01), 0.0);
    }
}
