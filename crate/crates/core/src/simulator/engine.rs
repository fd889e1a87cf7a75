use std::ops::{AddAssign, SubAssign};

use serde::{Deserialize, Serialize};

use super::phases::{advance_phase, closing_step, fuel_consumed, fuel_step, mu_thrust_world};
use super::{EpisodeResult, Phase, Recording, Scenario, TrajectorySample};
use crate::capture_metrics::{convex_hull_3d, cqi, settled_cqi, CqiReference, CqiSample};
use crate::contact::{detect_contact, friction_force, normal_force, TargetBody};
use crate::error::Result;
use crate::net_model::{build_topology, ejection_velocities, tension_along, AxialElement, NetTopology};
use crate::rigid_body::{cube_inertia, RigidBody};
use crate::Vec3;

/// Mutable dynamic state of one episode.
///
/// Node layout: knots, the 4 MUs, an optional tether hub, then the interior
/// tether nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub time: f64,
    pub step: u64,
    pub phase: Phase,
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
    /// Number of net nodes (knots + MUs) at the front of the node arrays.
    pub net_nodes: usize,
    pub mu_nodes: [usize; 4],
    /// MU mass including propellant (kg).
    pub mu_mass: [f64; 4],
    /// Lumped thread mass carried by each MU node (kg).
    pub mu_structure_mass: [f64; 4],
    pub burn_steps: u64,
    pub thrust_cut: bool,
    pub target: TargetBody,
    pub chaser: RigidBody,
    pub winch_locked: bool,
    pub paid_out: f64,
    /// Closing attachment nodes in ring order; pair `k` joins `ring[k]` and `ring[k + 1]`.
    pub ring: Vec<usize>,
    pub locked: Vec<bool>,
    pub closing_started: Option<f64>,
    pub cqi_history: Vec<CqiSample>,
    /// Momentum carried away by burned propellant.
    pub expelled_momentum: Vec3,
    pub expelled_angular_momentum: Vec3,
    /// Accumulated thrust impulse over all MUs (N s).
    pub thrust_impulse: Vec3,
    pub diverged: bool,
    pub max_penetration: f64,
}

impl SimState {
    pub fn net_com(&self) -> Vec3 {
        let (sum, mass) = (0..self.net_nodes).fold((Vec3::zeros(), 0.0), |(s, m), j| {
            (s + self.positions[j] * self.masses[j], m + self.masses[j])
        });
        sum / mass
    }

    /// Distance between the net and target centers of mass.
    pub fn com_distance(&self) -> f64 {
        (self.net_com() - self.target.center()).norm()
    }

    pub fn locked_count(&self) -> u32 {
        self.locked.iter().filter(|&&l| l).count() as u32
    }

    /// Linear momentum of every node and both rigid bodies.
    pub fn linear_momentum(&self) -> Vec3 {
        self.velocities
            .iter()
            .zip(&self.masses)
            .fold(Vec3::zeros(), |acc, (v, m)| acc + v * *m)
            + self.chaser.momentum
            + self.target.body.momentum
    }

    /// Angular momentum about the world origin.
    pub fn angular_momentum(&self) -> Vec3 {
        self.positions
            .iter()
            .zip(&self.velocities)
            .zip(&self.masses)
            .fold(Vec3::zeros(), |acc, ((x, v), m)| acc + x.cross(v) * *m)
            + self.chaser.total_angular_momentum()
            + self.target.body.total_angular_momentum()
    }

    pub fn fuel_consumed(&self, scenario: &Scenario) -> f64 {
        fuel_consumed(&scenario.propulsion, scenario.actions.thrust, self.burn_steps, scenario.phases.dt)
    }

    fn is_finite_and_bounded(&self, max_speed: f64) -> bool {
        let ok = |x: &Vec3, v: &Vec3| x.iter().all(|c| c.is_finite()) && v.norm() <= max_speed;
        self.positions.iter().zip(&self.velocities).all(|(x, v)| ok(x, v))
            && ok(&self.chaser.position, &self.chaser.velocity())
            && ok(&self.target.body.position, &self.target.body.velocity())
            && self.chaser.angular_momentum.iter().all(|c| c.is_finite())
            && self.target.body.angular_momentum.iter().all(|c| c.is_finite())
    }
}

/// Tension-only spring-damper between nodes `a` and `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spring {
    pub a: usize,
    pub b: usize,
    pub el: AxialElement,
}

/// Force accumulator whose total does not depend on the order contributions
/// are added. Components are held as fixed-point integers with 2^-80 N
/// resolution, so mirrored nodes receive bitwise mirrored totals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForceSum([i128; 3]);

const FIXED_SCALE: f64 = (1u128 << 80) as f64;

impl ForceSum {
    pub fn total(&self) -> Vec3 {
        Vec3::new(
            self.0[0] as f64 / FIXED_SCALE,
            self.0[1] as f64 / FIXED_SCALE,
            self.0[2] as f64 / FIXED_SCALE,
        )
    }
}

impl AddAssign<Vec3> for ForceSum {
    fn add_assign(&mut self, f: Vec3) {
        for (acc, c) in self.0.iter_mut().zip(f.iter()) {
            // `as` truncates toward zero, which keeps f and -f exact negatives.
            *acc = acc.saturating_add((c * FIXED_SCALE) as i128);
        }
    }
}

impl SubAssign<Vec3> for ForceSum {
    fn sub_assign(&mut self, f: Vec3) {
        *self += -f;
    }
}

/// Add every spring's tension to `forces`.
pub fn accumulate_spring_forces<F>(springs: &[Spring], x: &[Vec3], v: &[Vec3], forces: &mut [F])
where
    F: AddAssign<Vec3> + SubAssign<Vec3>,
{
    for sp in springs {
        if let Some((t, e)) = tension_along(&sp.el, &x[sp.a], &x[sp.b], &v[sp.a], &v[sp.b]) {
            let fe = e * t;
            forces[sp.a] += fe;
            forces[sp.b] -= fe;
        }
    }
}

/// Semi-implicit Euler update of point masses: velocities first, then positions.
pub fn integrate_points(x: &mut [Vec3], v: &mut [Vec3], masses: &[f64], forces: &[Vec3], h: f64) {
    for j in 0..masses.len() {
        v[j] += forces[j] * (h / masses[j]);
        x[j] += v[j] * h;
    }
}

/// Main tether: a chain from the winch through interior nodes to its anchor.
#[derive(Debug, Clone)]
struct Tether {
    /// Interior nodes followed by the anchor node.
    chain: Vec<usize>,
    stiffness: f64,
    damping: f64,
    bending: f64,
}

/// Steps one episode. Topology and derived constants are fixed at construction.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    topo: NetTopology,
    springs: Vec<Spring>,
    tether: Tether,
    radii: Vec<f64>,
    lock: AxialElement,
    thrust_world: [Vec3; 4],
    winch_offset: Vec3,
    contact_reach: f64,
    reference: CqiReference,
    substeps: usize,
    state: SimState,
    forces: Vec<ForceSum>,
    totals: Vec<Vec3>,
    recording: Recording,
    sample_every: u64,
    trajectory: Vec<TrajectorySample>,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let topo = build_topology(&scenario.net)?;
        let net = &scenario.net;
        let n = net.mesh_count;
        let knots = topo.knot_count();
        let net_nodes = topo.node_count();
        let seg = scenario.tether.segment_count;
        let even = n % 2 == 0;

        let mut masses: Vec<f64> = topo.nodes.iter().map(|nd| nd.mass).collect();
        let tether_node_mass = scenario.tether.linear_density() * scenario.tether.length / seg as f64;
        let hub = if even {
            masses.push(tether_node_mass);
            Some(net_nodes)
        } else {
            None
        };
        let interior_start = masses.len();
        masses.extend(std::iter::repeat_n(tether_node_mass, seg - 1));

        let mut springs: Vec<Spring> = topo
            .threads
            .iter()
            .map(|t| Spring {
                a: t.ends[0],
                b: t.ends[1],
                el: t.into(),
            })
            .collect();
        let anchor = match hub {
            Some(h) => {
                let rest = net.mesh_length / 2f64.sqrt();
                let k = net.youngs_modulus * std::f64::consts::PI * net.thread_radius.powi(2) / rest;
                for knot in topo.tether_anchor_knots() {
                    let m_red = masses[h] * masses[knot] / (masses[h] + masses[knot]);
                    springs.push(Spring {
                        a: h,
                        b: knot,
                        el: AxialElement {
                            rest_length: rest,
                            stiffness: k,
                            damping: 2.0 * net.damping_ratio * (k * m_red).sqrt(),
                        },
                    });
                }
                h
            }
            None => topo.tether_anchor_knots()[0],
        };
        let mut chain: Vec<usize> = (interior_start..interior_start + seg - 1).collect();
        chain.push(anchor);
        let design_len = scenario.tether.length / seg as f64;
        let k_t = scenario.tether.axial_stiffness() / design_len;
        let tether = Tether {
            chain,
            stiffness: k_t,
            damping: 2.0 * scenario.tether.damping_ratio * (k_t * tether_node_mass / 2.0).sqrt(),
            bending: scenario.tether.bending_stiffness() / design_len.powi(3),
        };

        let mut radii = vec![scenario.contact.knot_radius; knots];
        radii.extend([net.mu_radius; 4]);

        let ph = &scenario.phases;
        let lock_mass = topo.closing_ring.iter().map(|&j| masses[j]).fold(f64::INFINITY, f64::min);
        let lock = AxialElement {
            rest_length: ph.lock_distance,
            stiffness: ph.lock_stiffness,
            damping: 2.0 * ph.lock_damping_ratio * (ph.lock_stiffness * lock_mass / 2.0).sqrt(),
        };

        // Initial placement: knots in a grid inside the stowed square, MUs at its corners.
        let stow = net.stowed_side_length;
        let gap = scenario.deploy.stow_gap;
        let spacing = stow / n as f64;
        let half = (n - 1) as f64 / 2.0;
        let mut positions = Vec::with_capacity(masses.len());
        for row in 0..n {
            for col in 0..n {
                positions.push(Vec3::new((col as f64 - half) * spacing, (row as f64 - half) * spacing, -gap));
            }
        }
        for (sx, sy) in crate::net_model::QUADRANT_SIGNS {
            positions.push(Vec3::new(sx * stow / 2.0, sy * stow / 2.0, -gap));
        }
        if hub.is_some() {
            positions.push(Vec3::new(0.0, 0.0, -gap));
        }
        for k in 1..seg {
            positions.push(Vec3::new(0.0, 0.0, -gap * k as f64 / seg as f64));
        }
        let mut velocities = vec![Vec3::zeros(); masses.len()];
        let eject = ejection_velocities(
            scenario.deploy.ejection_speed,
            scenario.deploy.shooting_angle_deg.to_radians(),
        )?;
        for (i, &mu) in topo.mu_nodes.iter().enumerate() {
            velocities[mu] = eject[i];
        }

        let side = scenario.chaser.side;
        let chaser = RigidBody::at_rest(
            scenario.chaser.mass,
            cube_inertia(scenario.chaser.mass, side),
            Vec3::new(0.0, 0.0, side / 2.0),
        );
        let tc = &scenario.target;
        let mut target = TargetBody::cylinder(tc.radius, tc.length, tc.mass, Vec3::new(tc.x_offset, 0.0, scenario.target_z()));
        if let Some(v) = tc.reference_volume {
            target.volume = v;
        }
        if let Some(s) = tc.reference_area {
            target.surface_area = s;
        }
        if let Some(l) = tc.reference_length {
            target.characteristic_length = l;
        }
        target.validate()?;
        let reference = CqiReference::from(&target);
        let max_radius = radii.iter().cloned().fold(0.0, f64::max);
        let contact_reach = (tc.radius.powi(2) + (tc.length / 2.0).powi(2)).sqrt() + max_radius;

        let a = &scenario.actions;
        let thrust_world = std::array::from_fn(|i| mu_thrust_world(i, a.psi_deg[i], a.theta_deg, a.thrust));
        let mu_structure_mass = topo.mu_nodes.map(|j| masses[j] - net.mu_mass);
        for (i, &j) in topo.mu_nodes.iter().enumerate() {
            masses[j] = mu_structure_mass[i] + a.initial_mass;
        }

        let ring = topo.closing_ring.clone();
        let state = SimState {
            time: 0.0,
            step: 0,
            phase: Phase::Deployment,
            positions,
            velocities,
            net_nodes,
            mu_nodes: topo.mu_nodes,
            mu_mass: [a.initial_mass; 4],
            mu_structure_mass,
            burn_steps: 0,
            thrust_cut: false,
            target,
            chaser,
            winch_locked: false,
            paid_out: gap,
            locked: vec![false; ring.len()],
            ring,
            closing_started: None,
            cqi_history: Vec::new(),
            expelled_momentum: Vec3::zeros(),
            expelled_angular_momentum: Vec3::zeros(),
            thrust_impulse: Vec3::zeros(),
            diverged: false,
            max_penetration: 0.0,
            masses,
        };

        let sample_every = ((ph.sample_interval / ph.dt).round() as u64).max(1);
        let mut sim = Self {
            scenario: scenario.clone(),
            topo,
            springs,
            tether,
            radii,
            lock,
            thrust_world,
            winch_offset: Vec3::new(0.0, 0.0, -side / 2.0),
            contact_reach,
            reference,
            substeps: 1,
            forces: vec![ForceSum::default(); state.masses.len()],
            totals: vec![Vec3::zeros(); state.masses.len()],
            state,
            recording: Recording::None,
            sample_every,
            trajectory: Vec::new(),
        };
        sim.substeps = sim.stable_substeps();
        Ok(sim)
    }

    /// Substeps per `dt` keeping every node inside the explicit stability
    /// bound `h (ω_max + γ_max) <= 2 * safety`, with ω² and γ bounded per node
    /// by Gershgorin sums over incident stiffness and damping.
    fn stable_substeps(&self) -> usize {
        let s = &self.scenario;
        let total = self.state.masses.len();
        let mut k_sum = vec![0.0; total];
        let mut c_sum = vec![0.0; total];
        for sp in &self.springs {
            for j in [sp.a, sp.b] {
                k_sum[j] += sp.el.stiffness;
                c_sum[j] += sp.el.damping;
            }
        }
        let t = &self.tether;
        for (i, &j) in t.chain.iter().enumerate() {
            let ends = if i + 1 < t.chain.len() { 2.0 } else { 1.0 };
            k_sum[j] += ends * t.stiffness + 16.0 * t.bending;
            c_sum[j] += ends * t.damping;
        }
        if s.switches.contact {
            for j in 0..self.state.net_nodes {
                k_sum[j] += s.contact.stiffness;
                c_sum[j] += s.contact.damping;
            }
        }
        if s.switches.closing {
            for &j in &self.state.ring {
                k_sum[j] += 2.0 * self.lock.stiffness;
                c_sum[j] += 2.0 * self.lock.damping;
            }
        }
        let dry = s.propulsion.dry_mass.min(s.actions.initial_mass);
        let rate = (0..total)
            .map(|j| {
                let m = if self.state.mu_nodes.contains(&j) {
                    self.state.masses[j] - s.actions.initial_mass + dry
                } else {
                    self.state.masses[j]
                };
                (2.0 * k_sum[j] / m).sqrt() + 2.0 * c_sum[j] / m
            })
            .fold(0.0, f64::max);
        let h_max = 2.0 * s.phases.substep_safety / rate.max(1e-300);
        ((s.phases.dt / h_max).ceil() as usize).max(1)
    }

    pub fn set_recording(&mut self, recording: Recording) {
        self.recording = recording;
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Mutable access for scripted experiments.
    pub fn state_mut(&mut self) -> &mut SimState {
        &mut self.state
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn topology(&self) -> &NetTopology {
        &self.topo
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn trajectory(&self) -> &[TrajectorySample] {
        &self.trajectory
    }

    fn winch_point(&self) -> Vec3 {
        let c = &self.state.chaser;
        c.position + c.orientation * self.winch_offset
    }

    fn substep(&mut self, h: f64, thrust_on: bool, closing_on: bool) {
        let s = &self.scenario;
        let st = &mut self.state;
        let f = &mut self.forces;
        f.iter_mut().for_each(|v| *v = ForceSum::default());
        let (x, v) = (&st.positions, &st.velocities);

        accumulate_spring_forces(&self.springs, x, v, f);

        let (mut chaser_force, mut chaser_torque) = (Vec3::zeros(), Vec3::zeros());
        let c = &st.chaser;
        let winch = c.position + c.orientation * self.winch_offset;
        let winch_v = c.point_velocity(&winch);
        let tether = &self.tether;
        let el = AxialElement {
            rest_length: st.paid_out / tether.chain.len() as f64,
            stiffness: tether.stiffness,
            damping: tether.damping,
        };
        for (i, &b) in tether.chain.iter().enumerate() {
            let (xa, va) = if i == 0 { (winch, winch_v) } else { (x[tether.chain[i - 1]], v[tether.chain[i - 1]]) };
            if let Some((t, e)) = tension_along(&el, &xa, &x[b], &va, &v[b]) {
                let fe = e * t;
                if i == 0 {
                    chaser_force += fe;
                    chaser_torque += (winch - c.position).cross(&fe);
                } else {
                    f[tether.chain[i - 1]] += fe;
                }
                f[b] -= fe;
            }
        }
        for w in tether.chain.windows(3) {
            let d = (x[w[0]] - x[w[1]] * 2.0 + x[w[2]]) * tether.bending;
            f[w[0]] -= d;
            f[w[1]] += d * 2.0;
            f[w[2]] -= d;
        }

        if thrust_on {
            for (i, &mu) in st.mu_nodes.iter().enumerate() {
                f[mu] += self.thrust_world[i];
            }
        }

        if closing_on {
            let n = st.ring.len();
            for k in 0..n {
                let (a, b) = (st.ring[k], st.ring[(k + 1) % n]);
                if st.locked[k] {
                    if let Some((t, e)) = tension_along(&self.lock, &x[a], &x[b], &v[a], &v[b]) {
                        f[a] += e * t;
                        f[b] -= e * t;
                    }
                } else {
                    let d = x[b] - x[a];
                    let len = d.norm();
                    if len > 0.0 {
                        let fe = d * (s.phases.closing_force / len);
                        f[a] += fe;
                        f[b] -= fe;
                    }
                }
            }
        }

        let (mut target_force, mut target_torque) = (Vec3::zeros(), Vec3::zeros());
        if s.switches.contact {
            let center = st.target.center();
            let reach2 = self.contact_reach * self.contact_reach;
            for j in 0..st.net_nodes {
                if (x[j] - center).norm_squared() > reach2 {
                    continue;
                }
                if let Some(cp) = detect_contact(j, &x[j], &v[j], self.radii[j], &st.target) {
                    let fn_ = normal_force(&cp, s.contact.stiffness, s.contact.damping);
                    let mut ff = friction_force(&cp, fn_.norm(), s.contact.friction, s.contact.regularization_speed);
                    // Friction may not reverse the slip within one substep.
                    let slip = cp.relative_velocity - cp.normal * cp.relative_velocity.dot(&cp.normal);
                    let cap = st.masses[j] * slip.norm() / h;
                    let mag = ff.norm();
                    if mag > cap {
                        ff *= cap / mag;
                    }
                    let fc = fn_ + ff;
                    f[j] += fc;
                    target_force -= fc;
                    target_torque += (cp.position - center).cross(&(-fc));
                    st.max_penetration = st.max_penetration.max(cp.depth);
                }
            }
        }

        for (t, acc) in self.totals.iter_mut().zip(f.iter()) {
            *t = acc.total();
        }
        integrate_points(&mut st.positions, &mut st.velocities, &st.masses, &self.totals, h);
        st.chaser.step(&chaser_force, &chaser_torque, h);
        st.target.body.step(&target_force, &target_torque, h);
    }

    /// Current length of the tether polyline from the winch to its anchor.
    pub fn tether_length(&self) -> f64 {
        let x = &self.state.positions;
        let mut prev = self.winch_point();
        let mut len = 0.0;
        for &j in &self.tether.chain {
            len += (x[j] - prev).norm();
            prev = x[j];
        }
        len
    }

    /// Capture index of the current configuration.
    pub fn current_cqi(&self) -> Result<CqiSample> {
        let st = &self.state;
        let hull = convex_hull_3d(&st.positions[..st.net_nodes])?;
        let q = st.com_distance();
        Ok(CqiSample {
            time: st.time,
            value: cqi(hull.volume, hull.surface_area, q, &self.reference),
            com_distance: q,
        })
    }

    fn record_sample(&mut self, cqi_value: f64) {
        let st = &self.state;
        let q = st.target.body.orientation.quaternion();
        self.trajectory.push(TrajectorySample {
            time: st.time,
            phase: st.phase,
            net_com: st.net_com(),
            mu_positions: st.mu_nodes.map(|j| st.positions[j]),
            target_position: st.target.center(),
            target_orientation: [q.w, q.i, q.j, q.k],
            cqi: cqi_value,
            nodes: if self.recording == Recording::Nodes {
                st.positions[..st.net_nodes].to_vec()
            } else {
                Vec::new()
            },
        });
    }

    /// Advance one outer step of length `dt`. Returns `false` once the episode is over.
    pub fn step(&mut self) -> Result<bool> {
        if self.state.phase == Phase::Done || self.state.diverged {
            return Ok(false);
        }
        if self.state.step == 0 && self.recording != Recording::None {
            let c = self.current_cqi()?.value;
            self.record_sample(c);
        }
        advance_phase(&mut self.state, &self.scenario);
        if self.state.phase == Phase::Done {
            return Ok(false);
        }
        let ph = self.scenario.phases.clone();
        let closing_on = matches!(self.state.phase, Phase::Closing | Phase::Settle);
        if closing_on {
            closing_step(&mut self.state, ph.lock_distance);
        }
        let thrust_on = self.scenario.switches.thrust
            && fuel_step(&mut self.state, &self.scenario.propulsion, &self.scenario.actions, ph.dt);

        let h = ph.dt / self.substeps as f64;
        for _ in 0..self.substeps {
            self.substep(h, thrust_on, closing_on);
        }
        self.state.step += 1;
        self.state.time = self.state.step as f64 * ph.dt;
        if thrust_on {
            let total: Vec3 = self.thrust_world.iter().sum();
            self.state.thrust_impulse += total * ph.dt;
        }

        if !self.state.winch_locked {
            let n = self.tether.chain.len() as f64;
            let wanted = self.tether_length() - n * self.scenario.chaser.spool_tension / self.tether.stiffness;
            self.state.paid_out = self.state.paid_out.max(wanted).min(self.scenario.tether.length);
        }

        if !self.state.is_finite_and_bounded(ph.divergence_speed) {
            self.state.diverged = true;
            return Ok(false);
        }

        let in_capture = matches!(self.state.phase, Phase::Closing | Phase::Settle);
        let in_final_window =
            self.state.closing_started.is_none() && self.state.time >= ph.max_time - ph.cqi_window - 1e-9;
        let sampling = self.recording != Recording::None && self.state.step % self.sample_every == 0;
        if in_capture || in_final_window || sampling {
            let sample = self.current_cqi()?;
            if in_capture || in_final_window {
                self.state.cqi_history.push(sample);
            }
            if sampling {
                self.record_sample(sample.value);
            }
        }
        Ok(true)
    }

    /// Run to completion.
    pub fn run(mut self) -> Result<EpisodeResult> {
        while self.step()? {}
        let st = &self.state;
        let settled = if st.diverged {
            f64::INFINITY
        } else {
            settled_cqi(&st.cqi_history, self.scenario.phases.cqi_window)?
        };
        let fuel = st.fuel_consumed(&self.scenario);
        Ok(EpisodeResult {
            settled_cqi: settled,
            locked_pairs: st.locked_count(),
            fuel_consumed: fuel,
            final_mu_mass: self.scenario.actions.initial_mass - fuel,
            sim_time: st.time,
            success: false,
            diverged: st.diverged,
            closing_time: st.closing_started,
            thrust_duration: st.burn_steps as f64 * self.scenario.phases.dt,
            target_z: self.scenario.target_z(),
            max_penetration: st.max_penetration,
            trajectory: std::mem::take(&mut self.trajectory),
        }
        .finish())
    }
}
