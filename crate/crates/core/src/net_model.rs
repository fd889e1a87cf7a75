//! Net topology and the constitutive quantities of its threads.
//!
//! The net is a square grid of knot nodes joined by axial threads. Each grid
//! corner is tied to a maneuverable unit (MU) through a corner thread. Thread
//! mass is split evenly between the two end nodes, and the threads act as
//! tension-only spring-dampers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Physical description of the net, its corner threads and the MUs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Knots per side.
    pub mesh_count: usize,
    /// Side length of the deployed net (m).
    pub side_length: f64,
    /// Rest length of a grid thread (m).
    pub mesh_length: f64,
    pub thread_radius: f64,
    pub thread_density: f64,
    pub youngs_modulus: f64,
    /// Dimensionless axial damping ratio.
    pub damping_ratio: f64,
    pub knot_mass: f64,
    pub corner_thread_length: f64,
    pub corner_thread_radius: f64,
    pub mu_radius: f64,
    /// Total mass of one MU including propellant (kg).
    pub mu_mass: f64,
    /// Side length of the folded net at launch (m).
    pub stowed_side_length: f64,
}

impl NetConfig {
    /// The 22 m net with 1 m meshes.
    #[allow(clippy::approx_constant)]
    pub fn paper() -> Self {
        Self {
            mesh_count: 22,
            side_length: 21.0,
            mesh_length: 1.0,
            thread_radius: 0.0011,
            thread_density: 1390.0,
            youngs_modulus: 70e9,
            damping_ratio: 0.106,
            knot_mass: 0.005,
            corner_thread_length: 1.4142,
            corner_thread_radius: 0.0007,
            mu_radius: 0.0605,
            mu_mass: 2.5,
            stowed_side_length: 1.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh_count < 2 {
            return Err(Error::invalid(format!(
                "mesh_count must be at least 2, got {}",
                self.mesh_count
            )));
        }
        let positive = [
            ("side_length", self.side_length),
            ("mesh_length", self.mesh_length),
            ("thread_radius", self.thread_radius),
            ("thread_density", self.thread_density),
            ("youngs_modulus", self.youngs_modulus),
            ("knot_mass", self.knot_mass),
            ("corner_thread_length", self.corner_thread_length),
            ("corner_thread_radius", self.corner_thread_radius),
            ("mu_radius", self.mu_radius),
            ("mu_mass", self.mu_mass),
            ("stowed_side_length", self.stowed_side_length),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.damping_ratio >= 0.0) {
            return Err(Error::invalid("damping_ratio must be non-negative"));
        }
        let spanned = self.mesh_length * (self.mesh_count - 1) as f64;
        if ((spanned - self.side_length) / self.side_length).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mesh_length * (mesh_count - 1) = {spanned} does not match side_length {}",
                self.side_length
            )));
        }
        Ok(())
    }
}

/// Main tether material and discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetherSpec {
    pub density: f64,
    pub youngs_modulus: f64,
    pub radius: f64,
    /// Maximum length that can be paid out (m).
    pub length: f64,
    pub damping_ratio: f64,
    pub segment_count: usize,
}

impl TetherSpec {
    pub fn paper() -> Self {
        Self {
            density: 1390.0,
            youngs_modulus: 70e9,
            radius: 0.002,
            length: 80.0,
            damping_ratio: 0.106,
            segment_count: 20,
        }
    }

    /// Axial stiffness `EA` (N).
    pub fn axial_stiffness(&self) -> f64 {
        tether_stiffness(self.youngs_modulus, self.radius).0
    }

    /// Bending stiffness `EI` (N m^2).
    pub fn bending_stiffness(&self) -> f64 {
        tether_stiffness(self.youngs_modulus, self.radius).1
    }

    pub fn linear_density(&self) -> f64 {
        self.density * PI * self.radius * self.radius
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("tether density", self.density),
            ("tether youngs_modulus", self.youngs_modulus),
            ("tether radius", self.radius),
            ("tether length", self.length),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if self.segment_count < 2 {
            return Err(Error::invalid("tether segment_count must be at least 2"));
        }
        if !(self.damping_ratio >= 0.0) {
            return Err(Error::invalid("tether damping_ratio must be non-negative"));
        }
        Ok(())
    }
}

/// Axial (`EA`) and bending (`EI`) stiffness of a solid round tether.
pub fn tether_stiffness(youngs_modulus: f64, radius: f64) -> (f64, f64) {
    let area = PI * radius * radius;
    (youngs_modulus * area, youngs_modulus * PI * radius.powi(4) / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeRole {
    Knot,
    Mu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub index: usize,
    pub role: NodeRole,
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThreadClass {
    Grid,
    Corner,
}

/// One tension-only axial element of the net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    pub index: usize,
    pub ends: [usize; 2],
    pub class: ThreadClass,
    pub rest_length: f64,
    pub stiffness: f64,
    pub damping: f64,
    pub mass: f64,
}

/// Immutable net topology: nodes, threads, adjacency and the special node sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetTopology {
    pub mesh_count: usize,
    pub nodes: Vec<Node>,
    pub threads: Vec<Thread>,
    /// Threads incident to each node.
    pub adjacency: Vec<Vec<usize>>,
    /// MU node indices, counter-clockwise from the +X+Y quadrant.
    pub mu_nodes: [usize; 4],
    /// Grid corner knots matching `mu_nodes`.
    pub corner_knots: [usize; 4],
    /// Closing-mechanism attachment points in ring order (4 MUs + 8 perimeter knots).
    pub closing_ring: Vec<usize>,
    knot_mass: f64,
    mu_mass: f64,
}

impl NetTopology {
    pub fn knot_count(&self) -> usize {
        self.mesh_count * self.mesh_count
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Knot index of grid cell (`row`, `col`); row grows with +Y, col with +X.
    pub fn knot_index(&self, row: usize, col: usize) -> usize {
        row * self.mesh_count + col
    }

    /// Knots the main tether is tied to: the center knot for odd grids, the
    /// four central knots otherwise, listed so diagonal opposites are adjacent.
    pub fn tether_anchor_knots(&self) -> Vec<usize> {
        let n = self.mesh_count;
        if n % 2 == 1 {
            vec![self.knot_index(n / 2, n / 2)]
        } else {
            let (a, b) = (n / 2 - 1, n / 2);
            vec![
                self.knot_index(b, b),
                self.knot_index(a, a),
                self.knot_index(b, a),
                self.knot_index(a, b),
            ]
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.nodes.iter().map(|n| n.mass).sum()
    }

    pub fn total_thread_mass(&self) -> f64 {
        self.threads.iter().map(|t| t.mass).sum()
    }

    pub fn knot_mass(&self) -> f64 {
        self.knot_mass
    }

    pub fn mu_mass(&self) -> f64 {
        self.mu_mass
    }
}

fn thread_mass(density: f64, radius: f64, length: f64) -> f64 {
    density * PI * radius * radius * length
}

/// Build the grid, corner threads and MUs, assigning lumped masses.
pub fn build_topology(config: &NetConfig) -> Result<NetTopology> {
    config.validate()?;
    let n = config.mesh_count;
    let knots = n * n;
    let idx = |row: usize, col: usize| row * n + col;

    let mut ends: Vec<([usize; 2], ThreadClass)> = Vec::with_capacity(2 * n * (n - 1) + 4);
    for row in 0..n {
        for col in 0..n - 1 {
            ends.push(([idx(row, col), idx(row, col + 1)], ThreadClass::Grid));
        }
    }
    for row in 0..n - 1 {
        for col in 0..n {
            ends.push(([idx(row, col), idx(row + 1, col)], ThreadClass::Grid));
        }
    }

    let last = n - 1;
    let corner_knots = [idx(last, last), idx(last, 0), idx(0, 0), idx(0, last)];
    let mu_nodes = [knots, knots + 1, knots + 2, knots + 3];
    for (&corner, &mu) in corner_knots.iter().zip(&mu_nodes) {
        ends.push(([corner, mu], ThreadClass::Corner));
    }

    let mut threads: Vec<Thread> = ends
        .into_iter()
        .enumerate()
        .map(|(index, (ends, class))| {
            let (length, radius) = match class {
                ThreadClass::Grid => (config.mesh_length, config.thread_radius),
                ThreadClass::Corner => (config.corner_thread_length, config.corner_thread_radius),
            };
            Thread {
                index,
                ends,
                class,
                rest_length: length,
                stiffness: config.youngs_modulus * PI * radius * radius / length,
                damping: 0.0,
                mass: thread_mass(config.thread_density, radius, length),
            }
        })
        .collect();

    let node_total = knots + 4;
    let mut adjacency = vec![Vec::new(); node_total];
    for t in &threads {
        adjacency[t.ends[0]].push(t.index);
        adjacency[t.ends[1]].push(t.index);
    }

    let nodes: Vec<Node> = (0..node_total)
        .map(|j| {
            let (role, own) = if j < knots {
                (NodeRole::Knot, config.knot_mass)
            } else {
                (NodeRole::Mu, config.mu_mass)
            };
            let half_threads: f64 = adjacency[j].iter().map(|&g| threads[g].mass / 2.0).sum();
            Node {
                index: j,
                role,
                mass: half_threads + own,
            }
        })
        .collect();

    for t in &mut threads {
        let (ma, mb) = (nodes[t.ends[0]].mass, nodes[t.ends[1]].mass);
        let reduced = ma * mb / (ma + mb);
        t.damping = 2.0 * config.damping_ratio * (t.stiffness * reduced).sqrt();
    }

    // Perimeter attachment knots split every side into thirds.
    let third = (last as f64 / 3.0).round() as usize;
    let two_thirds = (2.0 * last as f64 / 3.0).round() as usize;
    let closing_ring = vec![
        mu_nodes[0],
        idx(last, two_thirds),
        idx(last, third),
        mu_nodes[1],
        idx(two_thirds, 0),
        idx(third, 0),
        mu_nodes[2],
        idx(0, third),
        idx(0, two_thirds),
        mu_nodes[3],
        idx(third, last),
        idx(two_thirds, last),
    ];

    Ok(NetTopology {
        mesh_count: n,
        nodes,
        threads,
        adjacency,
        mu_nodes,
        corner_knots,
        closing_ring,
        knot_mass: config.knot_mass,
        mu_mass: config.mu_mass,
    })
}

/// Lumped mass of node `j`: half of every incident thread plus the knot or MU mass.
pub fn lumped_mass(j: usize, topo: &NetTopology) -> Result<f64> {
    let node = topo
        .nodes
        .get(j)
        .ok_or_else(|| Error::invalid(format!("node index {j} out of range")))?;
    let own = match node.role {
        NodeRole::Knot => topo.knot_mass,
        NodeRole::Mu => topo.mu_mass,
    };
    Ok(topo.adjacency[j]
        .iter()
        .map(|&g| topo.threads[g].mass / 2.0)
        .sum::<f64>()
        + own)
}

/// Axial spring-damper that can only pull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialElement {
    pub rest_length: f64,
    pub stiffness: f64,
    pub damping: f64,
}

impl From<&Thread> for AxialElement {
    fn from(t: &Thread) -> Self {
        Self {
            rest_length: t.rest_length,
            stiffness: t.stiffness,
            damping: t.damping,
        }
    }
}

/// Tension magnitude and unit vector from the first end toward the second.
/// Returns `None` for slack or coincident ends.
#[inline]
pub(crate) fn tension_along(
    el: &AxialElement,
    xa: &Vec3,
    xb: &Vec3,
    va: &Vec3,
    vb: &Vec3,
) -> Option<(f64, Vec3)> {
    let d = xb - xa;
    let len = d.norm();
    if len <= el.rest_length || len == 0.0 {
        return None;
    }
    let e = d / len;
    let closing = (vb - va).dot(&e);
    let magnitude = el.stiffness * (len - el.rest_length) + el.damping * closing;
    if magnitude <= 0.0 {
        return None;
    }
    Some((magnitude, e))
}

/// Force exerted by a thread on its first end. The second end receives the negation.
pub fn thread_tension(el: &AxialElement, ends: [Vec3; 2], velocities: [Vec3; 2]) -> Result<Vec3> {
    let len = (ends[1] - ends[0]).norm();
    if len == 0.0 {
        return Err(Error::Degenerate("thread ends coincide".into()));
    }
    Ok(
        match tension_along(el, &ends[0], &ends[1], &velocities[0], &velocities[1]) {
            Some((t, e)) => e * t,
            None => Vec3::zeros(),
        },
    )
}

/// Initial MU velocities for ejection speed `speed` and shooting angle
/// `shooting_angle` (rad), in `mu_nodes` order. Deployment is along -Z.
pub fn ejection_velocities(speed: f64, shooting_angle: f64) -> Result<[Vec3; 4]> {
    if !(speed > 0.0) {
        return Err(Error::invalid("ejection speed must be positive"));
    }
    if !(0.0..std::f64::consts::FRAC_PI_2).contains(&shooting_angle) {
        return Err(Error::invalid("shooting angle must lie in [0, pi/2)"));
    }
    let lateral = speed * shooting_angle.sin() / 2f64.sqrt();
    let axial = -speed * shooting_angle.cos();
    Ok(QUADRANT_SIGNS.map(|(sx, sy)| Vec3::new(sx * lateral, sy * lateral, axial)))
}

/// (x, y) signs of the four MU quadrants in `mu_nodes` order.
pub const QUADRANT_SIGNS: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
