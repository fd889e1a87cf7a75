//! Contact between spherical net nodes and a rigid capped-cylinder target.
//!
//! Normal forces follow a Kelvin-Voigt law clamped to be non-adhesive. Friction
//! is a regularized Coulomb box: it grows linearly with slip speed up to
//! `v_reg` and saturates at `mu * N`.

use std::f64::consts::PI;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rigid_body::{cylinder_inertia, RigidBody};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    /// Normal stiffness k_c (N/m).
    pub stiffness: f64,
    /// Normal damping d_c (N s/m).
    pub damping: f64,
    /// Coulomb coefficient.
    pub friction: f64,
    /// Slip speed at which friction saturates (m/s).
    pub regularization_speed: f64,
    /// Contact radius of a knot node (m).
    pub knot_radius: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 5e4,
            damping: 50.0,
            friction: 0.3,
            regularization_speed: 0.01,
            knot_radius: 0.02,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0) || !(self.damping >= 0.0) || !(self.friction >= 0.0) {
            return Err(Error::invalid("contact stiffness must be positive, damping and friction non-negative"));
        }
        if !(self.regularization_speed > 0.0) || !(self.knot_radius > 0.0) {
            return Err(Error::invalid("regularization_speed and knot_radius must be positive"));
        }
        Ok(())
    }
}

/// Rigid capped-cylinder target. The cylinder axis is the body Z axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetBody {
    pub radius: f64,
    pub length: f64,
    pub body: RigidBody,
    /// Reference volume V_t used by the capture index (m^3).
    pub volume: f64,
    /// Reference surface area S_t (m^2).
    pub surface_area: f64,
    /// Shortest distance from the center of mass to the surface (m).
    pub characteristic_length: f64,
}

impl TargetBody {
    /// Solid cylinder with geometric reference constants, axis along world +Y.
    pub fn cylinder(radius: f64, length: f64, mass: f64, position: Vec3) -> Self {
        let mut body = RigidBody::at_rest(mass, cylinder_inertia(mass, radius, length), position);
        body.orientation = axis_along_y();
        Self {
            radius,
            length,
            body,
            volume: PI * radius * radius * length,
            surface_area: 2.0 * PI * radius * length + 2.0 * PI * radius * radius,
            characteristic_length: radius.min(length / 2.0),
        }
    }

    /// Upper-stage rocket body: 3.9 m diameter, 11 m long, 9000 kg, with the
    /// reference volume, area and characteristic length of the real stage.
    pub fn upper_stage(position: Vec3) -> Self {
        Self {
            volume: 125.3,
            surface_area: 159.9,
            characteristic_length: 1.95,
            ..Self::cylinder(1.95, 11.0, 9000.0, position)
        }
    }

    pub fn center(&self) -> Vec3 {
        self.body.position
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.radius,
            self.length,
            self.body.mass,
            self.volume,
            self.surface_area,
            self.characteristic_length,
        ];
        if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("target dimensions, mass and reference constants must be positive"));
        }
        if (self.body.orientation.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("target orientation is not a unit quaternion"));
        }
        Ok(())
    }

    /// Signed distance from `point` to the cylinder surface with the outward
    /// normal of the nearest feature and the nearest surface point.
    pub fn signed_distance(&self, point: &Vec3) -> (f64, Vec3, Vec3) {
        let rot = self.body.orientation;
        let p = rot.inverse_transform_vector(&(point - self.body.position));
        let rho = (p.x * p.x + p.y * p.y).sqrt();
        let radial = if rho > 0.0 {
            Vec3::new(p.x / rho, p.y / rho, 0.0)
        } else {
            Vec3::x()
        };
        let axial = Vec3::new(0.0, 0.0, if p.z >= 0.0 { 1.0 } else { -1.0 });
        let half = 0.5 * self.length;
        let dr = rho - self.radius;
        let da = p.z.abs() - half;
        let (dist, normal_local) = if dr > 0.0 && da > 0.0 {
            let d = (dr * dr + da * da).sqrt();
            (d, (radial * dr + axial * da) / d)
        } else if dr > 0.0 {
            (dr, radial)
        } else if da > 0.0 {
            (da, axial)
        } else if dr >= da {
            (dr, radial)
        } else {
            (da, axial)
        };
        let normal = rot.transform_vector(&normal_local);
        (dist, normal, point - normal * dist)
    }
}

fn axis_along_y() -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vec3::x_axis(), -std::f64::consts::FRAC_PI_2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPoint {
    pub node: usize,
    /// Penetration depth (m), positive when overlapping.
    pub depth: f64,
    /// Outward unit normal of the target.
    pub normal: Vec3,
    /// Contact location on the target surface.
    pub position: Vec3,
    /// Node velocity relative to the target material point.
    pub relative_velocity: Vec3,
}

/// Contact between one node sphere and the target, if they overlap.
pub fn detect_contact(
    node: usize,
    position: &Vec3,
    velocity: &Vec3,
    radius: f64,
    target: &TargetBody,
) -> Option<ContactPoint> {
    let (dist, normal, surface) = target.signed_distance(position);
    if dist >= radius {
        return None;
    }
    Some(ContactPoint {
        node,
        depth: radius - dist,
        normal,
        position: surface,
        relative_velocity: velocity - target.body.point_velocity(&surface),
    })
}

pub fn detect_contacts(
    positions: &[Vec3],
    velocities: &[Vec3],
    radii: &[f64],
    target: &TargetBody,
) -> Vec<ContactPoint> {
    positions
        .iter()
        .zip(velocities)
        .zip(radii)
        .enumerate()
        .filter_map(|(i, ((x, v), &r))| detect_contact(i, x, v, r, target))
        .collect()
}

/// Kelvin-Voigt normal force on the node; never attractive.
pub fn normal_force(c: &ContactPoint, stiffness: f64, damping: f64) -> Vec3 {
    let rate = -c.relative_velocity.dot(&c.normal);
    let magnitude = (stiffness * c.depth + damping * rate).max(0.0);
    c.normal * magnitude
}

/// Regularized Coulomb friction on the node, opposing tangential slip.
pub fn friction_force(c: &ContactPoint, normal_magnitude: f64, mu: f64, v_reg: f64) -> Vec3 {
    let vn = c.relative_velocity.dot(&c.normal);
    let slip = c.relative_velocity - c.normal * vn;
    let speed = slip.norm();
    if speed == 0.0 {
        return Vec3::zeros();
    }
    let magnitude = mu * normal_magnitude * (speed / v_reg).min(1.0);
    -slip * (magnitude / speed)
}

/// Net force and torque (about the center of mass) that the node forces
/// exert back on the target.
pub fn apply_reactions(
    contacts: &[ContactPoint],
    forces: &[Vec3],
    target: &TargetBody,
) -> Result<(Vec3, Vec3)> {
    if contacts.len() != forces.len() {
        return Err(Error::invalid(format!(
            "{} contacts but {} forces",
            contacts.len(),
            forces.len()
        )));
    }
    let com = target.center();
    Ok(contacts
        .iter()
        .zip(forces)
        .fold((Vec3::zeros(), Vec3::zeros()), |(f, t), (c, fi)| {
            (f - fi, t + (c.position - com).cross(&(-fi)))
        }))
}
