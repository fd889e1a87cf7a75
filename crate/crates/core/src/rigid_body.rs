//! Free-floating rigid bodies integrated in momentum form.

use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBody {
    pub mass: f64,
    /// Principal moments of inertia in the body frame (kg m^2).
    pub principal_inertia: Vec3,
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
    /// Linear momentum (kg m/s).
    pub momentum: Vec3,
    /// Angular momentum about the center of mass, world frame (kg m^2/s).
    pub angular_momentum: Vec3,
}

impl RigidBody {
    pub fn at_rest(mass: f64, principal_inertia: Vec3, position: Vec3) -> Self {
        Self {
            mass,
            principal_inertia,
            position,
            orientation: UnitQuaternion::identity(),
            momentum: Vec3::zeros(),
            angular_momentum: Vec3::zeros(),
        }
    }

    pub fn velocity(&self) -> Vec3 {
        self.momentum / self.mass
    }

    pub fn inverse_inertia_world(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix();
        let inv = Matrix3::from_diagonal(&self.principal_inertia.map(|i| 1.0 / i));
        r.matrix() * inv * r.matrix().transpose()
    }

    pub fn angular_velocity(&self) -> Vec3 {
        self.inverse_inertia_world() * self.angular_momentum
    }

    pub fn set_angular_velocity(&mut self, omega: Vec3) {
        let r = self.orientation.to_rotation_matrix();
        let inertia = Matrix3::from_diagonal(&self.principal_inertia);
        self.angular_momentum = r.matrix() * inertia * r.matrix().transpose() * omega;
    }

    /// Velocity of the material point currently at `point`.
    pub fn point_velocity(&self, point: &Vec3) -> Vec3 {
        self.velocity() + self.angular_velocity().cross(&(point - self.position))
    }

    /// Semi-implicit Euler step: momenta first, then pose from the new momenta.
    pub fn step(&mut self, force: &Vec3, torque: &Vec3, dt: f64) {
        self.momentum += force * dt;
        self.angular_momentum += torque * dt;
        self.position += self.momentum * (dt / self.mass);
        let omega = self.angular_velocity();
        self.orientation = UnitQuaternion::from_scaled_axis(omega * dt) * self.orientation;
    }

    pub fn kinetic_energy(&self) -> f64 {
        let omega = self.angular_velocity();
        0.5 * self.momentum.norm_squared() / self.mass + 0.5 * omega.dot(&self.angular_momentum)
    }

    /// Angular momentum about the world origin.
    pub fn total_angular_momentum(&self) -> Vec3 {
        self.position.cross(&self.momentum) + self.angular_momentum
    }
}

/// Principal inertia of a solid cylinder whose axis is the body Z axis.
pub fn cylinder_inertia(mass: f64, radius: f64, length: f64) -> Vec3 {
    let transverse = mass * (3.0 * radius * radius + length * length) / 12.0;
    Vec3::new(transverse, transverse, 0.5 * mass * radius * radius)
}

pub fn cube_inertia(mass: f64, side: f64) -> Vec3 {
    Vec3::repeat(mass * side * side / 6.0)
}
