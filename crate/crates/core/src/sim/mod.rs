//! Planar two-link arm grasping the knob of a one-DoF hinged door.
//!
//! The arm moves in a horizontal plane (no gravity) with point masses at the
//! link tips and is driven by a joint-space PD controller. The gripper is
//! coupled to the knob by a spring-damper that breaks permanently once the
//! coupling force exceeds `slide_friction · grip_force`.

mod dynamics;
mod kinematics;
mod rollout;
mod trajectory;

pub use dynamics::{kinetic_energy, mass_matrix, mechanical_energy, step, StepOutput};
pub use kinematics::{forward_kinematics, inverse_kinematics, jacobian};
pub use rollout::{gen_real_rollouts, min_jerk, playback, round_trip_demo, synth_demo, DemoPose};
pub use trajectory::{Trajectory, TrajectoryMeta};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lower and upper hinge limits in radians.
pub const DOOR_ANGLE_LIMITS: (f64, f64) = (-0.1, std::f64::consts::FRAC_PI_2 + 0.1);

/// Velocity scale of the smoothed Coulomb friction, `tanh(rate / 0.01)`.
pub const FRICTION_SMOOTHING: f64 = 0.01;

/// Identified dynamics parameters of the door, arm joints and grasp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynParams {
    /// kg
    pub door_mass: f64,
    /// kg
    pub knob_mass: f64,
    /// Coulomb friction torque at the hinge, N·m.
    pub door_friction_loss: f64,
    /// N·m/rad
    pub door_stiffness: f64,
    /// N·m·s/rad
    pub door_damping: f64,
    /// Per-joint viscous damping, N·m·s/rad.
    pub joint_damping: [f64; 2],
    /// Dimensionless grasp friction coefficient.
    pub slide_friction: f64,
}

impl DynParams {
    pub const DIM: usize = 8;

    pub const NAMES: [&'static str; Self::DIM] = [
        "door_mass",
        "knob_mass",
        "door_friction_loss",
        "door_stiffness",
        "door_damping",
        "joint_damping_1",
        "joint_damping_2",
        "slide_friction",
    ];

    pub fn names() -> Vec<String> {
        Self::NAMES.iter().map(|s| s.to_string()).collect()
    }

    pub fn to_vec(&self) -> [f64; Self::DIM] {
        [
            self.door_mass,
            self.knob_mass,
            self.door_friction_loss,
            self.door_stiffness,
            self.door_damping,
            self.joint_damping[0],
            self.joint_damping[1],
            self.slide_friction,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != Self::DIM {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                Self::DIM,
                v.len()
            )));
        }
        Ok(DynParams {
            door_mass: v[0],
            knob_mass: v[1],
            door_friction_loss: v[2],
            door_stiffness: v[3],
            door_damping: v[4],
            joint_damping: [v[5], v[6]],
            slide_friction: v[7],
        })
    }

    /// Checks the type invariants; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in Self::NAMES.iter().zip(self.to_vec()) {
            if !value.is_finite() || value < 0.0 {
                let field = match *name {
                    "joint_damping_1" | "joint_damping_2" => "joint_damping",
                    other => other,
                };
                return Err(Error::Validation {
                    field: field.to_string(),
                    reason: format!("must be finite and non-negative, got {value}"),
                });
            }
        }
        if self.door_mass <= 0.0 {
            return Err(Error::Validation {
                field: "door_mass".into(),
                reason: "must be strictly positive".into(),
            });
        }
        Ok(())
    }

    /// Hinge inertia: thin door panel about its edge plus a point knob.
    pub fn door_inertia(&self, knob_radius: f64) -> f64 {
        let r2 = knob_radius * knob_radius;
        self.door_mass * r2 / 3.0 + self.knob_mass * r2
    }

    pub fn hash(&self) -> String {
        content_hash(&serde_json::to_vec(self).expect("params serialize"))
    }
}

/// Fixed geometry, controller gains and contact constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub link_lengths_m: [f64; 2],
    pub link_masses_kg: [f64; 2],
    pub hinge_position_m: [f64; 2],
    /// Direction from hinge to knob when the door is closed; opening rotates
    /// the door counter-clockwise from here.
    pub door_closed_heading_rad: f64,
    pub knob_radius_m: f64,
    pub pd_kp_nm_per_rad: [f64; 2],
    pub pd_kd_nms_per_rad: [f64; 2],
    pub grip_force_n: f64,
    pub coupling_stiffness_n_per_m: f64,
    pub coupling_damping_ns_per_m: f64,
    pub dt_s: f64,
    /// Torque sensor noise, applied only to reference rollouts.
    pub noise_std_nm: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            link_lengths_m: [0.5, 0.5],
            link_masses_kg: [1.0, 1.0],
            hinge_position_m: [0.2, 0.6],
            door_closed_heading_rad: std::f64::consts::PI,
            knob_radius_m: 0.4,
            pd_kp_nm_per_rad: [200.0, 200.0],
            pd_kd_nms_per_rad: [20.0, 20.0],
            grip_force_n: 20.0,
            coupling_stiffness_n_per_m: 5000.0,
            coupling_damping_ns_per_m: 50.0,
            dt_s: 0.001,
            noise_std_nm: 0.05,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::Validation {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.link_lengths_m) || self.link_lengths_m.iter().any(|&l| l <= 0.0) {
            return Err(bad("link_lengths_m", "must be positive"));
        }
        if !finite(&self.link_masses_kg) || self.link_masses_kg.iter().any(|&m| m <= 0.0) {
            return Err(bad("link_masses_kg", "must be positive"));
        }
        if !finite(&self.hinge_position_m) || !self.door_closed_heading_rad.is_finite() {
            return Err(bad("hinge_position_m", "must be finite"));
        }
        if !(self.knob_radius_m > 0.0 && self.knob_radius_m.is_finite()) {
            return Err(bad("knob_radius_m", "must be positive"));
        }
        let gains = [
            ("pd_kp_nm_per_rad", self.pd_kp_nm_per_rad[0]),
            ("pd_kp_nm_per_rad", self.pd_kp_nm_per_rad[1]),
            ("pd_kd_nms_per_rad", self.pd_kd_nms_per_rad[0]),
            ("pd_kd_nms_per_rad", self.pd_kd_nms_per_rad[1]),
            ("grip_force_n", self.grip_force_n),
            ("coupling_stiffness_n_per_m", self.coupling_stiffness_n_per_m),
            ("coupling_damping_ns_per_m", self.coupling_damping_ns_per_m),
            ("noise_std_nm", self.noise_std_nm),
        ];
        for (field, v) in gains {
            if !(v.is_finite() && v >= 0.0) {
                return Err(bad(field, "must be finite and non-negative"));
            }
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(bad("dt_s", "must be positive"));
        }
        Ok(())
    }

    pub fn with_knob_radius(&self, radius: f64) -> Self {
        WorldConfig {
            knob_radius_m: radius,
            ..self.clone()
        }
    }

    /// Knob position for a door angle.
    pub fn knob_position(&self, door_angle: f64) -> [f64; 2] {
        let a = self.door_closed_heading_rad + door_angle;
        [
            self.hinge_position_m[0] + self.knob_radius_m * a.cos(),
            self.hinge_position_m[1] + self.knob_radius_m * a.sin(),
        ]
    }

    /// d(knob position)/d(door angle).
    pub fn knob_tangent(&self, door_angle: f64) -> [f64; 2] {
        let a = self.door_closed_heading_rad + door_angle;
        [-self.knob_radius_m * a.sin(), self.knob_radius_m * a.cos()]
    }

    /// Door angle whose knob direction matches `point` as seen from the hinge.
    pub fn door_angle_of(&self, point: [f64; 2]) -> f64 {
        let dx = point[0] - self.hinge_position_m[0];
        let dy = point[1] - self.hinge_position_m[1];
        let raw = dy.atan2(dx) - self.door_closed_heading_rad;
        raw.sin().atan2(raw.cos())
    }

    pub fn hash(&self) -> String {
        content_hash(&serde_json::to_vec(self).expect("world serializes"))
    }
}

/// Evolving arm + door state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub q: [f64; 2],
    pub qdot: [f64; 2],
    pub door_angle: f64,
    pub door_rate: f64,
    pub grasped: bool,
    /// Rest offset of the grasp spring, knob minus gripper, fixed at grasp time.
    pub grasp_offset: [f64; 2],
    pub time: f64,
}

impl SimState {
    /// Gripper holding the knob of the closed door at joint angles `q`.
    pub fn grasping(q: [f64; 2], world: &WorldConfig) -> Self {
        let (ee, _) = forward_kinematics(q, world);
        let knob = world.knob_position(0.0);
        SimState {
            q,
            qdot: [0.0; 2],
            door_angle: 0.0,
            door_rate: 0.0,
            grasped: true,
            grasp_offset: [knob[0] - ee[0], knob[1] - ee[1]],
            time: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q
            .iter()
            .chain(self.qdot.iter())
            .chain([self.door_angle, self.door_rate, self.time].iter())
            .all(|v| v.is_finite())
    }

    /// Knob position minus the gripper's contact point (end effector plus
    /// grasp offset); zero while the grasp spring is at rest.
    pub fn knob_rel(&self, world: &WorldConfig) -> [f64; 2] {
        let (ee, _) = forward_kinematics(self.q, world);
        let knob = world.knob_position(self.door_angle);
        [
            knob[0] - ee[0] - self.grasp_offset[0],
            knob[1] - ee[1] - self.grasp_offset[1],
        ]
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
