use super::{forward_kinematics, jacobian, DynParams, SimState, WorldConfig};
use super::{DOOR_ANGLE_LIMITS, FRICTION_SMOOTHING};
use crate::error::{Error, Result};

/// Speeds beyond this are treated as numerical blow-up.
const DIVERGENCE_SPEED: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub state: SimState,
    /// Commanded PD torque, which is also what the torque sensor reports.
    pub torque: [f64; 2],
    /// Grasp spring force on the gripper, computed before the slip check.
    pub coupling_force: [f64; 2],
}

impl StepOutput {
    pub fn coupling_force_norm(&self) -> f64 {
        norm(self.coupling_force)
    }
}

/// Joint-space inertia of the arm with point masses at both link tips.
pub fn mass_matrix(q: [f64; 2], world: &WorldConfig) -> [[f64; 2]; 2] {
    let [l1, l2] = world.link_lengths_m;
    let [m1, m2] = world.link_masses_kg;
    let c2 = q[1].cos();
    let m22 = m2 * l2 * l2;
    let m12 = m22 + m2 * l1 * l2 * c2;
    let m11 = (m1 + m2) * l1 * l1 + m22 + 2.0 * m2 * l1 * l2 * c2;
    [[m11, m12], [m12, m22]]
}

/// Arm plus door kinetic energy.
pub fn kinetic_energy(state: &SimState, params: &DynParams, world: &WorldConfig) -> f64 {
    let m = mass_matrix(state.q, world);
    let v = state.qdot;
    let arm = 0.5 * (m[0][0] * v[0] * v[0] + 2.0 * m[0][1] * v[0] * v[1] + m[1][1] * v[1] * v[1]);
    let door = 0.5 * params.door_inertia(world.knob_radius_m) * state.door_rate * state.door_rate;
    arm + door
}

/// Kinetic energy plus the hinge spring and, while grasped, the grasp spring.
pub fn mechanical_energy(state: &SimState, params: &DynParams, world: &WorldConfig) -> f64 {
    let mut e =
        kinetic_energy(state, params, world) + 0.5 * params.door_stiffness * state.door_angle * state.door_angle;
    if state.grasped {
        let stretch = spring_stretch(state, world);
        e += 0.5 * world.coupling_stiffness_n_per_m * (stretch[0].powi(2) + stretch[1].powi(2));
    }
    e
}

/// One semi-implicit Euler step of the coupled arm/door system.
///
/// Joint damping, hinge damping and hinge friction are integrated implicitly
/// (friction through its secant coefficient), so the dissipative terms never
/// reverse a velocity.
pub fn step(
    state: &SimState,
    q_des: [f64; 2],
    qdot_des: [f64; 2],
    params: &DynParams,
    world: &WorldConfig,
) -> Result<StepOutput> {
    let dt = world.dt_s;
    let q = state.q;
    let qd = state.qdot;
    let kp = world.pd_kp_nm_per_rad;
    let kd = world.pd_kd_nms_per_rad;
    let torque = [
        kp[0] * (q_des[0] - q[0]) + kd[0] * (qdot_des[0] - qd[0]),
        kp[1] * (q_des[1] - q[1]) + kd[1] * (qdot_des[1] - qd[1]),
    ];

    let jac = jacobian(q, world);
    let v_ee = mat_vec(jac, qd);
    let tangent = world.knob_tangent(state.door_angle);

    let coupling_force = if state.grasped {
        let stretch = spring_stretch(state, world);
        let k = world.coupling_stiffness_n_per_m;
        let c = world.coupling_damping_ns_per_m;
        [
            k * stretch[0] + c * (tangent[0] * state.door_rate - v_ee[0]),
            k * stretch[1] + c * (tangent[1] * state.door_rate - v_ee[1]),
        ]
    } else {
        [0.0; 2]
    };
    let slipped = state.grasped && norm(coupling_force) > params.slide_friction * world.grip_force_n;
    let grasped = state.grasped && !slipped;
    let applied = if grasped { coupling_force } else { [0.0; 2] };

    // arm: (M + dt·D) q̇' = M q̇ + dt (τ − c(q, q̇) + Jᵀ F)
    let m = mass_matrix(q, world);
    let [l1, l2] = world.link_lengths_m;
    let h = world.link_masses_kg[1] * l1 * l2 * q[1].sin();
    let coriolis = [-h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), h * qd[0] * qd[0]];
    let jt_f = [
        jac[0][0] * applied[0] + jac[1][0] * applied[1],
        jac[0][1] * applied[0] + jac[1][1] * applied[1],
    ];
    let mv = mat_vec(m, qd);
    let rhs = [
        mv[0] + dt * (torque[0] - coriolis[0] + jt_f[0]),
        mv[1] + dt * (torque[1] - coriolis[1] + jt_f[1]),
    ];
    let lhs = [
        [m[0][0] + dt * params.joint_damping[0], m[0][1]],
        [m[1][0], m[1][1] + dt * params.joint_damping[1]],
    ];
    let qdot_next = solve2(lhs, rhs);

    // door: generalized force from the knob reaction −F
    let inertia = params.door_inertia(world.knob_radius_m);
    let load = -(applied[0] * tangent[0] + applied[1] * tangent[1]);
    let rate = state.door_rate;
    let friction_coeff = if rate.abs() < 1e-12 {
        params.door_friction_loss / FRICTION_SMOOTHING
    } else {
        params.door_friction_loss * (rate / FRICTION_SMOOTHING).tanh() / rate
    };
    let mut door_rate = (inertia * rate + dt * (load - params.door_stiffness * state.door_angle))
        / (inertia + dt * (params.door_damping + friction_coeff));

    let mut door_angle = state.door_angle + dt * door_rate;
    let (lo, hi) = DOOR_ANGLE_LIMITS;
    if door_angle < lo {
        door_angle = lo;
        door_rate = door_rate.max(0.0);
    } else if door_angle > hi {
        door_angle = hi;
        door_rate = door_rate.min(0.0);
    }

    let next = SimState {
        q: [q[0] + dt * qdot_next[0], q[1] + dt * qdot_next[1]],
        qdot: qdot_next,
        door_angle,
        door_rate,
        grasped,
        grasp_offset: state.grasp_offset,
        time: state.time + dt,
    };
    let too_fast = next
        .qdot
        .iter()
        .chain([next.door_rate].iter())
        .any(|v| v.abs() > DIVERGENCE_SPEED);
    if !next.is_finite() || too_fast || !torque.iter().all(|t| t.is_finite()) {
        return Err(Error::SimulationDiverged { time: next.time });
    }
    Ok(StepOutput {
        state: next,
        torque,
        coupling_force,
    })
}

/// Knob minus gripper, minus the grasp rest offset.
fn spring_stretch(state: &SimState, world: &WorldConfig) -> [f64; 2] {
    let (ee, _) = forward_kinematics(state.q, world);
    let knob = world.knob_position(state.door_angle);
    [
        knob[0] - ee[0] - state.grasp_offset[0],
        knob[1] - ee[1] - state.grasp_offset[1],
    ]
}

fn mat_vec(m: [[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> [f64; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        (b[0] * a[1][1] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ]
}

pub(crate) fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}
