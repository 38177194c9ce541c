use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    forward_kinematics, inverse_kinematics, step, DynParams, SimState, Trajectory, TrajectoryMeta, WorldConfig,
};
use crate::error::{Error, Result};

/// Which IK branch the demonstration uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DemoPose {
    #[default]
    A,
    /// Opposite elbow branch.
    B,
}

impl DemoPose {
    pub fn elbow_sign(self) -> f64 {
        match self {
            DemoPose::A => -1.0,
            DemoPose::B => 1.0,
        }
    }
}

/// Minimum-jerk time scaling on `[0, 1]`.
pub fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Joint targets that drag the knob along its arc from closed to `angle_target`.
pub fn synth_demo(world: &WorldConfig, angle_target: f64, duration: f64, pose: DemoPose) -> Result<Vec<[f64; 2]>> {
    world.validate()?;
    if !(duration > 0.0 && duration.is_finite()) || !angle_target.is_finite() {
        return Err(Error::InvalidInput(format!(
            "demo needs a positive duration and finite angle, got {duration} s / {angle_target} rad"
        )));
    }
    let samples = ((duration / world.dt_s).round() as usize).max(2);
    (0..samples)
        .map(|i| {
            let phase = i as f64 * world.dt_s / duration;
            let knob = world.knob_position(angle_target * min_jerk(phase));
            inverse_kinematics(knob, pose.elbow_sign(), world)
        })
        .collect()
}

/// Opens to `angle_target`, holds for `hold` seconds, closes along the same
/// path and holds again. Reversing the motion separates velocity-dependent
/// hinge losses from the spring torque, which does not change sign.
pub fn round_trip_demo(
    world: &WorldConfig,
    angle_target: f64,
    duration: f64,
    hold: f64,
    pose: DemoPose,
) -> Result<Vec<[f64; 2]>> {
    if !(hold >= 0.0 && hold.is_finite()) {
        return Err(Error::InvalidInput(format!("hold must be non-negative, got {hold} s")));
    }
    let open = synth_demo(world, angle_target, duration, pose)?;
    let hold_samples = (hold / world.dt_s).round() as usize;
    let mut out = Vec::with_capacity(2 * (open.len() + hold_samples));
    out.extend_from_slice(&open);
    out.extend(std::iter::repeat_n(open[open.len() - 1], hold_samples));
    out.extend(open.iter().rev());
    out.extend(std::iter::repeat_n(open[0], hold_samples));
    Ok(out)
}

/// Tracks `q_desired` with the PD controller and records the torque trace.
///
/// The run fails if the grasp breaks before the last step or the door never
/// reaches half of the largest demanded opening angle. Sample `i` pairs the state at `t = i·dt` with the torque applied over the
/// following step. Noise, when seeded, is added to the recorded torques only.
pub fn playback(
    q_desired: &[[f64; 2]],
    params: &DynParams,
    world: &WorldConfig,
    noise_seed: Option<u64>,
) -> Result<Trajectory> {
    let mut traj = playback_clean(q_desired, params, world)?;
    if let Some(seed) = noise_seed {
        add_sensor_noise(&mut traj, world.noise_std_nm, seed);
    }
    Ok(traj)
}

/// `count` noisy recordings of the same underlying rollout, seeded
/// `base_seed..base_seed + count`.
pub fn gen_real_rollouts(
    q_desired: &[[f64; 2]],
    params: &DynParams,
    world: &WorldConfig,
    count: usize,
    base_seed: u64,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::InvalidInput("need at least one reference rollout".into()));
    }
    let clean = playback_clean(q_desired, params, world)?;
    Ok((0..count as u64)
        .map(|k| {
            let mut t = clean.clone();
            add_sensor_noise(&mut t, world.noise_std_nm, base_seed.wrapping_add(k));
            t
        })
        .collect())
}

fn playback_clean(q_desired: &[[f64; 2]], params: &DynParams, world: &WorldConfig) -> Result<Trajectory> {
    if q_desired.len() < 2 {
        return Err(Error::InvalidInput(
            "desired trajectory needs at least two samples".into(),
        ));
    }
    let dt = world.dt_s;
    let n = q_desired.len();
    let target_angle = q_desired
        .iter()
        .map(|q| world.door_angle_of(forward_kinematics(*q, world).0))
        .fold(f64::NEG_INFINITY, f64::max);

    let mut state = SimState::grasping(q_desired[0], world);
    let mut traj = Trajectory::with_capacity(dt, n);
    let mut lost_grasp = false;
    let mut peak_angle = f64::NEG_INFINITY;
    for i in 0..n {
        let qdot_des = finite_difference(q_desired, i, dt);
        let out = step(&state, q_desired[i], qdot_des, params, world)?;
        traj.q_desired.push(q_desired[i]);
        traj.q_actual.push(state.q);
        traj.torque.push(out.torque);
        traj.door_angle.push(state.door_angle);
        peak_angle = peak_angle.max(out.state.door_angle);
        if !out.state.grasped && i + 1 < n {
            lost_grasp = true;
        }
        state = out.state;
    }
    traj.failed = lost_grasp || peak_angle < 0.5 * target_angle;
    traj.meta = TrajectoryMeta {
        seed: None,
        world_hash: world.hash(),
        params_hash: params.hash(),
    };
    Ok(traj)
}

fn finite_difference(q: &[[f64; 2]], i: usize, dt: f64) -> [f64; 2] {
    let n = q.len();
    let (a, b, span) = if i == 0 {
        (0, 1, dt)
    } else if i == n - 1 {
        (n - 2, n - 1, dt)
    } else {
        (i - 1, i + 1, 2.0 * dt)
    };
    [(q[b][0] - q[a][0]) / span, (q[b][1] - q[a][1]) / span]
}

fn add_sensor_noise(traj: &mut Trajectory, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for tau in &mut traj.torque {
        for t in tau.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *t += std * z;
        }
    }
    traj.meta.seed = Some(seed);
}
