use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{log_prob, PolicyNet, ACT_DIM, OBS_DIM};
use super::RewardWeights;
use crate::error::{Error, Result};
use crate::identify::ParamDistribution;
use crate::sim::{forward_kinematics, inverse_kinematics, step, DemoPose, DynParams, SimState, WorldConfig};

/// Physics steps per control step (50 Hz control over 1 kHz physics).
pub const CONTROL_DECIMATION: usize = 20;
/// Per-step bound on the joint target offset, rad.
pub const MAX_ACTION: f64 = 0.05;
/// Policy outputs are multiplied by this before clamping, so a unit-scale
/// Gaussian head covers the admissible offset range.
pub const ACTION_SCALE: f64 = MAX_ACTION;
/// Half-width of the uniform joint jitter applied at reset, rad.
pub const RESET_JITTER: f64 = 0.02;
/// Terminal reward when the grasp breaks or the simulation diverges.
pub const SLIP_PENALTY: f64 = -5.0;
/// Door angle that counts as an opened door.
pub const SUCCESS_ANGLE: f64 = 30.0 * std::f64::consts::PI / 180.0;
/// Door angle that ends the episode.
pub const TERMINAL_ANGLE: f64 = 85.0 * std::f64::consts::PI / 180.0;

/// Slip ratios above this saturate the slip term; the grasp is lost anyway.
const SLIP_RATIO_CAP: f64 = 2.0;

/// Where episode dynamics come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParamSource {
    Fixed(DynParams),
    Distribution(ParamDistribution),
}

impl ParamSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            ParamSource::Fixed(p) => p.validate(),
            ParamSource::Distribution(d) => d.validate(),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<DynParams> {
        match self {
            ParamSource::Fixed(p) => Ok(*p),
            ParamSource::Distribution(d) => d.sample(rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdpObservation {
    pub q: [f64; 2],
    pub qdot: [f64; 2],
    /// Knob minus gripper contact point, m.
    pub knob_rel: [f64; 2],
    pub door_angle: f64,
    pub door_rate: f64,
}

impl MdpObservation {
    pub fn of(state: &SimState, world: &WorldConfig) -> Self {
        MdpObservation {
            q: state.q,
            qdot: state.qdot,
            knob_rel: state.knob_rel(world),
            door_angle: state.door_angle,
            door_rate: state.door_rate,
        }
    }

    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [
            self.q[0],
            self.q[1],
            self.qdot[0],
            self.qdot[1],
            self.knob_rel[0],
            self.knob_rel[1],
            self.door_angle,
            self.door_rate,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: SimState,
    pub obs: MdpObservation,
    pub reward: f64,
    pub done: bool,
    /// Ended by the horizon rather than by the task.
    pub truncated: bool,
    /// Largest grasp force norm over the inner physics steps, N.
    pub peak_coupling_force: f64,
}

/// Joint angles that put the gripper on the knob of the closed door.
pub fn grasp_pose(world: &WorldConfig) -> Result<[f64; 2]> {
    inverse_kinematics(world.knob_position(0.0), DemoPose::A.elbow_sign(), world)
}

/// Door-opening reward for one control step.
///
/// Below the switch angle all five terms apply; above it the two distance
/// terms are dropped.
pub fn reward(
    prev: &SimState,
    curr: &SimState,
    coupling_force: f64,
    params: &DynParams,
    world: &WorldConfig,
    w: &RewardWeights,
) -> f64 {
    let r_door = curr.door_angle - prev.door_angle;

    let (_, heading) = forward_kinematics(curr.q, world);
    let t = world.knob_tangent(curr.door_angle);
    let r_ori = -(heading - t[1].atan2(t[0])).cos().abs();

    let rel = curr.knob_rel(world);
    let d = rel[0].hypot(rel[1]);
    let r_dist = -d;
    let r_log_dist = -(d + 1e-4).ln();

    let threshold = params.slide_friction * world.grip_force_n;
    let ratio = if threshold > 0.0 {
        (coupling_force / threshold).min(SLIP_RATIO_CAP)
    } else if coupling_force > 0.0 {
        SLIP_RATIO_CAP
    } else {
        0.0
    };
    let r_slip = -(ratio - 0.8).max(0.0);

    let base = w.door * r_door + w.orientation * r_ori + w.slip * r_slip;
    if curr.door_angle < w.switch_angle {
        base + w.distance * r_dist + w.log_distance * r_log_dist
    } else {
        base
    }
}

/// Starts an episode: draws the dynamics, then places the arm on the knob of
/// the closed door with uniform joint jitter. The grasp spring starts at rest.
pub fn env_reset(
    source: &ParamSource,
    world: &WorldConfig,
    seed: u64,
) -> Result<(SimState, MdpObservation, DynParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = source.draw(&mut rng)?;
    let q0 = grasp_pose(world)?;
    let q = [
        q0[0] + rng.random_range(-RESET_JITTER..=RESET_JITTER),
        q0[1] + rng.random_range(-RESET_JITTER..=RESET_JITTER),
    ];
    let state = SimState::grasping(q, world);
    Ok((state, MdpObservation::of(&state, world), params))
}

/// Applies one control action for [`CONTROL_DECIMATION`] physics steps.
///
/// The episode ends when the door reaches [`TERMINAL_ANGLE`], the grasp
/// breaks or the simulation diverges (both with [`SLIP_PENALTY`] added), or
/// after `horizon` control steps.
pub fn env_step(
    state: &SimState,
    params: &DynParams,
    action: [f64; ACT_DIM],
    world: &WorldConfig,
    w: &RewardWeights,
    horizon: usize,
) -> Result<Transition> {
    let a = action.map(|v| {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(-MAX_ACTION, MAX_ACTION)
        }
    });
    let target = [state.q[0] + a[0], state.q[1] + a[1]];
    let step_index = (state.time / (world.dt_s * CONTROL_DECIMATION as f64)).round() as usize;

    let mut curr = *state;
    let mut peak: f64 = 0.0;
    let mut diverged = false;
    for _ in 0..CONTROL_DECIMATION {
        match step(&curr, target, [0.0; 2], params, world) {
            Ok(out) => {
                peak = peak.max(out.coupling_force_norm());
                curr = out.state;
                if !curr.grasped {
                    break;
                }
            }
            Err(Error::SimulationDiverged { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let mut r = reward(state, &curr, peak, params, world, w);
    let failed = diverged || !curr.grasped;
    if failed {
        r += SLIP_PENALTY;
    }
    let finished = failed || curr.door_angle >= TERMINAL_ANGLE;
    let truncated = !finished && step_index + 1 >= horizon;
    Ok(Transition {
        state: curr,
        obs: MdpObservation::of(&curr, world),
        reward: r,
        done: finished || truncated,
        truncated,
        peak_coupling_force: peak,
    })
}

/// Outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub seed: u64,
    pub total_reward: f64,
    pub steps: usize,
    /// Largest door angle reached, rad.
    pub max_angle: f64,
    /// First control step (1-based) after which the door exceeded the
    /// success angle.
    pub steps_to_success: Option<usize>,
    pub grasp_lost: bool,
}

impl EpisodeLog {
    pub fn success(&self) -> bool {
        self.max_angle > SUCCESS_ANGLE
    }
}

/// Rolls out the policy mean (no exploration noise) on fixed dynamics.
pub fn run_episode(
    net: &PolicyNet,
    params: &DynParams,
    world: &WorldConfig,
    w: &RewardWeights,
    horizon: usize,
    seed: u64,
) -> Result<EpisodeLog> {
    let (mut state, mut obs, _) = env_reset(&ParamSource::Fixed(*params), world, seed)?;
    let mut log = EpisodeLog {
        seed,
        total_reward: 0.0,
        steps: 0,
        max_angle: state.door_angle,
        steps_to_success: None,
        grasp_lost: false,
    };
    loop {
        let out = net.forward(&net.obs_norm.normalize(&obs.to_array()));
        let action = out.mean.map(|m| m * ACTION_SCALE);
        let tr = env_step(&state, params, action, world, w, horizon)?;
        log.steps += 1;
        log.total_reward += tr.reward;
        log.max_angle = log.max_angle.max(tr.state.door_angle);
        if log.steps_to_success.is_none() && tr.state.door_angle > SUCCESS_ANGLE {
            log.steps_to_success = Some(log.steps);
        }
        state = tr.state;
        obs = tr.obs;
        if tr.done {
            log.grasp_lost = !state.grasped;
            return Ok(log);
        }
    }
}

/// Samples an action from the Gaussian head; returns the raw (unscaled)
/// action and its log-density.
pub(crate) fn sample_action(
    mean: [f64; ACT_DIM],
    log_std: [f64; ACT_DIM],
    rng: &mut ChaCha8Rng,
) -> ([f64; ACT_DIM], f64) {
    let mut raw = [0.0; ACT_DIM];
    for j in 0..ACT_DIM {
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        raw[j] = mean[j] + log_std[j].exp() * z;
    }
    (raw, log_prob(mean, log_std, raw))
}
