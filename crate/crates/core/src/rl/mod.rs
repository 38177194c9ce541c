//! Door-opening task and a from-scratch PPO learner.
//!
//! The agent controls joint position-target offsets at 50 Hz over the 1 kHz
//! simulator and is rewarded for opening the door without slipping off the
//! knob. Episodes draw their dynamics from a [`ParamSource`], which is either
//! a fixed parameter vector or a distribution sampled at every reset.

mod env;
mod net;
mod ppo;

pub use env::{
    env_reset, env_step, grasp_pose, reward, run_episode, EpisodeLog, MdpObservation, ParamSource, Transition,
    ACTION_SCALE, CONTROL_DECIMATION, MAX_ACTION, RESET_JITTER, SLIP_PENALTY, SUCCESS_ANGLE, TERMINAL_ANGLE,
};
pub use net::{log_prob, policy_eval, ObsNorm, PolicyNet, ACT_DIM, HIDDEN, LOG_STD_RANGE, OBS_DIM};
pub use ppo::{
    clipped_surrogate, gae, ppo_loss_and_grad, ppo_update, train_policy, Adam, CurveRow, LearningCurve, PpoDiagnostics,
    Sample,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the five reward terms and the door angle above which the
/// distance terms are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub door: f64,
    pub orientation: f64,
    pub distance: f64,
    pub log_distance: f64,
    pub slip: f64,
    pub switch_angle: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            door: 30.0,
            orientation: 0.1,
            distance: 1.0,
            log_distance: 0.001,
            slip: 2.0,
            switch_angle: 30f64.to_radians(),
        }
    }
}

impl RewardWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.door, self.orientation, self.distance, self.log_distance, self.slip]
    }

    pub fn validate(&self) -> Result<()> {
        let names = ["door", "orientation", "distance", "log_distance", "slip"];
        for (name, w) in names.iter().zip(self.as_array()) {
            if !w.is_finite() {
                return Err(Error::Validation {
                    field: format!("reward.{name}"),
                    reason: "must be finite".into(),
                });
            }
        }
        if !(self.switch_angle > 0.0 && self.switch_angle < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Validation {
                field: "reward.switch_angle".into(),
                reason: format!("must lie in (0, π/2), got {}", self.switch_angle),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub learn_rate: f64,
    pub minibatch: usize,
    pub epochs_per_update: usize,
    /// Episode length cap in control steps.
    pub horizon: usize,
    pub rollout_episodes_per_update: usize,
    pub total_updates: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Global gradient-norm clip per minibatch step; 0 disables it.
    pub max_grad_norm: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            discount: 0.99,
            gae_lambda: 0.95,
            learn_rate: 1e-3,
            minibatch: 64,
            epochs_per_update: 10,
            horizon: 512,
            rollout_episodes_per_update: 4,
            total_updates: 300,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Error::Validation {
            field: format!("ppo.{field}"),
            reason,
        };
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(bad("discount", format!("must lie in (0, 1], got {}", self.discount)));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(bad(
                "gae_lambda",
                format!("must lie in [0, 1], got {}", self.gae_lambda),
            ));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(bad("clip", format!("must be positive, got {}", self.clip)));
        }
        if !(self.learn_rate > 0.0 && self.learn_rate.is_finite()) {
            return Err(bad("learn_rate", format!("must be positive, got {}", self.learn_rate)));
        }
        if self.minibatch == 0 {
            return Err(bad("minibatch", "must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(bad("horizon", "must be at least 1".into()));
        }
        if self.rollout_episodes_per_update == 0 {
            return Err(bad("rollout_episodes_per_update", "must be at least 1".into()));
        }
        for (field, v) in [
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(bad(field, format!("must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}
