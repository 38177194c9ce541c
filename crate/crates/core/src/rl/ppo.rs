use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::env::{env_reset, env_step, sample_action, ParamSource, ACTION_SCALE, SUCCESS_ANGLE};
use super::net::{log_prob, PolicyNet, ACT_DIM, OBS_DIM};
use super::{PpoConfig, RewardWeights};
use crate::error::{Error, Result};
use crate::sim::WorldConfig;

/// One timestep of collected experience.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    /// Observation as fed to the network (already normalized).
    pub obs: [f64; OBS_DIM],
    /// Unscaled action drawn from the Gaussian head.
    pub action: [f64; ACT_DIM],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PpoDiagnostics {
    pub mean_ratio: f64,
    pub clip_frac: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// Generalized advantage estimation over one trajectory segment.
/// `terminal_value` bootstraps past the last step (0 for a true terminal).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    terminal_value: f64,
    discount: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::InvalidInput(format!(
            "{} rewards but {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { terminal_value };
        let delta = rewards[t] + discount * next_value - values[t];
        running = delta + discount * gae_lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Per-sample clipped surrogate `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Sums collected while evaluating a minibatch loss.
#[derive(Debug, Clone, Copy, Default)]
struct LossStats {
    ratio_sum: f64,
    clipped: usize,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
}

/// Minibatch loss `−surrogate + c_v·MSE − c_e·entropy` (all batch means)
/// and its gradient with respect to `net.params`.
pub fn ppo_loss_and_grad(net: &PolicyNet, samples: &[Sample], cfg: &PpoConfig) -> (f64, Vec<f64>) {
    let (loss, grad, _) = loss_and_grad(net, samples, cfg);
    (loss, grad)
}

fn loss_and_grad(net: &PolicyNet, samples: &[Sample], cfg: &PpoConfig) -> (f64, Vec<f64>, LossStats) {
    let mut grad = vec![0.0; net.params.len()];
    let mut stats = LossStats::default();
    let scale = 1.0 / samples.len() as f64;
    let half_log_two_pi_e = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    for s in samples {
        let f = net.forward(&s.obs);
        let lp = log_prob(f.mean, f.log_std, s.action);
        let ratio = (lp - s.old_log_prob).exp();
        let a = s.advantage;
        let surrogate = clipped_surrogate(ratio, a, cfg.clip);
        let clipped_branch = (a >= 0.0 && ratio > 1.0 + cfg.clip) || (a < 0.0 && ratio < 1.0 - cfg.clip);
        if (ratio - 1.0).abs() > cfg.clip {
            stats.clipped += 1;
        }
        stats.ratio_sum += ratio;
        stats.policy_loss -= surrogate * scale;

        let err = f.value - s.ret;
        stats.value_loss += err * err * scale;
        let entropy: f64 = f.log_std.iter().map(|l| l + half_log_two_pi_e).sum();
        stats.entropy += entropy * scale;

        // d(−surrogate)/d(log π) = −A·r on the unclipped branch, else 0
        let d_lp = if clipped_branch { 0.0 } else { -a * ratio * scale };
        let mut d_mean = [0.0; ACT_DIM];
        let mut d_log_std = [0.0; ACT_DIM];
        for j in 0..ACT_DIM {
            let inv_var = (-2.0 * f.log_std[j]).exp();
            let diff = s.action[j] - f.mean[j];
            d_mean[j] = d_lp * diff * inv_var;
            d_log_std[j] = d_lp * (diff * diff * inv_var - 1.0) - cfg.entropy_coef * scale;
        }
        let d_value = 2.0 * cfg.value_coef * err * scale;
        net.backward(&s.obs, &f, d_mean, d_log_std, d_value, &mut grad);
    }
    let loss = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * stats.entropy;
    (loss, grad, stats)
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learn_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(len: usize, learn_rate: f64) -> Self {
        Adam {
            learn_rate,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learn_rate * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Clipped-surrogate policy/value update over `epochs_per_update` passes of
/// shuffled minibatches. Advantages are standardized over the whole batch
/// first.
pub fn ppo_update(
    net: &PolicyNet,
    batch: &[Sample],
    cfg: &PpoConfig,
    opt: &mut Adam,
    shuffle_seed: u64,
) -> Result<(PolicyNet, PpoDiagnostics)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty PPO batch".into()));
    }
    let n = batch.len() as f64;
    let mean_adv = batch.iter().map(|s| s.advantage).sum::<f64>() / n;
    let std_adv = (batch.iter().map(|s| (s.advantage - mean_adv).powi(2)).sum::<f64>() / n).sqrt();
    let samples: Vec<Sample> = batch
        .iter()
        .map(|s| Sample {
            advantage: (s.advantage - mean_adv) / (std_adv + 1e-8),
            ..*s
        })
        .collect();

    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut totals = LossStats::default();
    let mut evaluated = 0usize;
    let mut steps = 0usize;
    for _ in 0..cfg.epochs_per_update {
        idx.shuffle(&mut rng);
        for chunk in idx.chunks(cfg.minibatch) {
            let mb: Vec<Sample> = chunk.iter().map(|&i| samples[i]).collect();
            let (loss, mut grad, stats) = loss_and_grad(&net, &mb, cfg);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::DivergedUpdate(format!("non-finite loss {loss}")));
            }
            if cfg.max_grad_norm > 0.0 {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > cfg.max_grad_norm {
                    let k = cfg.max_grad_norm / norm;
                    grad.iter_mut().for_each(|g| *g *= k);
                }
            }
            opt.step(&mut net.params, &grad);
            net.clamp_log_std();
            totals.ratio_sum += stats.ratio_sum;
            totals.clipped += stats.clipped;
            totals.policy_loss += stats.policy_loss;
            totals.value_loss += stats.value_loss;
            totals.entropy += stats.entropy;
            evaluated += mb.len();
            steps += 1;
        }
    }
    if steps == 0 {
        let (_, _, stats) = loss_and_grad(&net, &samples, cfg);
        totals = stats;
        evaluated = samples.len();
        steps = 1;
    }
    if !net.is_finite() {
        return Err(Error::DivergedUpdate("non-finite weights after update".into()));
    }
    Ok((
        net,
        PpoDiagnostics {
            mean_ratio: totals.ratio_sum / evaluated as f64,
            clip_frac: totals.clipped as f64 / evaluated as f64,
            policy_loss: totals.policy_loss / steps as f64,
            value_loss: totals.value_loss / steps as f64,
            entropy: totals.entropy / steps as f64,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub update: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub clip_frac: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("update,mean_return,success_rate,clip_frac\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.update, r.mean_return, r.success_rate, r.clip_frac
            ));
        }
        out
    }
}

struct Episode {
    samples: Vec<Sample>,
    raw_obs: Vec<[f64; OBS_DIM]>,
    total_reward: f64,
    success: bool,
}

fn collect_episode(
    net: &PolicyNet,
    source: &ParamSource,
    world: &WorldConfig,
    w: &RewardWeights,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<Episode> {
    let (mut state, mut obs, params) = env_reset(source, world, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut xs = Vec::new();
    let mut raw_obs = Vec::new();
    let mut actions = Vec::new();
    let mut log_probs = Vec::new();
    let mut values = Vec::new();
    let mut rewards = Vec::new();
    let mut max_angle = state.door_angle;
    let terminal_value = loop {
        let raw = obs.to_array();
        let x = net.obs_norm.normalize(&raw);
        let f = net.forward(&x);
        let (action, lp) = sample_action(f.mean, f.log_std, &mut rng);
        let tr = env_step(&state, &params, action.map(|a| a * ACTION_SCALE), world, w, cfg.horizon)?;
        xs.push(x);
        raw_obs.push(raw);
        actions.push(action);
        log_probs.push(lp);
        values.push(f.value);
        rewards.push(tr.reward);
        max_angle = max_angle.max(tr.state.door_angle);
        state = tr.state;
        obs = tr.obs;
        if tr.done {
            break if tr.truncated {
                net.forward(&net.obs_norm.normalize(&obs.to_array())).value
            } else {
                0.0
            };
        }
    };
    let (adv, ret) = gae(&rewards, &values, terminal_value, cfg.discount, cfg.gae_lambda)?;
    let samples = (0..rewards.len())
        .map(|t| Sample {
            obs: xs[t],
            action: actions[t],
            old_log_prob: log_probs[t],
            advantage: adv[t],
            ret: ret[t],
        })
        .collect();
    Ok(Episode {
        samples,
        raw_obs,
        total_reward: rewards.iter().sum(),
        success: max_angle > SUCCESS_ANGLE,
    })
}

/// Trains a fresh policy with PPO, drawing new dynamics at every episode
/// reset. Fully determined by `cfg.seed`.
pub fn train_policy(
    source: &ParamSource,
    world: &WorldConfig,
    w: &RewardWeights,
    cfg: &PpoConfig,
) -> Result<(PolicyNet, LearningCurve)> {
    source.validate()?;
    world.validate()?;
    w.validate()?;
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = PolicyNet::new(master.next_u64());
    let mut opt = Adam::new(net.params.len(), cfg.learn_rate);
    let mut curve = LearningCurve::default();
    for update in 0..cfg.total_updates {
        let mut batch = Vec::new();
        let mut raw_obs = Vec::new();
        let mut returns = 0.0;
        let mut successes = 0usize;
        for _ in 0..cfg.rollout_episodes_per_update {
            let ep = collect_episode(&net, source, world, w, cfg, master.next_u64())?;
            batch.extend(ep.samples);
            raw_obs.extend(ep.raw_obs);
            returns += ep.total_reward;
            successes += ep.success as usize;
        }
        let (next, diag) = ppo_update(&net, &batch, cfg, &mut opt, master.next_u64())?;
        net = next;
        net.obs_norm.update(&raw_obs);
        let episodes = cfg.rollout_episodes_per_update as f64;
        curve.rows.push(CurveRow {
            update,
            mean_return: returns / episodes,
            success_rate: successes as f64 / episodes,
            clip_frac: diag.clip_frac,
        });
    }
    Ok((net, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_telescopes_with_unit_factors() {
        let r = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 0.1, -0.4, 2.0];
        let (adv, ret) = gae(&r, &v, 0.0, 1.0, 1.0).unwrap();
        for t in 0..4 {
            let tail: f64 = r[t..].iter().sum();
            assert!((adv[t] - (tail - v[t])).abs() < 1e-12);
            assert!((ret[t] - tail).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_zero_lambda_is_one_step_td() {
        let r = [1.0, -2.0, 0.5];
        let v = [0.3, 0.1, -0.4];
        let (adv, _) = gae(&r, &v, 0.7, 0.9, 0.0).unwrap();
        let next = [0.1, -0.4, 0.7];
        for t in 0..3 {
            assert!((adv[t] - (r[t] + 0.9 * next[t] - v[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_hand_recursion() {
        let (adv, _) = gae(&[1.0; 3], &[0.0; 3], 0.0, 0.9, 0.95).unwrap();
        assert!((adv[2] - 1.0).abs() < 1e-12);
        assert!((adv[1] - 1.855).abs() < 1e-12);
        assert!((adv[0] - (1.0 + 0.855 * 1.855)).abs() < 1e-12);
        assert!(gae(&[1.0], &[], 0.0, 0.9, 0.95).is_err());
    }

    #[test]
    fn surrogate_clips_at_one_plus_eps() {
        assert!((clipped_surrogate(1.4, 2.0, 0.2) - 1.2 * 2.0).abs() < 1e-12);
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
        assert_eq!(clipped_surrogate(1.1, 1.0, 0.2), 1.1);
    }

    fn batch(net: &PolicyNet, n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|i| {
                let obs = [i as f64 * 0.1, -0.3, 0.2, 0.0, 0.5, -0.1, 0.05 * i as f64, 0.0];
                let f = net.forward(&obs);
                let (action, lp) = sample_action(f.mean, f.log_std, &mut rng);
                Sample {
                    obs,
                    action,
                    old_log_prob: lp,
                    advantage: (i as f64 - 2.0) * 0.7,
                    ret: 0.4 * i as f64,
                }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leave_the_net_unchanged() {
        let net = PolicyNet::new(2);
        let cfg = PpoConfig {
            epochs_per_update: 0,
            ..PpoConfig::default()
        };
        let b = batch(&net, 6);
        let mut opt = Adam::new(net.params.len(), cfg.learn_rate);
        let (after, diag) = ppo_update(&net, &b, &cfg, &mut opt, 0).unwrap();
        assert_eq!(after, net);
        assert_eq!(diag.mean_ratio, 1.0);
        assert_eq!(diag.clip_frac, 0.0);
    }

    #[test]
    fn update_moves_weights_and_is_seeded() {
        let net = PolicyNet::new(2);
        let cfg = PpoConfig {
            epochs_per_update: 2,
            minibatch: 4,
            ..PpoConfig::default()
        };
        let b = batch(&net, 10);
        let mut o1 = Adam::new(net.params.len(), cfg.learn_rate);
        let mut o2 = o1.clone();
        let (a, _) = ppo_update(&net, &b, &cfg, &mut o1, 3).unwrap();
        let (c, _) = ppo_update(&net, &b, &cfg, &mut o2, 3).unwrap();
        assert_ne!(a, net);
        assert_eq!(a, c);
        assert!(ppo_update(&net, &[], &cfg, &mut o1, 3).is_err());
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let net = PolicyNet::new(11);
        let cfg = PpoConfig::default();
        let mut b = batch(&net, 8);
        // move the policy a little so both clip branches and ratios ≠ 1 occur
        for (i, s) in b.iter_mut().enumerate() {
            s.old_log_prob += 0.15 * (i as f64 - 4.0);
        }
        let (_, grad) = ppo_loss_and_grad(&net, &b, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picks: Vec<usize> = (0..10).map(|_| (rng.next_u64() as usize) % net.params.len()).collect();
        let h = 1e-6;
        for &i in picks.iter().chain([net.params.len() - 1, net.params.len() - 3].iter()) {
            let mut plus = net.clone();
            plus.params[i] += h;
            let mut minus = net.clone();
            minus.params[i] -= h;
            let fd = (ppo_loss_and_grad(&plus, &b, &cfg).0 - ppo_loss_and_grad(&minus, &b, &cfg).0) / (2.0 * h);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(
                err < 1e-4 || (fd - grad[i]).abs() < 1e-9,
                "param {i}: fd {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn adam_first_step_moves_by_learn_rate() {
        let mut opt = Adam::new(2, 0.01);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }
}
