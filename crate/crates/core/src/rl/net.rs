use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OBS_DIM: usize = 8;
pub const ACT_DIM: usize = 2;
pub const HIDDEN: usize = 64;
pub const LOG_STD_RANGE: (f64, f64) = (-5.0, 2.0);

const ACTOR_WIDTHS: [usize; 4] = [OBS_DIM, HIDDEN, HIDDEN, ACT_DIM];
const CRITIC_WIDTHS: [usize; 4] = [OBS_DIM, HIDDEN, HIDDEN, 1];
const INITIAL_LOG_STD: f64 = -0.5;
const NORM_CLIP: f64 = 10.0;

const fn mlp_len(widths: [usize; 4]) -> usize {
    let mut total = 0;
    let mut i = 0;
    while i + 1 < widths.len() {
        total += widths[i] * widths[i + 1] + widths[i + 1];
        i += 1;
    }
    total
}

const ACTOR_LEN: usize = mlp_len(ACTOR_WIDTHS);
const CRITIC_LEN: usize = mlp_len(CRITIC_WIDTHS);
const LOG_STD_OFFSET: usize = ACTOR_LEN + CRITIC_LEN;
const PARAM_LEN: usize = LOG_STD_OFFSET + ACT_DIM;

/// Running mean and standard deviation of observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsNorm {
    pub mean: [f64; OBS_DIM],
    pub std: [f64; OBS_DIM],
    pub count: f64,
}

impl Default for ObsNorm {
    fn default() -> Self {
        ObsNorm {
            mean: [0.0; OBS_DIM],
            std: [1.0; OBS_DIM],
            count: 0.0,
        }
    }
}

impl ObsNorm {
    pub fn normalize(&self, obs: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        for i in 0..OBS_DIM {
            out[i] = ((obs[i] - self.mean[i]) / (self.std[i] + 1e-8)).clamp(-NORM_CLIP, NORM_CLIP);
        }
        out
    }

    /// Merges the moments of `batch` into the running estimate.
    pub fn update(&mut self, batch: &[[f64; OBS_DIM]]) {
        if batch.is_empty() {
            return;
        }
        let n = batch.len() as f64;
        let total = self.count + n;
        for i in 0..OBS_DIM {
            let mean_b = batch.iter().map(|o| o[i]).sum::<f64>() / n;
            let var_b = batch.iter().map(|o| (o[i] - mean_b).powi(2)).sum::<f64>() / n;
            let delta = mean_b - self.mean[i];
            let var_a = if self.count > 0.0 {
                self.std[i] * self.std[i]
            } else {
                0.0
            };
            let m2 = var_a * self.count + var_b * n + delta * delta * self.count * n / total;
            self.mean[i] += delta * n / total;
            self.std[i] = (m2 / total).sqrt();
        }
        self.count = total;
    }
}

/// Outputs and hidden activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub mean: [f64; ACT_DIM],
    pub log_std: [f64; ACT_DIM],
    pub value: f64,
    actor_hidden: [Vec<f64>; 2],
    critic_hidden: [Vec<f64>; 2],
}

/// Gaussian actor and value critic, two tanh hidden layers each, with a
/// state-independent log standard deviation. All parameters live in one
/// flat vector: actor layers, critic layers, then the log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub params: Vec<f64>,
    pub obs_norm: ObsNorm,
}

impl PolicyNet {
    pub const PARAM_COUNT: usize = PARAM_LEN;

    /// Orthogonal initialization: gain 1 for hidden layers and the critic
    /// head, 0.01 for the actor head; zero biases.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; PARAM_LEN];
        let mut offset = 0;
        for (widths, head_gain) in [(ACTOR_WIDTHS, 0.01), (CRITIC_WIDTHS, 1.0)] {
            for l in 0..3 {
                let (n_in, n_out) = (widths[l], widths[l + 1]);
                let gain = if l == 2 { head_gain } else { 1.0 };
                let w = orthogonal(n_out, n_in, gain, &mut rng);
                params[offset..offset + n_out * n_in].copy_from_slice(&w);
                offset += n_out * n_in + n_out;
            }
        }
        params[LOG_STD_OFFSET..].fill(INITIAL_LOG_STD);
        PolicyNet {
            params,
            obs_norm: ObsNorm::default(),
        }
    }

    pub fn zeros() -> Self {
        PolicyNet {
            params: vec![0.0; PARAM_LEN],
            obs_norm: ObsNorm::default(),
        }
    }

    pub fn log_std(&self) -> [f64; ACT_DIM] {
        let mut out = [0.0; ACT_DIM];
        out.copy_from_slice(&self.params[LOG_STD_OFFSET..]);
        out
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.params[LOG_STD_OFFSET..] {
            *v = v.clamp(LOG_STD_RANGE.0, LOG_STD_RANGE.1);
        }
    }

    /// Forward pass on an already normalized observation.
    pub fn forward(&self, x: &[f64; OBS_DIM]) -> Forward {
        let (a_hidden, a_out) = mlp_forward(&self.params[..ACTOR_LEN], &ACTOR_WIDTHS, x);
        let (c_hidden, c_out) = mlp_forward(&self.params[ACTOR_LEN..LOG_STD_OFFSET], &CRITIC_WIDTHS, x);
        Forward {
            mean: [a_out[0], a_out[1]],
            log_std: self.log_std(),
            value: c_out[0],
            actor_hidden: a_hidden,
            critic_hidden: c_hidden,
        }
    }

    /// Accumulates into `grad` the gradient of a scalar whose partials with
    /// respect to the outputs are `d_mean`, `d_log_std` and `d_value`.
    pub fn backward(
        &self,
        x: &[f64; OBS_DIM],
        fwd: &Forward,
        d_mean: [f64; ACT_DIM],
        d_log_std: [f64; ACT_DIM],
        d_value: f64,
        grad: &mut [f64],
    ) {
        mlp_backward(
            &self.params[..ACTOR_LEN],
            &ACTOR_WIDTHS,
            x,
            &fwd.actor_hidden,
            &d_mean,
            &mut grad[..ACTOR_LEN],
        );
        mlp_backward(
            &self.params[ACTOR_LEN..LOG_STD_OFFSET],
            &CRITIC_WIDTHS,
            x,
            &fwd.critic_hidden,
            &[d_value],
            &mut grad[ACTOR_LEN..LOG_STD_OFFSET],
        );
        for j in 0..ACT_DIM {
            grad[LOG_STD_OFFSET + j] += d_log_std[j];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn to_json(&self) -> String {
        let layers = |base: usize, widths: &[usize; 4]| {
            let mut offset = base;
            (0..3)
                .map(|l| {
                    let (n_in, n_out) = (widths[l], widths[l + 1]);
                    let weights = (0..n_out)
                        .map(|r| self.params[offset + r * n_in..offset + (r + 1) * n_in].to_vec())
                        .collect();
                    offset += n_in * n_out;
                    let biases = self.params[offset..offset + n_out].to_vec();
                    offset += n_out;
                    LayerFile { weights, biases }
                })
                .collect()
        };
        let file = PolicyFile {
            actor_widths: ACTOR_WIDTHS.to_vec(),
            critic_widths: CRITIC_WIDTHS.to_vec(),
            actor: layers(0, &ACTOR_WIDTHS),
            critic: layers(ACTOR_LEN, &CRITIC_WIDTHS),
            log_std: self.log_std().to_vec(),
            obs_mean: self.obs_norm.mean.to_vec(),
            obs_std: self.obs_norm.std.to_vec(),
            obs_count: self.obs_norm.count,
        };
        serde_json::to_string_pretty(&file).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile = serde_json::from_str(text).map_err(|e| Error::Parse(format!("policy: {e}")))?;
        if file.actor_widths != ACTOR_WIDTHS || file.critic_widths != CRITIC_WIDTHS {
            return Err(Error::Parse(format!(
                "policy widths {:?}/{:?} do not match {:?}/{:?}",
                file.actor_widths, file.critic_widths, ACTOR_WIDTHS, CRITIC_WIDTHS
            )));
        }
        let mut params = Vec::with_capacity(PARAM_LEN);
        for (layers, widths) in [(&file.actor, &ACTOR_WIDTHS), (&file.critic, &CRITIC_WIDTHS)] {
            if layers.len() != 3 {
                return Err(Error::Parse("policy needs three layers per network".into()));
            }
            for (l, layer) in layers.iter().enumerate() {
                let (n_in, n_out) = (widths[l], widths[l + 1]);
                if layer.weights.len() != n_out
                    || layer.weights.iter().any(|r| r.len() != n_in)
                    || layer.biases.len() != n_out
                {
                    return Err(Error::Parse(format!("policy layer {l} has the wrong shape")));
                }
                params.extend(layer.weights.iter().flatten());
                params.extend(&layer.biases);
            }
        }
        let fixed = |v: &[f64], what: &str| -> Result<[f64; OBS_DIM]> {
            v.try_into()
                .map_err(|_| Error::Parse(format!("policy {what} must have {OBS_DIM} entries")))
        };
        if file.log_std.len() != ACT_DIM {
            return Err(Error::Parse(format!("policy log_std must have {ACT_DIM} entries")));
        }
        params.extend(&file.log_std);
        let net = PolicyNet {
            params,
            obs_norm: ObsNorm {
                mean: fixed(&file.obs_mean, "obs_mean")?,
                std: fixed(&file.obs_std, "obs_std")?,
                count: file.obs_count,
            },
        };
        if !net.is_finite() {
            return Err(Error::Parse("policy contains non-finite weights".into()));
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    /// Row-major, one row per output unit.
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    actor_widths: Vec<usize>,
    critic_widths: Vec<usize>,
    actor: Vec<LayerFile>,
    critic: Vec<LayerFile>,
    log_std: Vec<f64>,
    obs_mean: Vec<f64>,
    obs_std: Vec<f64>,
    obs_count: f64,
}

/// Normalizes `obs` with the network's frozen statistics and runs it.
pub fn policy_eval(net: &PolicyNet, obs: &[f64; OBS_DIM]) -> ([f64; ACT_DIM], [f64; ACT_DIM], f64) {
    let f = net.forward(&net.obs_norm.normalize(obs));
    (f.mean, f.log_std, f.value)
}

/// Log-density of a diagonal Gaussian.
pub fn log_prob(mean: [f64; ACT_DIM], log_std: [f64; ACT_DIM], action: [f64; ACT_DIM]) -> f64 {
    let half_log_two_pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    (0..ACT_DIM)
        .map(|j| {
            let z = (action[j] - mean[j]) / log_std[j].exp();
            -0.5 * z * z - log_std[j] - half_log_two_pi
        })
        .sum()
}

fn mlp_forward(p: &[f64], widths: &[usize; 4], x: &[f64]) -> ([Vec<f64>; 2], Vec<f64>) {
    let mut offset = 0;
    let mut input = x.to_vec();
    let mut hidden: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for l in 0..3 {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let w = &p[offset..offset + n_in * n_out];
        let b = &p[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let mut out: Vec<f64> = (0..n_out)
            .map(|r| {
                b[r] + w[r * n_in..(r + 1) * n_in]
                    .iter()
                    .zip(&input)
                    .map(|(a, v)| a * v)
                    .sum::<f64>()
            })
            .collect();
        if l < 2 {
            out.iter_mut().for_each(|v| *v = v.tanh());
            hidden[l] = out.clone();
        }
        input = out;
    }
    (hidden, input)
}

fn mlp_backward(p: &[f64], widths: &[usize; 4], x: &[f64], hidden: &[Vec<f64>; 2], d_out: &[f64], grad: &mut [f64]) {
    let mut offsets = [0usize; 3];
    let mut acc = 0;
    for l in 0..3 {
        offsets[l] = acc;
        acc += widths[l] * widths[l + 1] + widths[l + 1];
    }
    let mut delta = d_out.to_vec();
    for l in (0..3).rev() {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let input: &[f64] = if l == 0 { x } else { &hidden[l - 1] };
        let off = offsets[l];
        for r in 0..n_out {
            let d = delta[r];
            if d != 0.0 {
                let row = &mut grad[off + r * n_in..off + (r + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
            }
            grad[off + n_in * n_out + r] += d;
        }
        if l > 0 {
            let w = &p[off..off + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for r in 0..n_out {
                let d = delta[r];
                if d != 0.0 {
                    prev.iter_mut()
                        .zip(&w[r * n_in..(r + 1) * n_in])
                        .for_each(|(g, a)| *g += d * a);
                }
            }
            for (g, h) in prev.iter_mut().zip(input) {
                *g *= 1.0 - h * h;
            }
            delta = prev;
        }
    }
}

/// Row-major `rows × cols` matrix with orthonormal rows or columns, scaled.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let a = DMatrix::from_fn(tall, short, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..short {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    let m = if rows >= cols { q } else { q.transpose() };
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(gain * m[(i, j)]);
        }
    }
    out
}
