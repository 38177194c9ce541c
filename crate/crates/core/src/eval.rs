//! Transfer evaluation of trained policies on held-out dynamics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rl::{grasp_pose, run_episode, EpisodeLog, PolicyNet, RewardWeights, CONTROL_DECIMATION};
use crate::sim::{inverse_kinematics, DemoPose, DynParams, WorldConfig};

pub const HISTOGRAM_BIN_DEG: f64 = 10.0;
pub const HISTOGRAM_BINS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub seed: u64,
    pub max_angle_deg: f64,
    /// Control steps until the door first exceeded 30°.
    pub steps_to_30: Option<usize>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub episodes: usize,
    pub success_rate: f64,
    pub open_angle_mean: f64,
    pub open_angle_std: f64,
    /// Over episodes that crossed 30° only; NaN when none did.
    pub open_steps_mean: f64,
    pub open_steps_std: f64,
    pub open_steps_count: usize,
    /// `HISTOGRAM_BINS + 1` edges in degrees.
    pub histogram_edges: Vec<f64>,
    pub histogram: Vec<f64>,
    pub raw: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn from_episodes(method: &str, logs: &[EpisodeLog]) -> Self {
        let raw: Vec<EpisodeRecord> = logs
            .iter()
            .enumerate()
            .map(|(i, l)| EpisodeRecord {
                episode: i,
                seed: l.seed,
                max_angle_deg: l.max_angle.to_degrees(),
                steps_to_30: l.steps_to_success,
                success: l.success(),
            })
            .collect();
        let angles: Vec<f64> = raw.iter().map(|r| r.max_angle_deg).collect();
        let steps: Vec<f64> = raw.iter().filter_map(|r| r.steps_to_30.map(|s| s as f64)).collect();
        let (angle_mean, angle_std) = mean_std(&angles);
        let (steps_mean, steps_std) = mean_std(&steps);

        let mut histogram = vec![0.0; HISTOGRAM_BINS];
        for a in &angles {
            let bin = ((a / HISTOGRAM_BIN_DEG).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
            histogram[bin] += 1.0;
        }
        if !angles.is_empty() {
            histogram.iter_mut().for_each(|h| *h /= angles.len() as f64);
        }
        let successes = raw.iter().filter(|r| r.success).count();
        EvalReport {
            method: method.to_string(),
            episodes: raw.len(),
            success_rate: if raw.is_empty() {
                0.0
            } else {
                successes as f64 / raw.len() as f64
            },
            open_angle_mean: angle_mean,
            open_angle_std: angle_std,
            open_steps_mean: steps_mean,
            open_steps_std: steps_std,
            open_steps_count: steps.len(),
            histogram_edges: (0..=HISTOGRAM_BINS).map(|i| i as f64 * HISTOGRAM_BIN_DEG).collect(),
            histogram,
            raw,
        }
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `episodes` mean-action rollouts on fixed dynamics, seeded
/// `base_seed..base_seed + episodes`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_transfer(
    method: &str,
    policy: &PolicyNet,
    phi_real: &DynParams,
    world: &WorldConfig,
    w: &RewardWeights,
    episodes: usize,
    base_seed: u64,
    horizon: usize,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one episode".into()));
    }
    let logs = (0..episodes as u64)
        .map(|i| run_episode(policy, phi_real, world, w, horizon, base_seed.wrapping_add(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_episodes(method, &logs))
}

/// Evaluates the same policy with the knob moved outward along the door by
/// each offset. Every report is labelled `<method>@+<offset>m`.
#[allow(clippy::too_many_arguments)]
pub fn knob_generalization(
    method: &str,
    policy: &PolicyNet,
    phi_real: &DynParams,
    world: &WorldConfig,
    w: &RewardWeights,
    offsets: &[f64],
    episodes: usize,
    seed: u64,
    horizon: usize,
) -> Result<Vec<EvalReport>> {
    offsets
        .iter()
        .map(|&off| {
            let moved = world.with_knob_radius(world.knob_radius_m + off);
            moved.validate()?;
            check_arc_reachable(&moved)?;
            let label = format!("{method}@+{off:.2}m");
            evaluate_transfer(&label, policy, phi_real, &moved, w, episodes, seed, horizon)
        })
        .collect()
}

/// The knob must stay reachable over the whole 0–90° swing.
fn check_arc_reachable(world: &WorldConfig) -> Result<()> {
    grasp_pose(world)?;
    for deg in 0..=90 {
        let knob = world.knob_position((deg as f64).to_radians());
        inverse_kinematics(knob, DemoPose::A.elbow_sign(), world)?;
    }
    Ok(())
}

/// Writes `results.csv`, `histogram.csv`, `episodes_raw.csv` and
/// `summary.txt` into `dir`, rows in report order.
pub fn emit_report(reports: &[EvalReport], dir: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to emit".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, body: String| {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(path, e))
    };
    write("results.csv", results_csv(reports))?;
    write("histogram.csv", histogram_csv(reports))?;
    write("episodes_raw.csv", episodes_csv(reports))?;
    write("summary.txt", summary_table(reports))
}

pub fn results_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "method,episodes,success_rate,open_angle_mean_deg,open_angle_std_deg,open_steps_mean,open_steps_std,open_steps_count\n",
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method,
            r.episodes,
            r.success_rate,
            r.open_angle_mean,
            r.open_angle_std,
            r.open_steps_mean,
            r.open_steps_std,
            r.open_steps_count
        );
    }
    out
}

pub fn histogram_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,bin_low_deg,bin_high_deg,fraction\n");
    for r in reports {
        for (i, f) in r.histogram.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.method,
                r.histogram_edges[i],
                r.histogram_edges[i + 1],
                f
            );
        }
    }
    out
}

pub fn episodes_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,episode,seed,max_angle_deg,steps_to_30,success\n");
    for r in reports {
        for e in &r.raw {
            let steps = e.steps_to_30.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method, e.episode, e.seed, e.max_angle_deg, steps, e.success
            );
        }
    }
    out
}

pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "open steps are control steps ({CONTROL_DECIMATION} physics steps each), counted over episodes that crossed 30 deg\n\n{:<24} {:>8} {:>9} {:>16} {:>16} {:>6}\n",
        "method", "episodes", "success", "open angle (deg)", "open steps", "n"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<24} {:>8} {:>8.1}% {:>8.1} ± {:<5.1} {:>8.1} ± {:<5.1} {:>6}",
            r.method,
            r.episodes,
            100.0 * r.success_rate,
            r.open_angle_mean,
            r.open_angle_std,
            r.open_steps_mean,
            r.open_steps_std,
            r.open_steps_count
        );
    }
    out
}
