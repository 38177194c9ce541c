//! Torque-trajectory matching cost and the distribution-optimization loop.
//!
//! Candidates are scored by replaying the demonstration in simulation and
//! comparing the sensed torques against every reference rollout; failed
//! playbacks carry a fixed penalty. CMA-ES runs in coordinates scaled by the
//! initial per-parameter standard deviations, and the returned distribution
//! carries the effective covariance `σ² C` mapped back to physical units.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cmaes::{self, CmaConfig};
use crate::error::{Error, Result};
use crate::sim::{playback, DynParams, Trajectory, WorldConfig};

/// Fitness assigned to a candidate whose playback blew up.
pub const DIVERGED_FITNESS: f64 = 1e9;

/// Multivariate normal over [`DynParams`] in [`DynParams::NAMES`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDistribution {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Rows of the covariance matrix.
    pub covariance: Vec<Vec<f64>>,
    pub positivity: Vec<bool>,
}

impl ParamDistribution {
    /// Independent marginals with the given standard deviations.
    pub fn diagonal(mean: &DynParams, std: &DynParams) -> Self {
        let m = mean.to_vec();
        let s = std.to_vec();
        let n = DynParams::DIM;
        let covariance = (0..n)
            .map(|i| (0..n).map(|j| if i == j { s[i] * s[i] } else { 0.0 }).collect())
            .collect();
        ParamDistribution {
            names: DynParams::names(),
            mean: m.to_vec(),
            covariance,
            positivity: vec![true; n],
        }
    }

    /// Point mass at `params`.
    pub fn fixed(params: &DynParams) -> Self {
        Self::diagonal(params, &DynParams::from_slice(&[0.0; DynParams::DIM]).expect("dim"))
    }

    /// Initial guess: mass and door values from a reference door model,
    /// the two distal joint dampings of a 7-DoF arm, and a nominal grasp
    /// friction, each with its spread read as a standard deviation.
    pub fn default_init() -> Self {
        let mean = DynParams {
            door_mass: 1.144,
            knob_mass: 0.199,
            door_friction_loss: 0.05,
            door_stiffness: 0.01,
            door_damping: 2.0,
            joint_damping: [10.0, 0.4],
            slide_friction: 0.5,
        };
        let std = DynParams {
            door_mass: 0.5,
            knob_mass: 0.1,
            door_friction_loss: 0.025,
            door_stiffness: 0.005,
            door_damping: 1.0,
            joint_damping: [1.0, 0.2],
            slide_friction: 0.25,
        };
        Self::diagonal(&mean, &std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_params(&self) -> Result<DynParams> {
        DynParams::from_slice(&self.mean)
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.covariance[i][j])
    }

    /// Draws parameters, redrawing until every positivity-masked entry is
    /// strictly positive.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DynParams> {
        let n = self.dim();
        let (basis, scales) = cmaes::sqrt_factors(&self.covariance_matrix());
        for _ in 0..cmaes::MAX_REDRAWS {
            let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &basis * z.component_mul(&scales) + DVector::from_column_slice(&self.mean);
            if self.positivity.iter().zip(x.iter()).all(|(&pos, &v)| !pos || v > 0.0) {
                return DynParams::from_slice(x.as_slice());
            }
        }
        Err(Error::InfeasibleDistribution {
            redraws: cmaes::MAX_REDRAWS,
        })
    }

    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.covariance[i][i].max(0.0).sqrt()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n != DynParams::DIM || self.names.len() != n || self.positivity.len() != n {
            return Err(Error::Validation {
                field: "phi_init".into(),
                reason: format!("expected {} parameters", DynParams::DIM),
            });
        }
        if self.names.iter().zip(DynParams::NAMES).any(|(a, b)| a != b) {
            return Err(Error::Validation {
                field: "phi_init.names".into(),
                reason: format!("must be {:?}", DynParams::NAMES),
            });
        }
        if self.covariance.len() != n || self.covariance.iter().any(|r| r.len() != n) {
            return Err(Error::Validation {
                field: "phi_init.covariance".into(),
                reason: format!("must be {n}x{n}"),
            });
        }
        if self
            .mean
            .iter()
            .chain(self.covariance.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation {
                field: "phi_init".into(),
                reason: "entries must be finite".into(),
            });
        }
        let c = self.covariance_matrix();
        if (&c - c.transpose()).abs().max() > 1e-12 {
            return Err(Error::Validation {
                field: "phi_init.covariance".into(),
                reason: "must be symmetric".into(),
            });
        }
        if nalgebra::SymmetricEigen::new(c).eigenvalues.min() < -1e-10 {
            return Err(Error::Validation {
                field: "phi_init.covariance".into(),
                reason: "must be positive semidefinite".into(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("distribution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentifyConfig {
    pub population: usize,
    pub parents: usize,
    pub n_real: usize,
    /// The whole `c·β` term added on task failure.
    pub failure_penalty: f64,
    pub sigma0: f64,
    pub max_generations: usize,
    pub fitness_tolerance: f64,
    pub seed: u64,
}

impl Default for IdentifyConfig {
    fn default() -> Self {
        IdentifyConfig {
            population: 30,
            parents: 5,
            n_real: 10,
            failure_penalty: 10.0,
            sigma0: 1.0,
            max_generations: 60,
            fitness_tolerance: 1e-3,
            seed: 0,
        }
    }
}

impl IdentifyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::Validation {
            field: format!("identify.{field}"),
            reason: reason.into(),
        };
        if self.parents < 1 || self.parents > self.population {
            return Err(bad("parents", "need population >= parents >= 1"));
        }
        if self.n_real < 1 {
            return Err(bad("n_real", "need at least one reference rollout"));
        }
        if !(self.failure_penalty >= 0.0 && self.failure_penalty.is_finite()) {
            return Err(bad("failure_penalty", "must be finite and non-negative"));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(bad("sigma0", "must be positive"));
        }
        if self.fitness_tolerance.is_nan() || self.fitness_tolerance < 0.0 {
            return Err(bad("fitness_tolerance", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Mean of the distribution the generation was sampled from.
    pub mean: Vec<f64>,
    /// Diagonal of its effective covariance.
    pub variance: Vec<f64>,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub worst_fitness: f64,
    /// Cumulative playbacks so far.
    pub evaluations: usize,
    /// Candidate indices chosen for recombination, best first.
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentifyTrace {
    pub generations: Vec<GenerationRecord>,
    /// Final-generation mean fitness exceeded the first generation's.
    pub non_improving: bool,
}

impl IdentifyTrace {
    pub fn evaluations(&self) -> usize {
        self.generations.last().map_or(0, |g| g.evaluations)
    }

    /// `generation,best_fit,mean_fit,` then `mean_<p>,std_<p>` per parameter.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("generation,best_fit,mean_fit");
        for n in names {
            write!(out, ",mean_{n},std_{n}").unwrap();
        }
        out.push('\n');
        for g in &self.generations {
            write!(out, "{},{},{}", g.generation, g.best_fitness, g.mean_fitness).unwrap();
            for (m, v) in g.mean.iter().zip(&g.variance) {
                write!(out, ",{},{}", m, v.max(0.0).sqrt()).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Time-mean joint-space torque distance, averaged over the reference set,
/// plus `failure_penalty` when the simulated rollout failed.
pub fn trajectory_cost(sim: &Trajectory, real_set: &[Trajectory], failure_penalty: f64) -> Result<f64> {
    if real_set.is_empty() {
        return Err(Error::InvalidInput("reference set is empty".into()));
    }
    if let Some(r) = real_set.iter().find(|r| r.dt != sim.dt) {
        return Err(Error::InvalidInput(format!(
            "time step mismatch: simulated {} s vs reference {} s",
            sim.dt, r.dt
        )));
    }
    let penalty = if sim.failed { failure_penalty } else { 0.0 };
    let total: f64 = real_set
        .iter()
        .map(|real| {
            let n = sim.len().min(real.len());
            let residual = if n == 0 {
                0.0
            } else {
                sim.torque[..n]
                    .iter()
                    .zip(&real.torque[..n])
                    .map(|(s, r)| (s[0] - r[0]).hypot(s[1] - r[1]))
                    .sum::<f64>()
                    / n as f64
            };
            residual + penalty
        })
        .sum();
    Ok(total / real_set.len() as f64)
}

/// Noise-free playback of the demonstration under `params`, scored against
/// the reference set. Divergence maps to [`DIVERGED_FITNESS`].
pub fn candidate_fitness(
    params: &DynParams,
    q_desired: &[[f64; 2]],
    real_set: &[Trajectory],
    world: &WorldConfig,
    cfg: &IdentifyConfig,
) -> Result<f64> {
    match playback(q_desired, params, world, None) {
        Ok(sim) => trajectory_cost(&sim, real_set, cfg.failure_penalty),
        Err(Error::SimulationDiverged { .. }) => Ok(DIVERGED_FITNESS),
        Err(e) => Err(e),
    }
}

/// Affine map between physical parameters and the unit-scaled search space.
struct Scaling {
    origin: DVector<f64>,
    scale: DVector<f64>,
}

impl Scaling {
    fn from_init(init: &ParamDistribution) -> Self {
        let scale = init.std_devs().into_iter().map(|s| if s > 0.0 { s } else { 1.0 });
        Scaling {
            origin: DVector::from_vec(init.mean.clone()),
            scale: DVector::from_iterator(init.dim(), scale),
        }
    }

    fn to_physical(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.origin + z.component_mul(&self.scale)
    }

    fn covariance_to_physical(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let s = DMatrix::from_diagonal(&self.scale);
        &s * c * &s
    }

    fn correlation(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        let inv = DMatrix::from_diagonal(&self.scale.map(|s| 1.0 / s));
        &inv * c * &inv
    }
}

fn to_param_distribution(init: &ParamDistribution, mean: &DVector<f64>, cov: &DMatrix<f64>) -> ParamDistribution {
    let n = mean.len();
    let cov = cmaes::symmetrized(cov);
    ParamDistribution {
        names: init.names.clone(),
        mean: mean.iter().copied().collect(),
        covariance: (0..n).map(|i| (0..n).map(|j| cov[(i, j)]).collect()).collect(),
        positivity: init.positivity.clone(),
    }
}

/// Runs CMA-ES over the distribution until convergence.
pub fn optimize_distribution(
    init: &ParamDistribution,
    q_desired: &[[f64; 2]],
    real_set: &[Trajectory],
    world: &WorldConfig,
    cfg: &IdentifyConfig,
) -> Result<(ParamDistribution, IdentifyTrace)> {
    init.validate()?;
    cfg.validate()?;
    if real_set.len() != cfg.n_real {
        return Err(Error::InvalidInput(format!(
            "expected {} reference rollouts, got {}",
            cfg.n_real,
            real_set.len()
        )));
    }
    let n = init.dim();
    let cma_cfg = CmaConfig::new(n, cfg.population, cfg.parents)?
        .with_limits(cfg.max_generations, cfg.fitness_tolerance)
        .with_seed(cfg.seed);
    let scaling = Scaling::from_init(init);

    let mut dist = cmaes::cma_init(&vec![0.0; n], cfg.sigma0, &cma_cfg)?;
    dist.covariance = cmaes::symmetrized(&scaling.correlation(&init.covariance_matrix()));

    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = IdentifyTrace::default();
    let mut best_history = Vec::new();
    let mut evaluations = 0;

    while !cmaes::cma_converged(&dist, &best_history, &cma_cfg) {
        let admits = |z: &DVector<f64>| {
            let phi = scaling.to_physical(z);
            init.positivity.iter().zip(phi.iter()).all(|(&pos, &v)| !pos || v > 0.0)
        };
        let candidates = cmaes::cma_ask_where(&dist, cfg.population, seeds.next_u64(), admits)?;
        let fitnesses = candidates
            .iter()
            .map(|z| {
                let phi = DynParams::from_slice(scaling.to_physical(z).as_slice())?;
                candidate_fitness(&phi, q_desired, real_set, world, cfg)
            })
            .collect::<Result<Vec<f64>>>()?;
        evaluations += candidates.len();

        let order = cmaes::rank_order(&candidates, &fitnesses);
        let best = fitnesses[order[0]];
        let worst = fitnesses[order[order.len() - 1]];
        let mean_fit = fitnesses.iter().sum::<f64>() / fitnesses.len() as f64;
        let eff = scaling.covariance_to_physical(&dist.effective_covariance());
        trace.generations.push(GenerationRecord {
            generation: dist.generation,
            mean: scaling.to_physical(&dist.mean).iter().copied().collect(),
            variance: eff.diagonal().iter().copied().collect(),
            best_fitness: best,
            mean_fitness: mean_fit,
            worst_fitness: worst,
            evaluations,
            selected: order[..cfg.parents].to_vec(),
        });
        best_history.push(best);

        dist = cmaes::cma_tell(&dist, &candidates, &fitnesses, &cma_cfg)?;
    }

    if let (Some(first), Some(last)) = (trace.generations.first(), trace.generations.last()) {
        trace.non_improving = last.mean_fitness > first.mean_fitness;
    }
    let mean = scaling.to_physical(&dist.mean);
    let cov = scaling.covariance_to_physical(&dist.effective_covariance());
    Ok((to_param_distribution(init, &mean, &cov), trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalComparison {
    pub name: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: f64,
    pub std_b: f64,
    pub bhattacharyya: f64,
}

/// Bhattacharyya coefficient of two 1-D normals.
pub fn bhattacharyya_coefficient(mean_a: f64, std_a: f64, mean_b: f64, std_b: f64) -> f64 {
    let var_sum = std_a * std_a + std_b * std_b;
    if var_sum == 0.0 {
        return if mean_a == mean_b { 1.0 } else { 0.0 };
    }
    (2.0 * std_a * std_b / var_sum).sqrt() * (-(mean_a - mean_b).powi(2) / (4.0 * var_sum)).exp()
}

pub fn compare_distributions(a: &ParamDistribution, b: &ParamDistribution) -> Result<Vec<MarginalComparison>> {
    if a.names != b.names {
        return Err(Error::InvalidInput(format!(
            "parameter names differ: {:?} vs {:?}",
            a.names, b.names
        )));
    }
    let (sa, sb) = (a.std_devs(), b.std_devs());
    Ok(a.names
        .iter()
        .enumerate()
        .map(|(i, name)| MarginalComparison {
            name: name.clone(),
            mean_a: a.mean[i],
            mean_b: b.mean[i],
            std_a: sa[i],
            std_b: sb[i],
            bhattacharyya: bhattacharyya_coefficient(a.mean[i], sa[i], b.mean[i], sb[i]),
        })
        .collect())
}

pub fn comparison_csv(rows: &[MarginalComparison]) -> String {
    let mut out = String::from("parameter,mean_a,std_a,mean_b,std_b,bhattacharyya\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.name, r.mean_a, r.std_a, r.mean_b, r.std_b, r.bhattacharyya
        )
        .unwrap();
    }
    out
}
