//! Covariance Matrix Adaptation Evolution Strategy with an ask/tell interface.
//!
//! The update follows the standard (μ/μ_W, λ) scheme: weighted recombination
//! of the best `parents` candidates, cumulative step-size adaptation, and a
//! rank-one plus rank-μ covariance update. Sampling supports a per-coordinate
//! positivity mask handled by discard-and-redraw.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Redraws allowed per sample slot before sampling is declared infeasible.
pub const MAX_REDRAWS: usize = 1000;

/// Number of generations inspected by the plateau test.
pub const PLATEAU_WINDOW: usize = 10;

/// Gaussian search state `N(mean, step_size² · covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchDistribution {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub step_size: f64,
    pub path_sigma: DVector<f64>,
    pub path_cov: DVector<f64>,
    pub generation: usize,
}

impl SearchDistribution {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The covariance samples are actually drawn with, `step_size² · C`.
    pub fn effective_covariance(&self) -> DMatrix<f64> {
        &self.covariance * (self.step_size * self.step_size)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let c = &self.covariance;
        (c - c.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(symmetrized(&self.covariance)).eigenvalues.min()
    }

    pub fn to_file(&self, names: &[String]) -> Result<DistributionFile> {
        if names.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "{} names for a {}-dimensional distribution",
                names.len(),
                self.dim()
            )));
        }
        Ok(DistributionFile {
            names: names.to_vec(),
            mean: self.mean.iter().copied().collect(),
            covariance: row_major(&self.covariance),
            step_size: self.step_size,
            generation: self.generation,
            path_sigma: self.path_sigma.iter().copied().collect(),
            path_cov: self.path_cov.iter().copied().collect(),
        })
    }
}

/// On-disk form of a [`SearchDistribution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionFile {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub covariance: Vec<f64>,
    pub step_size: f64,
    pub generation: usize,
    #[serde(default)]
    pub path_sigma: Vec<f64>,
    #[serde(default)]
    pub path_cov: Vec<f64>,
}

impl DistributionFile {
    pub fn into_distribution(self) -> Result<(Vec<String>, SearchDistribution)> {
        let n = self.mean.len();
        if self.names.len() != n || self.covariance.len() != n * n {
            return Err(Error::InvalidInput(
                "distribution file has inconsistent dimensions".into(),
            ));
        }
        let path = |v: Vec<f64>| -> Result<DVector<f64>> {
            match v.len() {
                0 => Ok(DVector::zeros(n)),
                len if len == n => Ok(DVector::from_vec(v)),
                _ => Err(Error::InvalidInput("evolution path has wrong length".into())),
            }
        };
        let dist = SearchDistribution {
            mean: DVector::from_vec(self.mean),
            covariance: DMatrix::from_row_slice(n, n, &self.covariance),
            step_size: self.step_size,
            path_sigma: path(self.path_sigma)?,
            path_cov: path(self.path_cov)?,
            generation: self.generation,
        };
        Ok((self.names, dist))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("distribution file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Which coordinates must be strictly positive when sampled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositivityMask(pub Vec<bool>);

impl PositivityMask {
    pub fn none(dim: usize) -> Self {
        PositivityMask(vec![false; dim])
    }

    pub fn all(dim: usize) -> Self {
        PositivityMask(vec![true; dim])
    }

    pub fn admits(&self, x: &DVector<f64>) -> bool {
        self.0.iter().zip(x.iter()).all(|(&pos, &v)| !pos || v > 0.0)
    }
}

/// Strategy parameters. Build with [`CmaConfig::new`] to get the standard
/// dimension-dependent learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaConfig {
    pub population: usize,
    pub parents: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub max_generations: usize,
    pub fitness_tolerance: f64,
    pub seed: u64,
}

impl CmaConfig {
    pub fn new(dim: usize, population: usize, parents: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if parents == 0 || parents > population {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= parents ({parents}) <= population ({population})"
            )));
        }
        let raw: Vec<f64> = (1..=parents)
            .map(|i| (parents as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let n = dim as f64;
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));

        Ok(CmaConfig {
            population,
            parents,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            max_generations: 1000,
            fitness_tolerance: 1e-12,
            seed: 0,
        })
    }

    /// Population `4 + ⌊3 ln n⌋` with half of it recombined.
    pub fn default_for_dim(dim: usize) -> Result<Self> {
        let population = 4 + (3.0 * (dim.max(1) as f64).ln()).floor() as usize;
        Self::new(dim, population, population / 2)
    }

    pub fn with_limits(mut self, max_generations: usize, fitness_tolerance: f64) -> Self {
        self.max_generations = max_generations;
        self.fitness_tolerance = fitness_tolerance;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.parents == 0 || self.parents > self.population {
            return Err(Error::InvalidConfig("parents must be in 1..=population".into()));
        }
        if self.weights.len() != self.parents {
            return Err(Error::InvalidConfig("one weight per parent required".into()));
        }
        if self.weights.iter().any(|&w| w <= 0.0) || self.weights.windows(2).any(|p| p[1] > p[0]) {
            return Err(Error::InvalidConfig(
                "weights must be positive and non-increasing".into(),
            ));
        }
        if (self.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("weights must sum to 1".into()));
        }
        Ok(())
    }
}

/// Fresh search state with identity covariance and zeroed paths.
pub fn cma_init(mean0: &[f64], sigma0: f64, cfg: &CmaConfig) -> Result<SearchDistribution> {
    cfg.validate()?;
    if mean0.is_empty() {
        return Err(Error::InvalidConfig("initial mean is empty".into()));
    }
    if mean0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("initial mean must be finite".into()));
    }
    if !(sigma0 > 0.0 && sigma0.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma0 must be positive, got {sigma0}")));
    }
    let n = mean0.len();
    Ok(SearchDistribution {
        mean: DVector::from_column_slice(mean0),
        covariance: DMatrix::identity(n, n),
        step_size: sigma0,
        path_sigma: DVector::zeros(n),
        path_cov: DVector::zeros(n),
        generation: 0,
    })
}

/// Draws `cfg.population` candidates. Pure in `(dist, mask, rng_seed)`.
pub fn cma_ask(
    dist: &SearchDistribution,
    mask: &PositivityMask,
    population: usize,
    rng_seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let n = dist.dim();
    if mask.0.len() != n {
        return Err(Error::InvalidInput(format!(
            "mask length {} does not match dimension {n}",
            mask.0.len()
        )));
    }
    cma_ask_where(dist, population, rng_seed, |x| mask.admits(x))
}

/// Like [`cma_ask`] with an arbitrary admissibility predicate in place of a mask.
pub fn cma_ask_where(
    dist: &SearchDistribution,
    population: usize,
    rng_seed: u64,
    admits: impl Fn(&DVector<f64>) -> bool,
) -> Result<Vec<DVector<f64>>> {
    let n = dist.dim();
    let (basis, scales) = sqrt_factors(&dist.covariance);
    let transform = &basis * DMatrix::from_diagonal(&scales);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut out = Vec::with_capacity(population);
    for _ in 0..population {
        let mut redraws = 0;
        loop {
            let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let x = &dist.mean + (&transform * z) * dist.step_size;
            if admits(&x) {
                out.push(x);
                break;
            }
            redraws += 1;
            if redraws >= MAX_REDRAWS {
                return Err(Error::InfeasibleDistribution { redraws });
            }
        }
    }
    Ok(out)
}

/// One generation of the CMA-ES update from evaluated candidates (lower is better).
pub fn cma_tell(
    dist: &SearchDistribution,
    candidates: &[DVector<f64>],
    fitnesses: &[f64],
    cfg: &CmaConfig,
) -> Result<SearchDistribution> {
    let n = dist.dim();
    if candidates.len() != fitnesses.len() || candidates.len() != cfg.population {
        return Err(Error::InvalidInput(format!(
            "expected {} candidates and fitnesses, got {} and {}",
            cfg.population,
            candidates.len(),
            fitnesses.len()
        )));
    }
    if candidates.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput("candidate dimension mismatch".into()));
    }
    if fitnesses.iter().any(|f| !f.is_finite()) {
        return Err(Error::InvalidInput("fitness values must be finite".into()));
    }

    let ranking = rank_order(candidates, fitnesses);
    let sigma = dist.step_size;
    let steps: Vec<DVector<f64>> = ranking[..cfg.parents]
        .iter()
        .map(|&i| (&candidates[i] - &dist.mean) / sigma)
        .collect();

    let mut y_w = DVector::zeros(n);
    for (w, y) in cfg.weights.iter().zip(&steps) {
        y_w.axpy(*w, y, 1.0);
    }
    let mean = &dist.mean + &y_w * sigma;

    let (basis, scales) = sqrt_factors(&dist.covariance);
    let inv_scales = scales.map(|d| if d > 0.0 { 1.0 / d } else { 0.0 });
    let inv_sqrt_c = &basis * DMatrix::from_diagonal(&inv_scales) * basis.transpose();

    let nf = n as f64;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
    let path_sigma = &dist.path_sigma * (1.0 - cfg.c_sigma)
        + (&inv_sqrt_c * &y_w) * (cfg.c_sigma * (2.0 - cfg.c_sigma) * cfg.mu_eff).sqrt();
    let ps_norm = path_sigma.norm();

    let gen = (dist.generation + 1) as i32;
    let h_sigma = ps_norm / (1.0 - (1.0 - cfg.c_sigma).powi(2 * gen)).sqrt() < (1.4 + 2.0 / (nf + 1.0)) * chi_n;
    let h = if h_sigma { 1.0 } else { 0.0 };

    let path_cov = &dist.path_cov * (1.0 - cfg.c_c) + &y_w * (h * (cfg.c_c * (2.0 - cfg.c_c) * cfg.mu_eff).sqrt());

    let delta_h = (1.0 - h) * cfg.c_c * (2.0 - cfg.c_c);
    let mut covariance = &dist.covariance * (1.0 + cfg.c_1 * delta_h - cfg.c_1 - cfg.c_mu)
        + (&path_cov * path_cov.transpose()) * cfg.c_1;
    for (w, y) in cfg.weights.iter().zip(&steps) {
        covariance += (y * y.transpose()) * (cfg.c_mu * w);
    }
    let covariance = symmetrized(&covariance);

    let step_size = sigma * ((cfg.c_sigma / cfg.d_sigma) * (ps_norm / chi_n - 1.0)).exp();
    if !(step_size > 0.0 && step_size.is_finite()) {
        return Err(Error::InvalidInput(format!("step size degenerated to {step_size}")));
    }

    Ok(SearchDistribution {
        mean,
        covariance,
        step_size,
        path_sigma,
        path_cov,
        generation: dist.generation + 1,
    })
}

/// Generation cap, or a plateau: the per-generation best fitnesses in
/// `fitness_history` spread over the last [`PLATEAU_WINDOW`] generations by
/// less than `fitness_tolerance`, relative to the smallest of them.
pub fn cma_converged(dist: &SearchDistribution, fitness_history: &[f64], cfg: &CmaConfig) -> bool {
    if dist.generation >= cfg.max_generations {
        return true;
    }
    if fitness_history.len() < PLATEAU_WINDOW {
        return false;
    }
    let window = &fitness_history[fitness_history.len() - PLATEAU_WINDOW..];
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo <= cfg.fitness_tolerance * lo.abs().max(f64::MIN_POSITIVE)
}

/// Candidate indices sorted by fitness. Ties are broken by comparing the
/// candidate vectors so the ordering does not depend on input order.
pub(crate) fn rank_order(candidates: &[DVector<f64>], fitnesses: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..fitnesses.len()).collect();
    idx.sort_by(|&a, &b| {
        fitnesses[a].total_cmp(&fitnesses[b]).then_with(|| {
            candidates[a]
                .iter()
                .zip(candidates[b].iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    idx
}

pub(crate) fn symmetrized(c: &DMatrix<f64>) -> DMatrix<f64> {
    (c + c.transpose()) * 0.5
}

/// Eigenbasis `B` and `sqrt(max(eigenvalue, 0))` of a covariance matrix.
pub(crate) fn sqrt_factors(c: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let eig = SymmetricEigen::new(symmetrized(c));
    let scales = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    (eig.eigenvectors, scales)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}
