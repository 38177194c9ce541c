//! Experiment configuration and the staged, seeded pipeline:
//! demonstration → reference rollouts → identification → training →
//! evaluation, plus the controlled identification experiments.
//!
//! Every stage reads its inputs from and writes its outputs to a fixed
//! layout under the output directory (`demo/`, `real/`, `identify/`,
//! `train/<method>/`, `eval/`), and records artifact hashes in
//! `manifest.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate_transfer, knob_generalization, EvalReport};
use crate::identify::{
    compare_distributions, comparison_csv, optimize_distribution, IdentifyConfig, ParamDistribution,
};
use crate::rl::{train_policy, ParamSource, PolicyNet, PpoConfig, RewardWeights};
use crate::sim::{
    content_hash, gen_real_rollouts, round_trip_demo, synth_demo, DemoPose, DynParams, Trajectory, WorldConfig,
};

pub const MANIFEST: &str = "manifest.json";
pub const LOCK_FILE: &str = ".droid.lock";
pub const SEED_ENV: &str = "DROID_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Demo,
    Real,
    Identify,
    Train,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 5] = [Stage::Demo, Stage::Real, Stage::Identify, Stage::Train, Stage::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Demo => "demo",
            Stage::Real => "real",
            Stage::Identify => "identify",
            Stage::Train => "train",
            Stage::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}`")))
    }

    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let mut stages = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Stage::parse)
            .collect::<Result<Vec<_>>>()?;
        stages.sort();
        stages.dedup();
        Ok(stages)
    }
}

/// The three policies compared on the held-out dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Randomization over the initial guess.
    DrInit,
    /// No randomization, identified mean only.
    FixedMean,
    /// Randomization over the identified distribution.
    DrIdentified,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::DrInit, Method::FixedMean, Method::DrIdentified];

    pub fn dir(self) -> &'static str {
        match self {
            Method::DrInit => "dr_init",
            Method::FixedMean => "fixed_mu_opt",
            Method::DrIdentified => "dr_phi_star",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::DrInit => "DR",
            Method::FixedMean => "mu_opt",
            Method::DrIdentified => "DROID-DR",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedParams {
    pub name: String,
    pub phi: DynParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// rad
    pub angle_target: f64,
    /// Opening time, s.
    pub duration: f64,
    /// Pause at each end of a round trip, s.
    pub hold: f64,
    /// Close the door again after opening.
    pub round_trip: bool,
    pub pose: DemoPose,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            angle_target: 40f64.to_radians(),
            duration: 1.0,
            hold: 0.5,
            round_trip: true,
            pose: DemoPose::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    /// Knob displacements along the door, m.
    pub offsets: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 30,
            offsets: vec![0.0, 0.05, 0.10, 0.15],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageSeeds {
    pub demo: u64,
    pub real: u64,
    pub identify: u64,
    pub train: u64,
    pub eval: u64,
}

impl StageSeeds {
    pub fn all(seed: u64) -> Self {
        StageSeeds {
            demo: seed,
            real: seed,
            identify: seed,
            train: seed,
            eval: seed,
        }
    }
}

/// Stage seeds replace the `seed` fields of `identify` and `ppo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub world: WorldConfig,
    /// Base ground truth of the held-out door.
    pub phi_true: DynParams,
    /// Identification variants; defaults to the base truth plus one- and
    /// two-spring doors.
    #[serde(default)]
    pub variants: Option<Vec<NamedParams>>,
    #[serde(default = "ParamDistribution::default_init")]
    pub phi_init: ParamDistribution,
    /// Defaults to [`pipeline_identify_config`].
    #[serde(default = "pipeline_identify_config")]
    pub identify: IdentifyConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub reward: RewardWeights,
    #[serde(default)]
    pub demo: DemoConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub seeds: StageSeeds,
}

/// Generation cap used by the pipeline and the variant experiments when the
/// configuration omits `identify`.
pub const PIPELINE_GENERATIONS: usize = 150;

pub fn pipeline_identify_config() -> IdentifyConfig {
    IdentifyConfig {
        max_generations: PIPELINE_GENERATIONS,
        ..IdentifyConfig::default()
    }
}

/// One spring adds this much hinge stiffness (N·m/rad) and damping (N·m·s/rad).
pub const SPRING_STIFFNESS: f64 = 1.0;
pub const SPRING_DAMPING: f64 = 0.5;

impl ExperimentConfig {
    pub fn new(phi_true: DynParams) -> Self {
        ExperimentConfig {
            world: WorldConfig::default(),
            phi_true,
            variants: None,
            phi_init: ParamDistribution::default_init(),
            identify: pipeline_identify_config(),
            ppo: PpoConfig::default(),
            reward: RewardWeights::default(),
            demo: DemoConfig::default(),
            eval: EvalConfig::default(),
            seeds: StageSeeds::default(),
        }
    }

    /// Named truths for the controlled experiment.
    pub fn variant_truths(&self) -> Vec<NamedParams> {
        if let Some(v) = &self.variants {
            return v.clone();
        }
        let spring = |n: f64| {
            let mut p = self.phi_true;
            p.door_stiffness += n * SPRING_STIFFNESS;
            p.door_damping += n * SPRING_DAMPING;
            p
        };
        vec![
            NamedParams {
                name: "base".into(),
                phi: self.phi_true,
            },
            NamedParams {
                name: "spring1".into(),
                phi: spring(1.0),
            },
            NamedParams {
                name: "spring2".into(),
                phi: spring(2.0),
            },
        ]
    }

    pub fn with_seed_override(mut self, seed: u64) -> Self {
        self.seeds = StageSeeds::all(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate().map_err(|e| prefixed("world", e))?;
        self.phi_true.validate().map_err(|e| prefixed("phi_true", e))?;
        if let Some(variants) = &self.variants {
            for (i, v) in variants.iter().enumerate() {
                if variants[..i].iter().any(|o| o.name == v.name) {
                    return Err(Error::Validation {
                        field: "variants".into(),
                        reason: format!("duplicate variant name `{}`", v.name),
                    });
                }
                v.phi
                    .validate()
                    .map_err(|e| prefixed(&format!("variants.{}", v.name), e))?;
            }
        }
        self.phi_init.validate()?;
        self.identify.validate()?;
        self.ppo.validate()?;
        self.reward.validate()?;
        let d = &self.demo;
        if !(d.angle_target > 0.0 && d.angle_target <= std::f64::consts::FRAC_PI_2) {
            return Err(Error::Validation {
                field: "demo.angle_target".into(),
                reason: format!("must lie in (0, π/2], got {}", d.angle_target),
            });
        }
        if !(d.duration > 0.0 && d.duration.is_finite()) {
            return Err(Error::Validation {
                field: "demo.duration".into(),
                reason: "must be positive".into(),
            });
        }
        if !(d.hold >= 0.0 && d.hold.is_finite()) {
            return Err(Error::Validation {
                field: "demo.hold".into(),
                reason: "must be non-negative".into(),
            });
        }
        if self.eval.episodes == 0 {
            return Err(Error::Validation {
                field: "eval.episodes".into(),
                reason: "must be at least 1".into(),
            });
        }
        if self
            .eval
            .offsets
            .iter()
            .any(|o| !o.is_finite() || self.world.knob_radius_m + o <= 0.0)
        {
            return Err(Error::Validation {
                field: "eval.offsets".into(),
                reason: "must be finite and keep the knob radius positive".into(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        content_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Joint targets of the configured demonstration.
    pub fn demo_trajectory(&self, pose: DemoPose) -> Result<Vec<[f64; 2]>> {
        let d = &self.demo;
        if d.round_trip {
            round_trip_demo(&self.world, d.angle_target, d.duration, d.hold, pose)
        } else {
            synth_demo(&self.world, d.angle_target, d.duration, pose)
        }
    }

    fn identify_config(&self) -> IdentifyConfig {
        IdentifyConfig {
            seed: self.seeds.identify,
            ..self.identify.clone()
        }
    }

    fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            seed: self.seeds.train,
            ..self.ppo.clone()
        }
    }
}

fn prefixed(prefix: &str, e: Error) -> Error {
    match e {
        Error::Validation { field, reason } => Error::Validation {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other,
    }
}

/// Parses and validates an experiment configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match msg
            .strip_prefix("unknown field `")
            .and_then(|rest| rest.split('`').next())
        {
            Some(key) => Error::UnknownKey(key.to_string()),
            None => Error::Parse(msg),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Value of `DROID_SEED`, if set.
pub fn seed_override_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Process exit status for an error: 2 configuration, 3 missing stage
/// input, 4 anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Stage { .. } => match e.root() {
            Error::StageDependency { .. } => 3,
            _ => 4,
        },
        Error::InvalidConfig(_) | Error::Validation { .. } | Error::UnknownKey(_) | Error::Parse(_) => 2,
        Error::StageDependency { .. } => 3,
        _ => 4,
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seed: u64,
    /// Path relative to the output directory → SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    fn save(&self, dir: &Path) -> Result<()> {
        write_file(
            &dir.join(MANIFEST),
            &serde_json::to_string_pretty(self).expect("manifest serializes"),
        )
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read_file(stage: Stage, path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::StageDependency {
            stage: stage.name().into(),
            path: path.to_path_buf(),
        });
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn hash_artifacts(out: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|f| {
            let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
            let rel = f.strip_prefix(out).unwrap_or(f).to_string_lossy().replace('\\', "/");
            Ok((rel, content_hash(&bytes)))
        })
        .collect()
}

pub fn demo_csv(q: &[[f64; 2]], dt: f64) -> String {
    let mut out = String::from("t,qd1,qd2\n");
    for (i, p) in q.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", i as f64 * dt, p[0], p[1]);
    }
    out
}

pub fn parse_demo_csv(text: &str) -> Result<Vec<[f64; 2]>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if header.iter().ne(["t", "qd1", "qd2"]) {
        return Err(Error::Parse(format!("unexpected demo header {header:?}")));
    }
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| Error::Parse(e.to_string()))?;
            let f = |i: usize| -> Result<f64> {
                r.get(i)
                    .ok_or_else(|| Error::Parse("short demo row".into()))?
                    .parse()
                    .map_err(|e| Error::Parse(format!("demo: {e}")))
            };
            Ok([f(1)?, f(2)?])
        })
        .collect()
}

fn real_path(out: &Path, k: usize) -> PathBuf {
    out.join("real").join(format!("real_{k:03}.csv"))
}

fn policy_path(out: &Path, m: Method) -> PathBuf {
    out.join("train").join(m.dir()).join("policy.json")
}

/// Runs the requested stages in pipeline order. Each stage reads the
/// previous stage's files from `out`, so stages can be run one at a time.
pub fn run_pipeline(cfg: &ExperimentConfig, stages: &[Stage], out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let _lock = DirLock::acquire(out)?;
    let config_hash = cfg.hash();
    let mut manifest = match Manifest::load(out)? {
        Some(m) if m.config_hash == config_hash => m,
        _ => Manifest {
            config_hash,
            config: cfg.clone(),
            stages: BTreeMap::new(),
        },
    };
    let mut ordered = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    for stage in ordered {
        let (seed, files) = run_stage(cfg, stage, out).map_err(|e| Error::Stage {
            stage: stage.name().into(),
            source: Box::new(e),
        })?;
        let artifacts = hash_artifacts(out, &files)?;
        manifest.stages.insert(stage, StageRecord { seed, artifacts });
        manifest.save(out)?;
    }
    Ok(manifest)
}

fn run_stage(cfg: &ExperimentConfig, stage: Stage, out: &Path) -> Result<(u64, Vec<PathBuf>)> {
    match stage {
        Stage::Demo => {
            let q = cfg.demo_trajectory(cfg.demo.pose)?;
            let path = out.join("demo").join("demo.csv");
            write_file(&path, &demo_csv(&q, cfg.world.dt_s))?;
            Ok((cfg.seeds.demo, vec![path]))
        }
        Stage::Real => {
            let q = parse_demo_csv(&read_file(stage, &out.join("demo").join("demo.csv"))?)?;
            let set = gen_real_rollouts(&q, &cfg.phi_true, &cfg.world, cfg.identify.n_real, cfg.seeds.real)?;
            fs::create_dir_all(out.join("real")).map_err(|e| Error::io(out.join("real"), e))?;
            let mut files = Vec::new();
            for (k, t) in set.iter().enumerate() {
                let path = real_path(out, k);
                t.save(&path)?;
                files.push(path.clone());
                files.push(path.with_extension("json"));
            }
            Ok((cfg.seeds.real, files))
        }
        Stage::Identify => {
            let q = parse_demo_csv(&read_file(stage, &out.join("demo").join("demo.csv"))?)?;
            let real = (0..cfg.identify.n_real)
                .map(|k| {
                    let path = real_path(out, k);
                    read_file(stage, &path.with_extension("json"))?;
                    read_file(stage, &path)?;
                    Trajectory::load(&path)
                })
                .collect::<Result<Vec<_>>>()?;
            let (phi_star, trace) =
                optimize_distribution(&cfg.phi_init, &q, &real, &cfg.world, &cfg.identify_config())?;
            let dir = out.join("identify");
            let phi_path = dir.join("phi_star.json");
            let trace_path = dir.join("trace.csv");
            write_file(&phi_path, &phi_star.to_json())?;
            write_file(&trace_path, &trace.to_csv(&phi_star.names))?;
            Ok((cfg.seeds.identify, vec![phi_path, trace_path]))
        }
        Stage::Train => {
            let phi_star =
                ParamDistribution::from_json(&read_file(stage, &out.join("identify").join("phi_star.json"))?)?;
            let ppo = cfg.ppo_config();
            let mut files = Vec::new();
            for m in Method::ALL {
                let source = match m {
                    Method::DrInit => ParamSource::Distribution(cfg.phi_init.clone()),
                    Method::FixedMean => ParamSource::Fixed(phi_star.mean_params()?),
                    Method::DrIdentified => ParamSource::Distribution(phi_star.clone()),
                };
                let (net, curve) = train_policy(&source, &cfg.world, &cfg.reward, &ppo)?;
                let policy = policy_path(out, m);
                let curve_path = policy.with_file_name("curve.csv");
                write_file(&policy, &net.to_json())?;
                write_file(&curve_path, &curve.to_csv())?;
                files.push(policy);
                files.push(curve_path);
            }
            Ok((cfg.seeds.train, files))
        }
        Stage::Eval => {
            let mut policies = Vec::new();
            for m in Method::ALL {
                policies.push((m, PolicyNet::from_json(&read_file(stage, &policy_path(out, m))?)?));
            }
            let (reports, knob) = evaluate_methods(cfg, &policies)?;
            let dir = out.join("eval");
            emit_report(&reports, &dir)?;
            emit_report(&knob, &dir.join("knob"))?;
            let mut files = Vec::new();
            for sub in [dir.clone(), dir.join("knob")] {
                for name in ["results.csv", "histogram.csv", "episodes_raw.csv", "summary.txt"] {
                    files.push(sub.join(name));
                }
            }
            Ok((cfg.seeds.eval, files))
        }
    }
}

/// Transfer reports for every policy on the base truth, in method order,
/// and knob-offset reports for the identified-randomization policy.
pub fn evaluate_methods(
    cfg: &ExperimentConfig,
    policies: &[(Method, PolicyNet)],
) -> Result<(Vec<EvalReport>, Vec<EvalReport>)> {
    let horizon = cfg.ppo.horizon;
    let mut reports = Vec::new();
    let mut knob = Vec::new();
    for (m, net) in policies {
        reports.push(evaluate_transfer(
            m.label(),
            net,
            &cfg.phi_true,
            &cfg.world,
            &cfg.reward,
            cfg.eval.episodes,
            cfg.seeds.eval,
            horizon,
        )?);
        if *m == Method::DrIdentified {
            knob = knob_generalization(
                m.label(),
                net,
                &cfg.phi_true,
                &cfg.world,
                &cfg.reward,
                &cfg.eval.offsets,
                cfg.eval.episodes,
                cfg.seeds.eval,
                horizon,
            )?;
        }
    }
    Ok((reports, knob))
}

/// Identified distributions of the controlled experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantsReport {
    /// One entry per variant truth, in configuration order.
    pub variants: Vec<(String, ParamDistribution)>,
    pub pose_a: ParamDistribution,
    pub pose_b: ParamDistribution,
    pub table_csv: String,
    pub compare_csv: String,
}

/// Identifies every variant truth with the configured demonstration, and
/// the base truth from both elbow poses. Writes `variants/<name>/`,
/// `variants/pose_B/`, `variants/table.csv` and `variants/compare.csv`.
pub fn run_variants(cfg: &ExperimentConfig, out: &Path) -> Result<VariantsReport> {
    cfg.validate()?;
    let _lock = DirLock::acquire(out)?;
    let dir = out.join("variants");
    let identify = |truth: &DynParams, pose: DemoPose, name: &str| -> Result<ParamDistribution> {
        let q = cfg.demo_trajectory(pose)?;
        let real = gen_real_rollouts(&q, truth, &cfg.world, cfg.identify.n_real, cfg.seeds.real)?;
        let (phi, trace) = optimize_distribution(&cfg.phi_init, &q, &real, &cfg.world, &cfg.identify_config())?;
        write_file(&dir.join(name).join("phi_star.json"), &phi.to_json())?;
        write_file(&dir.join(name).join("trace.csv"), &trace.to_csv(&phi.names))?;
        Ok(phi)
    };

    let mut variants = Vec::new();
    for v in cfg.variant_truths() {
        let phi = identify(&v.phi, cfg.demo.pose, &v.name)?;
        variants.push((v.name, phi));
    }
    let pose_a = identify(&cfg.phi_true, DemoPose::A, "pose_A")?;
    let pose_b = identify(&cfg.phi_true, DemoPose::B, "pose_B")?;

    let table_csv = variants_table(&cfg.phi_init, &variants);
    let compare_csv = comparison_csv(&compare_distributions(&pose_a, &pose_b)?);
    write_file(&dir.join("table.csv"), &table_csv)?;
    write_file(&dir.join("compare.csv"), &compare_csv)?;
    Ok(VariantsReport {
        variants,
        pose_a,
        pose_b,
        table_csv,
        compare_csv,
    })
}

/// Rows are parameters; columns are the initial mean and std, then the
/// identified mean and std of each variant.
pub fn variants_table(init: &ParamDistribution, variants: &[(String, ParamDistribution)]) -> String {
    let mut out = String::from("parameter,mu_init,sigma_init");
    for (name, _) in variants {
        let _ = write!(out, ",mu_{name},sigma_{name}");
    }
    out.push('\n');
    let init_std = init.std_devs();
    let stds: Vec<Vec<f64>> = variants.iter().map(|(_, d)| d.std_devs()).collect();
    for (i, name) in init.names.iter().enumerate() {
        let _ = write!(out, "{name},{},{}", init.mean[i], init_std[i]);
        for ((_, d), s) in variants.iter().zip(&stds) {
            let _ = write!(out, ",{},{}", d.mean[i], s[i]);
        }
        out.push('\n');
    }
    out
}

/// Reads back the reports a finished eval stage wrote, as display text.
pub fn read_summary(out: &Path) -> Result<String> {
    let mut text = String::new();
    for path in [
        out.join("eval").join("summary.txt"),
        out.join("eval").join("knob").join("summary.txt"),
    ] {
        let body = read_file(Stage::Eval, &path)?;
        text.push_str(&body);
        text.push('\n');
    }
    let table = out.join("variants").join("table.csv");
    if table.exists() {
        text.push_str(&fs::read_to_string(&table).map_err(|e| Error::io(&table, e))?);
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "phi_true": {"door_mass": 1.5, "knob_mass": 0.3, "door_friction_loss": 0.1,
                     "door_stiffness": 0.02, "door_damping": 0.5,
                     "joint_damping": [12.0, 0.6], "slide_friction": 1.2},
        "seeds": {"demo": 1, "real": 2, "identify": 3, "train": 4, "eval": 5}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.world, WorldConfig::default());
        assert_eq!(cfg.identify.max_generations, PIPELINE_GENERATIONS);
        assert_eq!(
            cfg,
            ExperimentConfig {
                seeds: cfg.seeds,
                ..ExperimentConfig::new(cfg.phi_true)
            }
        );
        assert_eq!(cfg.eval.episodes, 30);
        assert_eq!(cfg.seeds.eval, 5);
        let names: Vec<String> = cfg.variant_truths().into_iter().map(|v| v.name).collect();
        assert_eq!(names, ["base", "spring1", "spring2"]);
        let spring2 = &cfg.variant_truths()[2].phi;
        assert!((spring2.door_stiffness - 2.02).abs() < 1e-12);
        assert!((spring2.door_damping - 1.5).abs() < 1e-12);
    }

    #[test]
    fn negative_mass_names_the_field() {
        let text = MINIMAL.replace("\"door_mass\": 1.5", "\"door_mass\": -1");
        match parse_config(&text) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "phi_true.door_mass"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn misspelled_key_is_unknown() {
        let text = MINIMAL.replace("door_stiffness", "door_stifness");
        match parse_config(&text) {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "door_stifness"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn duplicate_variant_names_are_rejected() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        let p = cfg.phi_true;
        cfg.variants = Some(vec![
            NamedParams {
                name: "a".into(),
                phi: p,
            },
            NamedParams {
                name: "a".into(),
                phi: p,
            },
        ]);
        assert!(matches!(cfg.validate(), Err(Error::Validation { .. })));
    }

    #[test]
    fn seed_override_touches_every_stage() {
        let cfg = parse_config(MINIMAL).unwrap().with_seed_override(42);
        assert_eq!(cfg.seeds, StageSeeds::all(42));
    }

    #[test]
    fn stage_list_parses_in_pipeline_order() {
        assert_eq!(
            Stage::parse_list("eval,demo,demo").unwrap(),
            vec![Stage::Demo, Stage::Eval]
        );
        assert!(Stage::parse_list("demo,bogus").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::UnknownKey("x".into())), 2);
        let dep = Error::Stage {
            stage: "identify".into(),
            source: Box::new(Error::StageDependency {
                stage: "identify".into(),
                path: "real/real_000.csv".into(),
            }),
        };
        assert_eq!(exit_code(&dep), 3);
        let runtime = Error::Stage {
            stage: "train".into(),
            source: Box::new(Error::Parse("bad policy".into())),
        };
        assert_eq!(exit_code(&runtime), 4);
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn demo_csv_round_trip() {
        let q = vec![[0.1, 1.0 / 3.0], [2.0f64.sqrt(), -0.5]];
        assert_eq!(parse_demo_csv(&demo_csv(&q, 0.001)).unwrap(), q);
    }
}
