use droid_core::harness::{
    exit_code, run_pipeline, run_variants, ExperimentConfig, Manifest, NamedParams, Stage, LOCK_FILE,
};
use droid_core::sim::DynParams;
use droid_core::Error;

const BASE: DynParams = DynParams {
    door_mass: 1.5,
    knob_mass: 0.3,
    door_friction_loss: 0.1,
    door_stiffness: 0.02,
    door_damping: 0.5,
    joint_damping: [12.0, 0.6],
    slide_friction: 1.2,
};

fn quick() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(BASE);
    cfg.identify.max_generations = 3;
    cfg.identify.n_real = 2;
    cfg
}

#[test]
fn demo_stage_alone_writes_only_the_demo() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(&quick(), &[Stage::Demo], dir.path()).unwrap();
    assert!(dir.path().join("demo/demo.csv").exists());
    for absent in ["real", "identify", "train", "eval"] {
        assert!(!dir.path().join(absent).exists(), "{absent}");
    }
    assert!(!dir.path().join(LOCK_FILE).exists());
    assert_eq!(m.stages.keys().copied().collect::<Vec<_>>(), vec![Stage::Demo]);
    assert_eq!(Manifest::load(dir.path()).unwrap().unwrap(), m);
}

#[test]
fn identify_without_references_is_a_dependency_error() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&quick(), &[Stage::Demo], dir.path()).unwrap();
    let err = run_pipeline(&quick(), &[Stage::Identify], dir.path()).unwrap_err();
    assert!(matches!(err.root(), Error::StageDependency { .. }), "{err}");
    assert_eq!(exit_code(&err), 3);
}

#[test]
fn stages_rerun_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    let first = run_pipeline(&cfg, &[Stage::Demo, Stage::Real, Stage::Identify], dir.path()).unwrap();
    let again = run_pipeline(&cfg, &[Stage::Identify], dir.path()).unwrap();
    assert_eq!(first, again);

    let other = tempfile::tempdir().unwrap();
    for stage in [Stage::Demo, Stage::Real, Stage::Identify] {
        run_pipeline(&cfg, &[stage], other.path()).unwrap();
    }
    assert_eq!(Manifest::load(other.path()).unwrap().unwrap(), first);
}

#[test]
fn changed_config_starts_a_fresh_manifest() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&quick(), &[Stage::Demo, Stage::Real], dir.path()).unwrap();
    let mut cfg = quick();
    cfg.seeds.demo = 9;
    let m = run_pipeline(&cfg, &[Stage::Demo], dir.path()).unwrap();
    assert_eq!(m.stages.len(), 1);
    assert_eq!(m.stages[&Stage::Demo].seed, 9);
}

#[test]
fn locked_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(LOCK_FILE), "").unwrap();
    let err = run_pipeline(&quick(), &[Stage::Demo], dir.path()).unwrap_err();
    assert!(matches!(err, Error::Locked(_)));
}

#[test]
fn identical_variants_give_identical_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick();
    cfg.variants = Some(vec![
        NamedParams {
            name: "a".into(),
            phi: BASE,
        },
        NamedParams {
            name: "b".into(),
            phi: BASE,
        },
    ]);
    let report = run_variants(&cfg, dir.path()).unwrap();
    assert_eq!(report.variants[0].1, report.variants[1].1);
    let mut lines = report.table_csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "parameter,mu_init,sigma_init,mu_a,sigma_a,mu_b,sigma_b"
    );
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[3..5], cells[5..7]);
    }
    assert!(dir.path().join("variants/compare.csv").exists());
    assert!(dir.path().join("variants/pose_B/phi_star.json").exists());
}
