use std::path::Path;

use lfc_core::experiment::{
    dump_matrices, load_config, run_comparison, run_experiment, Case, CaseList, ControllerKind,
    ExperimentConfig, Table,
};

fn bundled() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_s5.cfg")
}

const TWO_AREAS: &str = r#"
horizon = 1.0
dt = 0.01

[noise]
base_seed = 3
trial_count = 4

[[areas]]
inertia = 10.0
damping = 1.2
turbine_tc = 0.31
governor_tc = 0.08
governor_coeff = 2.4

[[areas]]
inertia = 11.0
damping = 1.1
turbine_tc = 0.30
governor_tc = 0.085
governor_coeff = 2.45

[[scenarios]]
name = "centralized"
controller = "centralized"

[[scenarios]]
name = "distributed"
controller = "distributed"

[[scenarios]]
name = "open"
controller = "none"
"#;

fn quiet(text: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text).unwrap();
    for a in &mut cfg.areas {
        a.rx = lfc_core::experiment::Weight::Scalar(0.0);
        a.rw = lfc_core::experiment::Weight::Scalar(0.0);
        a.x0_mean = [0.0; 4];
    }
    cfg
}

#[test]
fn bundled_config_loads() {
    let cfg = load_config(&bundled()).unwrap();
    assert_eq!(cfg.n_areas(), 6);
    assert_eq!(cfg.horizon, 6.0);
    assert_eq!(cfg.consensus.delta, 10.0);
    assert_eq!(cfg.noise.base_seed, 42);
    let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(again, cfg);
    let bench = ExperimentConfig::benchmark();
    assert_eq!(cfg.areas, bench.areas);
}

#[test]
fn scenarios_emit_artifacts() {
    let cfg = ExperimentConfig::from_toml(TWO_AREAS).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rep = run_experiment(&cfg, None, dir.path()).unwrap();
    let names: Vec<&str> = rep.scenarios.iter().map(|r| r.scenario.as_str()).collect();
    assert_eq!(names, ["centralized", "distributed", "open"]);
    for r in &rep.scenarios {
        assert!(r.error.is_none(), "{:?}", r.error);
        for f in &r.files {
            let p = dir.path().join(&r.scenario).join(f);
            assert!(std::fs::metadata(&p).unwrap().len() > 0, "{}", p.display());
        }
    }
    let grid_len = cfg.grid().len();

    let cent = Table::read(&dir.path().join("centralized/riccati_norms.csv")).unwrap();
    assert_eq!(cent.header, ["t", "P_central"]);
    assert_eq!(cent.rows(), grid_len);
    assert_eq!(*cent.column("P_central").unwrap().last().unwrap(), 0.0);

    let dist = Table::read(&dir.path().join("distributed/riccati_norms.csv")).unwrap();
    assert_eq!(dist.header, ["t", "P_central", "P_area1", "P_area2"]);
    assert_eq!(dist.column("P_central"), cent.column("P_central"));
    let d = rep.scenarios[1].comparison.as_ref().unwrap();
    assert!(
        d.riccati_sq_norm_rel.iter().all(|&e| e < 0.02),
        "{:?}",
        d.riccati_sq_norm_rel
    );
    assert_eq!(rep.scenarios[1].controller, ControllerKind::Distributed);
    assert!(rep.scenarios[1].convergence.is_some());

    for f in ["freq_metrics.csv", "command_norms.csv"] {
        assert_eq!(
            Table::read(&dir.path().join("open").join(f))
                .unwrap()
                .rows(),
            grid_len
        );
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(json["config"]["noise"]["base_seed"], 3);
    assert!(json["scenarios"][0].get("wall_clock_s").is_none());
    assert!(dir.path().join("timing.json").exists());
}

#[test]
fn quiet_system_has_zero_metrics_and_cost() {
    let cfg = quiet(TWO_AREAS);
    let dir = tempfile::tempdir().unwrap();
    let rep = run_experiment(&cfg, Some("open"), dir.path()).unwrap();
    assert_eq!(rep.scenarios.len(), 1);
    let freq = Table::read(&dir.path().join("open/freq_metrics.csv")).unwrap();
    assert_eq!(freq.columns.len(), 5);
    assert!(freq.columns[1..].iter().flatten().all(|&v| v == 0.0));

    let cases = CaseList {
        trials: Some(2),
        cases: vec![Case {
            name: None,
            rw: 0.0,
            rv: 0.01,
        }],
    };
    let rows = run_comparison(&cfg, &cases, dir.path()).unwrap();
    assert_eq!(rows[0].distributed.mean, 0.0);
    assert_eq!(rows[0].centralized.mean, 0.0);
    assert_eq!(
        Table::read(&dir.path().join("comparison.csv"))
            .unwrap()
            .rows(),
        1
    );
}

#[test]
fn failing_scenario_does_not_stop_others() {
    let mut cfg = ExperimentConfig::from_toml(TWO_AREAS).unwrap();
    // a near-zero inertia makes every integration blow up
    cfg.areas[1].inertia = 1e-9;
    let dir = tempfile::tempdir().unwrap();
    let rep = run_experiment(&cfg, None, dir.path()).unwrap();
    assert_eq!(rep.scenarios.len(), 3);
    assert!(rep.scenarios.iter().all(|r| r.error.is_some()));
    assert!(!rep.ok());
    assert!(dir.path().join("report.json").exists());
}

#[test]
fn matrices_dump() {
    let cfg = ExperimentConfig::from_toml(TWO_AREAS).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = dump_matrices(&cfg, dir.path()).unwrap();
    assert_eq!(files.len(), 5);
    let a = std::fs::read_to_string(dir.path().join("A.csv")).unwrap();
    assert_eq!(a.lines().count(), 8);
    assert_eq!(a.lines().next().unwrap().split(',').count(), 8);
}

#[test]
fn unknown_scenario_is_an_error() {
    let cfg = ExperimentConfig::from_toml(TWO_AREAS).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(run_experiment(&cfg, Some("missing"), dir.path()).is_err());
}
