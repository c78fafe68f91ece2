//! On-disk artifacts and the command-line front end.

use std::fs;
use std::path::Path;
use std::process::Command;

use mechnum::experiments::{run, ExperimentConfig, ExperimentKind, Summary};

fn csv_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

#[test]
fn csvs_carry_hash_comment_and_header() {
    let expected = [
        ("scenario.csv", ExperimentKind::Example1, "link,distance_m,gain,interference_w,kind,eps"),
        ("example1_curves.csv", ExperimentKind::Example1, "link,strategy_param,utility_raw,utility_norm,allocation_raw,allocation_norm,lambda,converged"),
        ("example2_curve.csv", ExperimentKind::Example2, "alpha,success_probability,mean_pi_c,mean_pi_c_over_s_c"),
        ("example3_traces.csv", ExperimentKind::Example3, "run,l,nu,distance,exit"),
        ("oracle_check.csv", ExperimentKind::OracleCheck, "instance,n_users,x_total,solver_value,oracle_value,relative_gap,kkt_residual,lambda,converged"),
    ];
    let dir = tempfile::tempdir().unwrap();
    for (file, kind, header) in expected {
        let cfg = ExperimentConfig::defaults(kind);
        let out = dir.path().join(kind.as_str());
        run(&cfg).unwrap().write_to(&out).unwrap();
        let lines = csv_lines(&out.join(file));
        assert_eq!(lines[0], format!("# config_hash={}, seed={}", cfg.hash(), cfg.seed), "{file}");
        assert_eq!(lines[1], header, "{file}");
        let cols = header.split(',').count();
        assert!(lines.len() > 2, "{file} has no data");
        for l in &lines[2..] {
            assert_eq!(l.split(',').count(), cols, "{file}: {l}");
        }
        let summary: Summary = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary.config_hash, cfg.hash());
    }
}

#[test]
fn trace_csv_has_one_utility_column_per_link() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Example3);
    let r = run(&cfg).unwrap();
    let (_, bytes) = r.files.iter().find(|(n, _)| n == "example3_run0_trace.csv").unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    let header = text.lines().nth(1).unwrap();
    assert!(header.starts_with("l,selected_i,selected_j,delta,theta,psi,rho,phi,charge,payment,nu,u_1"));
    assert_eq!(header.split(',').count(), 11 + cfg.scenario.n_links);
}

#[test]
fn different_seeds_change_outputs() {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Example2);
    let a = run(&cfg).unwrap();
    cfg.seed = 1;
    let b = run(&cfg).unwrap();
    assert_ne!(a.files[0].1, b.files[0].1);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mechnum"))
}

#[test]
fn cli_run_writes_artifacts_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    fs::write(&config, "experiment = \"example2\"\nn_samples = 20\n[example2]\ncenter_a = 0.03\n").unwrap();
    let out = dir.path().join("out");
    let status = cli()
        .args(["run", "example2", "--seed", "5", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let summary: Summary = serde_json::from_slice(&status.stdout).unwrap();
    assert_eq!(summary.seed, 5);
    let mut expect = ExperimentConfig::from_toml_str(&fs::read_to_string(&config).unwrap()).unwrap();
    expect.seed = 5;
    assert_eq!(summary.config_hash, expect.hash());
    assert_eq!(csv_lines(&out.join("example2_samples.csv")).len(), 2 + 20);
    assert!(out.join("summary.json").exists());
}

#[test]
fn cli_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    fs::write(&config, "experiment = \"example1\"\nunknown_key = 3\n").unwrap();
    let out = cli().args(["run", "example1", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    fs::write(&config, "experiment = \"example3\"\n").unwrap();
    let out = cli().args(["run", "example1", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = cli().args(["run", "nonexistent"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_check_prints_summary() {
    let out = cli().args(["check", "oracle"]).output().unwrap();
    assert!(out.status.success());
    let summary: Summary = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary.experiment, "oracle_check");
    assert!(summary.all_passed());
}
