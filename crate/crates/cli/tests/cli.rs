use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn svrpg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svrpg"))
        .args(args)
        .output()
        .expect("spawn svrpg")
}

fn benchmark(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn solve_benchmark_prints_stable_optimum() {
    let out = svrpg(&["solve", benchmark("appendix_g.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rho_line = text.lines().find(|l| l.starts_with("rho(A - B K*) = ")).unwrap();
    let rho: f64 = rho_line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(rho < 1.0);
    // 12 significant digits: d.ddddddddddde±x
    let mantissa = rho_line.rsplit(' ').next().unwrap().split('e').next().unwrap();
    assert_eq!(mantissa.len(), 13);
    assert!(text.contains("Delta0 = "));
}

#[test]
fn solve_rejects_indefinite_q() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(
        &path,
        r#"{"A": [[0.5]], "B": [[1.0]], "Q": [[-1.0]], "R": [[1.0]], "Sigma0": [[1.0]]}"#,
    )
    .unwrap();
    let out = svrpg(&["solve", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("Q not positive definite"));
}

fn write_small_experiment(dir: &Path, eta: f64) -> PathBuf {
    fs::write(
        dir.join("scalar.json"),
        r#"{"A": [[0.5]], "B": [[1.0]], "Q": [[1.0]], "R": [[1.0]], "Sigma0": [[1.0]], "K0": [[0.0]], "x0": [1.0]}"#,
    )
    .unwrap();
    let cfg = format!(
        r#"{{"system": "scalar.json", "seeds": [1, 2], "output_dir": "out", "emit_svg": false,
            "runs": [
              {{"label": "pg", "algorithm": "exact_pg", "iterations": 10, "eta": {eta}}},
              {{"label": "zo2p", "algorithm": "zo2p_pg", "L": 10, "n1": 4, "r": 1e-3, "eta": {eta}}}
            ]}}"#
    );
    let path = dir.join("experiment.json");
    fs::write(&path, cfg).unwrap();
    path
}

#[test]
fn run_writes_outputs_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small_experiment(tmp.path(), 0.05);
    let out_dir = tmp.path().join("elsewhere");
    let out = svrpg(&[
        "run",
        cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--svg",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("trace_zo2p_seed9.csv").exists());
    assert!(!out_dir.join("trace_zo2p_seed1.csv").exists());
    assert!(out_dir.join("median_gap.svg").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["zo2p"]["cost_evaluations"], 80);
    assert_eq!(summary["zo2p"]["two_point_queries"], 40);
    assert_eq!(summary["pg"]["termination_counts"]["completed"], 1);
}

#[test]
fn run_exits_nonzero_when_a_run_destabilizes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small_experiment(tmp.path(), 50.0);
    let out = svrpg(&["run", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(tmp.path().join("out/summary.json").exists());
}

#[test]
fn run_rejects_empty_seed_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_small_experiment(tmp.path(), 0.05);
    let text = fs::read_to_string(&cfg).unwrap().replace("[1, 2]", "[]");
    fs::write(&cfg, text).unwrap();
    let out = svrpg(&["run", cfg.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeds must not be empty"));
}

#[test]
fn probe_writes_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("probe.json");
    let system = benchmark("appendix_g.json");
    fs::write(
        &cfg,
        format!(
            r#"{{"system": {:?}, "output_dir": "out", "probes": [
                {{"kind": "estimator_bias", "radius": 1e-3, "samples": 200}},
                {{"kind": "gradient_domination", "grid_size": 20}}]}}"#,
            system.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = svrpg(&["probe", cfg.to_str().unwrap(), "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/probes.json")).unwrap()).unwrap();
    assert_eq!(reports[0]["seed"], 4);
    assert!(reports[1]["scalars"]["lambda_hat"].as_f64().unwrap() > 0.0);
}
