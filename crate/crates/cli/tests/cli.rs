use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn fsl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsl"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("FSL_OUT_DIR")
        .output()
        .expect("spawn fsl")
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn summary(out: &Path) -> Value {
    serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn reducible_joint_has_unit_lambda2_and_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["gibbs", "analyze", &config("half-identity.csv")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(dir.path());
    assert_eq!(s["report"]["lambda2"], 1.0);
    assert_eq!(s["report"]["gap"], 0.0);
    let csv = fs::read_to_string(dir.path().join("gibbs.csv")).unwrap();
    assert!(csv.starts_with("lambda2,gap,forward_sup,backward_sup\n1,0,"), "{csv}");
}

#[test]
fn unknown_field_is_a_schema_error_with_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(configs().join("prox-gaussian.json")).unwrap()).unwrap();
    cfg["chain"]["step_size"] = 0.1.into();
    fs::write(&bad, cfg.to_string()).unwrap();
    let out = dir.path().join("results");
    let o = fsl(&out, &["prox", "run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step_size"));
    assert!(!out.exists());
}

#[test]
fn semantic_violations_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("zero.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(configs().join("prox-gaussian.json")).unwrap()).unwrap();
    cfg["chain"]["iterations"] = 0.into();
    fs::write(&bad, cfg.to_string()).unwrap();
    let o = fsl(&dir.path().join("r"), &["prox", "run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let missing = fsl(dir.path(), &["dp", "plan", "--json", "/nonexistent/inst.json"]);
    assert_eq!(missing.status.code(), Some(2));

    let bad_suite = fsl(dir.path(), &["verify", "--suite", "everything"]);
    assert_eq!(bad_suite.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_status_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("outside.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(configs().join("llt-laplace.json")).unwrap()).unwrap();
    cfg["points"] = serde_json::json!([[0.2], [1.5]]);
    fs::write(&path, cfg.to_string()).unwrap();
    let out = dir.path().join("r");
    let o = fsl(&out, &["llt", "eval", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("llt"));
    assert!(!out.exists());
}

#[test]
fn prox_output_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = fsl(out, &["--seed", "11", "--replicas", "3", "prox", "run", &config("prox-gaussian.json")]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read(a.join("iterations.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("iterations.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("iteration,chi2,kl,accept_rate\n1,"));
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 11);

    let s = summary(&a);
    assert_eq!(s["seed"], 11);
    assert_eq!(s["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(s["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(s["final_states"].as_array().unwrap().len(), 3);

    let c = dir.path().join("c");
    fsl(&c, &["--seed", "12", "--replicas", "3", "prox", "run", &config("prox-gaussian.json")]);
    assert_ne!(fs::read(a.join("summary.json")).unwrap(), fs::read(c.join("summary.json")).unwrap());
}

#[test]
fn three_iterations_give_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k3.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(configs().join("prox-gaussian.json")).unwrap()).unwrap();
    cfg["chain"]["iterations"] = 3.into();
    fs::write(&path, cfg.to_string()).unwrap();
    let o = fsl(dir.path(), &["--format", "json", "prox", "run", path.to_str().unwrap()]);
    assert!(o.status.success());
    let rows: Value = serde_json::from_slice(&fs::read(dir.path().join("iterations.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let chi2: Vec<f64> = rows.iter().map(|r| r["chi2"].as_f64().unwrap()).collect();
    assert!(chi2.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn localization_trajectory_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["--seed", "3", "localize", "run", &config("localize-gaussian.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,y1,z1"));
    let steps: Vec<i64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(steps, (1..=8).collect::<Vec<_>>());
}

#[test]
fn dp_plan_reproduces_the_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["dp", "plan", "--json", &config("dp-plan.json")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let plan: Value = serde_json::from_slice(&fs::read(dir.path().join("plan.json")).unwrap()).unwrap();
    assert!((plan["k"].as_f64().unwrap() - 617.3).abs() < 0.05);
    assert!((plan["mu"].as_f64().unwrap() - 0.01620).abs() < 5e-6);
    assert_eq!(plan["surrogate"], true);
}

#[test]
fn dp_toy_writes_one_row_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.json");
    let mut cfg: Value = serde_json::from_str(&fs::read_to_string(configs().join("dp-toy.json")).unwrap()).unwrap();
    cfg["seeds"] = 3.into();
    fs::write(&path, cfg.to_string()).unwrap();
    let o = fsl(dir.path(), &["--seed", "5", "dp", "run-toy", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("toy.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "seed,excess_risk,accept_rate,oracle_calls");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("5,") && lines[3].starts_with("7,"));
    for row in &lines[1..] {
        let risk: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert!(risk >= 0.0);
    }
}

#[test]
fn verify_gaussian_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["verify", "--suite", "gaussian"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.contains("PASS")).count(), 3);
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("verify.json")).unwrap()).unwrap();
    let ids: Vec<u64> = report["checks"].as_array().unwrap().iter().map(|c| c["criterion"].as_u64().unwrap()).collect();
    assert_eq!(ids, [1, 2, 8]);
    assert_eq!(report["passed"], true);
}

#[test]
fn llt_eval_matches_the_laplace_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = fsl(dir.path(), &["llt", "eval", &config("llt-laplace.json")]);
    assert!(o.status.success());
    let csv = fs::read_to_string(dir.path().join("llt.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let x = f[0];
        assert!((f[1] + (1.0 - x * x).ln()).abs() < 1e-12, "{line}");
        assert!((f[2] - 2.0 * x / (1.0 - x * x)).abs() < 1e-9, "{line}");
    }
}
