use std::path::Path;
use std::process::{Command, Output};

fn cme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cme"))
        .args(args)
        .env_remove("CME_THREADS")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, dgp: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let out = cme(&["simulate", "--dgp", dgp, "--n", &n.to_string(), "--seed", &seed.to_string(), "--output", s(dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join(format!("{dgp}_n{n}_seed{seed}.csv"))
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate(&tmp.path().join("a"), "key_a1", 5000, 1);
    let b = simulate(&tmp.path().join("b"), "key_a1", 5000, 1);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn simulate_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let path = simulate(tmp.path(), "fig4_continuous", 100, 0);
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("Y,D,X"));
    assert_eq!(lines.count(), 100);
    let sidecar = std::fs::read_to_string(tmp.path().join("fig4_continuous_n100_seed0.json")).unwrap();
    assert!(sidecar.contains("theta(x) = x - x^2"), "{sidecar}");
}

#[test]
fn unknown_dgp_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cme(&["simulate", "--dgp", "nope", "--output", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("key_a1"));
}

#[test]
fn estimate_happy_path_and_rerun_from_config() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(&tmp.path().join("sim"), "key_a1", 1500, 2);
    let out_dir = tmp.path().join("est");
    let out = cme(&["estimate", "--input", s(&data), "--estimator", "kernel", "--n-boot", "200", "--output", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["curve.json", "curve.csv", "overlap.json", "config.toml"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let first = std::fs::read(out_dir.join("curve.json")).unwrap();
    let config = out_dir.join("config.toml");
    let again = cme(&["estimate", "--config", s(&config)]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(std::fs::read(out_dir.join("curve.json")).unwrap(), first);
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "dgp = \"fig4_continuous\"\nn = 50\nseed = 3\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = cme(&["simulate", "--config", s(&config), "--n", "20", "--output", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out_dir.join("fig4_continuous_n20_seed3.csv").exists());
    let echo = std::fs::read_to_string(out_dir.join("config.toml")).unwrap();
    assert!(echo.contains("n = 20"), "{echo}");
}

#[test]
fn unknown_estimator_lists_valid_names() {
    let out = cme(&["estimate", "--estimator", "spline", "--input", "unused.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("kernel") && err.contains("dml_plm"), "{err}");
}

#[test]
fn bad_config_key_value_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "estimator = \"spline\"\n").unwrap();
    let out = cme(&["estimate", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_bin_is_an_estimation_error_naming_the_bin() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(&tmp.path().join("sim"), "key_a1", 20, 0);
    let out = cme(&["estimate", "--input", s(&data), "--estimator", "binning", "--output", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bin 1"));
}

#[test]
fn missing_input_file_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cme(&["estimate", "--input", s(&tmp.path().join("absent.csv")), "--output", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_reports_uniform_coverage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cme(&[
        "benchmark", "--dgp", "key_a1", "--estimator", "kernel", "--replications", "20", "--n", "1000", "--n-boot", "200",
        "--output", s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    let cov = report["uniform_coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cov));
    assert!(tmp.path().join("report.csv").exists());
}

#[test]
fn benchmark_without_oracle_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cme(&["benchmark", "--dgp", "custom", "--output", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("oracle required"));
}

#[test]
fn thread_count_does_not_change_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |t: &str, dir: &str| {
        let out_dir = tmp.path().join(dir);
        let out = Command::new(env!("CARGO_BIN_EXE_cme"))
            .args(["benchmark", "--dgp", "key_a1", "--replications", "8", "--n", "800", "--n-boot", "100", "--output", s(&out_dir)])
            .env("CME_THREADS", t)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(out_dir.join("report.json")).unwrap()
    };
    assert_eq!(run("1", "one"), run("8", "eight"));
}

#[test]
fn diagnose_writes_overlap() {
    let tmp = tempfile::tempdir().unwrap();
    let data = simulate(&tmp.path().join("sim"), "fig3_binary", 2000, 1);
    let out_dir = tmp.path().join("diag");
    let out = cme(&["diagnose", "--input", s(&data), "--treatment-binary", "true", "--output", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("overlap.json")).unwrap()).unwrap();
    let treated: u64 = diag["treated"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    let control: u64 = diag["control"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(treated + control, 2000);
}
