use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ikabc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ikabc")).args(args).output().unwrap()
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_writes_five_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ikabc(&["generate", "--model", "gaussian", "--dim", "4", "--n", "5000", "--seed", "1", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["config.json", "obs.csv", "params.csv", "sims.csv", "truth.csv"]);
    let params = read(&a.join("params.csv"));
    assert_eq!(params.lines().count(), 5001);
    assert_eq!(params.lines().nth(1).unwrap().split(',').count(), 4);
    for f in ["params.csv", "sims.csv", "obs.csv", "truth.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn zero_dimension_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = ikabc(&["generate", "--dim", "0", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("params.csv").exists());
}

#[test]
fn unknown_method_lists_valid_ones() {
    let o = ikabc(&["benchmark", "--methods", "rejection,bogus"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    for m in ["rejection", "loclinear", "ikernel", "maxima"] {
        assert!(err.contains(m), "{err}");
    }
}

#[test]
fn missing_input_file_fails_with_error_json() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(ikabc(&["generate", "--dim", "2", "--n", "200", "--out", data.to_str().unwrap()]).status.success());
    std::fs::remove_file(data.join("sims.csv")).unwrap();
    let out = dir.path().join("est");
    let o = ikabc(&["estimate", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let err: Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("missing file"), "{err}");
    let report: Value = serde_json::from_str(&read(&out.join("estimate.json"))).unwrap();
    assert!(report["error"].as_str().unwrap().contains("missing file"));
}

#[test]
fn benchmark_rows_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = ikabc(&[
            "benchmark", "--dims", "2,3,4", "--methods", "rejection,ikernel", "--replicates", "3", "--n", "300",
            "--seed", "5", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        read(&out.join("benchmark.csv"))
    };
    let strip = |csv: &str| -> Vec<String> {
        csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_owned()).collect()
    };
    let a = run("a");
    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines[0], "dimension,method,replicate_seed,mse,wall_time_ms");
    assert_eq!(lines.len(), 19);
    assert_eq!(strip(&a), strip(&run("b")));
}

#[test]
fn estimate_recovers_matching_row_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("params.csv"), "a,b\n1,10\n2,20\n3,30\n4,40\n").unwrap();
    std::fs::write(dir.path().join("sims.csv"), "s\n0.1\n0.7\n0.3\n0.9\n").unwrap();
    std::fs::write(dir.path().join("obs.csv"), "s\n0.3\n").unwrap();
    let out = dir.path().join("out");
    let o = ikabc(&[
        "estimate", "--data", dir.path().to_str().unwrap(), "--method", "rejection", "--tol", "0.25", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&read(&out.join("estimate.json"))).unwrap();
    assert_eq!(report["theta_est"], serde_json::json!([3.0, 30.0]));
    assert_eq!(report["config"]["abc"]["tolerance_fraction"], 0.25);

    // the echoed config reproduces the run
    let again = dir.path().join("again");
    let o = ikabc(&["estimate", "--config", out.join("estimate.json").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let second: Value = serde_json::from_str(&read(&again.join("estimate.json"))).unwrap();
    assert_eq!(second["theta_est"], report["theta_est"]);
}

#[test]
fn maxima_on_three_site_toy() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("params.csv"), "theta\n0\n5\n10\n").unwrap();
    std::fs::write(dir.path().join("sims.csv"), "s\n0\n5\n10\n").unwrap();
    std::fs::write(dir.path().join("obs.csv"), "s\n5\n").unwrap();
    let out = dir.path().join("out");
    let o = ikabc(&[
        "estimate", "--data", dir.path().to_str().unwrap(), "--method", "maxima", "--xi", "3", "--trees", "1",
        "--xi-sim", "3", "--trees-sim", "1", "--trace", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&read(&out.join("estimate.json"))).unwrap();
    let theta = report["theta_est"][0].as_f64().unwrap();
    assert!(theta > 2.5 && theta < 7.5, "{theta}");
    assert_eq!(report["diagnostics"]["similarity"], 1.0);
    assert!(read(&out.join("trace.csv")).starts_with("iteration,best_similarity,theta1\n"));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(ikabc(&["generate", "--dim", "3", "--n", "600", "--seed", "2", "--out", data.to_str().unwrap()]).status.success());
    let run = |w: &str| {
        let out = dir.path().join(format!("w{w}"));
        let o = ikabc(&["estimate", "--data", data.to_str().unwrap(), "--workers", w, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        let v: Value = serde_json::from_str(&read(&out.join("estimate.json"))).unwrap();
        (v["theta_est"].clone(), v["diagnostics"].clone())
    };
    assert_eq!(run("1"), run("4"));
}
