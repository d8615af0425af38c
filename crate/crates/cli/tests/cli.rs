//! Command-line behaviour of the `pmle` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn pmle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pmle"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("PMLE_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write_sample(dir: &Path, name: &str, values: &[f64]) -> PathBuf {
    let path = dir.join(name);
    let mut text = String::from("value\n");
    for v in values {
        text.push_str(&format!("{v}\n"));
    }
    fs::write(&path, text).unwrap();
    path
}

fn observations() -> Vec<f64> {
    // deterministic, roughly bell-shaped values
    (0..40)
        .map(|i| {
            let u = (i as f64 + 0.5) / 40.0;
            let z = (u - 0.5) * 5.0;
            z * (1.0 - 0.1 * z * z).max(0.2) + 0.3 * ((i * 7 % 11) as f64 / 11.0 - 0.5)
        })
        .collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_output_is_reproducible_json() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "y.csv", &observations());
    let run = |out: &Path, threads: &str| {
        let o = pmle(&[
            "--threads", threads, "fit", "--data", s(&data), "--error-family", "normal", "--error-scale", "0.5",
            "--n-subsamples", "4", "--grid-points", "200", "--out", s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    let a = run(&dir.path().join("a.json"), "1");
    let b = run(&dir.path().join("b.json"), "3");
    assert_eq!(a, b);
    let json: serde_json::Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(json["grid"].as_array().unwrap().len(), 200);
    assert_eq!(json["density"].as_array().unwrap().len(), 200);
    assert!(json["diagnostics"]["lambda"].as_f64().unwrap() > 0.0);
}

#[test]
fn fit_accepts_an_error_sample_and_leaves_inputs_untouched() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "y.csv", &observations());
    let errs: Vec<f64> = (0..40).map(|i| 0.4 * ((i * 13 % 17) as f64 / 17.0 - 0.5)).collect();
    let err = write_sample(dir.path(), "e.csv", &errs);
    let before = (fs::read(&data).unwrap(), fs::read(&err).unwrap());
    let o = pmle(&["fit", "--data", s(&data), "--error-sample", s(&err), "--n-subsamples", "3", "--grid-points", "100"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["density"].as_array().unwrap().len(), 100);
    assert_eq!(before, (fs::read(&data).unwrap(), fs::read(&err).unwrap()));
}

#[test]
fn fit_rejects_ambiguous_error_specifications() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "y.csv", &observations());
    let err = write_sample(dir.path(), "e.csv", &[0.1, -0.2, 0.3]);
    let both = pmle(&[
        "fit", "--data", s(&data), "--error-sample", s(&err), "--error-family", "normal", "--error-scale", "1",
    ]);
    assert_eq!(code(&both), 2);
    assert!(String::from_utf8_lossy(&both.stderr).contains("exactly one"));
    assert_eq!(code(&pmle(&["fit", "--data", s(&data)])), 2);
    assert_eq!(code(&pmle(&["fit", "--data", s(&data), "--error-family", "normal"])), 2);
}

#[test]
fn fit_rejects_conflicting_lambda_options_and_bad_paths() {
    let dir = TempDir::new().unwrap();
    let data = write_sample(dir.path(), "y.csv", &observations());
    let base = ["fit", "--data", s(&data), "--error-family", "laplace", "--error-scale", "1"];
    let with = |extra: &[&str]| code(&pmle(&[&base[..], extra].concat()));
    assert_eq!(with(&["--lambda", "1", "--cv"]), 2);
    assert_eq!(with(&["--lambda-R", "1000", "--cv"]), 2);
    let missing_dir = dir.path().join("nowhere").join("fit.json");
    assert_eq!(with(&["--out", s(&missing_dir)]), 2);
    let absent = dir.path().join("absent.csv");
    assert_eq!(code(&pmle(&["fit", "--data", s(&absent), "--error-family", "normal", "--error-scale", "1"])), 2);
}

#[test]
fn simulate_writes_one_row_per_scenario_and_one_ise_per_replicate() {
    let dir = TempDir::new().unwrap();
    let table = dir.path().join("mise.csv");
    let ise = dir.path().join("ise.csv");
    let o = pmle(&[
        "simulate", "--truth", "normal", "--error", "normal", "--n", "30", "--c", "0.5", "--replicates", "2",
        "--out", s(&table), "--ise-out", s(&ise),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<String> = fs::read_to_string(&table).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], "truth,error,n,C,mise,se,failures");
    assert!(rows[1].starts_with("normal,normal,30,"));
    let ise_rows = fs::read_to_string(&ise).unwrap().lines().count();
    assert_eq!(ise_rows, 1 + 2);
}

#[test]
fn simulate_reads_scenario_files() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("grid.ini");
    fs::write(&config, "# tiny grid\n[scenario]\ntruth=normal\nerror=laplace\nn=30\nc=1\nreplicates=1\n").unwrap();
    let table = dir.path().join("mise.csv");
    let o = pmle(&["simulate", "--scenarios", s(&config), "--out", s(&table)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&table).unwrap().lines().count(), 2);
}

#[test]
fn simulate_rejects_unknown_names() {
    let dir = TempDir::new().unwrap();
    let table = dir.path().join("mise.csv");
    let o = pmle(&[
        "simulate", "--truth", "normal", "--error", "cauchy", "--n", "30", "--c", "1", "--out", s(&table),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!table.exists());
    let o = pmle(&["simulate", "--truth", "normal", "--out", s(&table)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn validate_runs_small_sweeps() {
    let o = pmle(&["validate", "--sweep-size", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().count(), 8);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
    assert_eq!(code(&pmle(&["validate", "--sweep-size", "0"])), 2);
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(code(&pmle(&["validate", "--bogus"])), 2);
    assert_eq!(code(&pmle(&["frobnicate"])), 2);
}
