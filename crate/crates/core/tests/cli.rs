use std::path::Path;
use std::process::{Command, Output};

fn dyadic_agg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyadic-agg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr has a line");
    serde_json::from_str(line).expect("stderr is JSON")
}

fn csv_rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}

#[test]
fn one_csv_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let status = dyadic_agg(&[
        "--scenario",
        "pc1d",
        "--n",
        "64,128",
        "--sigma",
        "0.5,1,2",
        "--reps",
        "3",
        "--out",
        out,
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(csv_rows(&dir.path().join("results.csv")), 6);
    let header = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(header.starts_with("scenario,n,d,sigma,lambda,rule,reps,mse_mean,mse_se,seconds"));
    assert!(dir.path().join("results.json").exists());
}

#[test]
fn plot_dump_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let status = dyadic_agg(&[
        "--scenario",
        "pc1d",
        "--n",
        "65536",
        "--sigma",
        "1",
        "--reps",
        "1",
        "--emit",
        "plot",
        "--out",
        out,
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let plot = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("plot_"))
        .expect("plot file written");
    assert_eq!(csv_rows(&plot), 65536);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "scenario = \"box2d\"\nd = 2\nn = 8\nsigma = 0.25\nreps = 2\norderings = [\"random\"]\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = dyadic_agg(&[
        "--config",
        cfg.to_str().unwrap(),
        "--n",
        "16",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let mut reader = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let row = reader.records().next().unwrap().unwrap();
    assert_eq!(&row[0], "box2d");
    assert_eq!(&row[1], "16");
    assert_eq!(&row[2], "2");
}

#[test]
fn bad_grid_size_exits_with_config_status() {
    let out = dyadic_agg(&["--scenario", "pc1d", "--n", "100", "--sigma", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert!(err["error"].is_string());
    assert!(err["message"].as_str().unwrap().contains("100"));
}

#[test]
fn negative_lambda_is_rejected() {
    let out = dyadic_agg(&["--scenario", "pc1d", "--n", "64", "--sigma", "1", "--lambda=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"].is_string());
}

#[test]
fn unknown_flag_is_reported_as_json() {
    let out = dyadic_agg(&["--scenario", "pc1d", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn unknown_scenario_is_rejected() {
    let out = dyadic_agg(&["--scenario", "zigzag", "--n", "64", "--sigma", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_signal_file_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = format!("file:{}", dir.path().join("absent.sig").display());
    let out = dyadic_agg(&[
        "--scenario",
        &missing,
        "--n",
        "64",
        "--sigma",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("absent.sig"));
}
