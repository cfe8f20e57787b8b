use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use robmon::datasets::{geyser_minority_mask, load_geyser};
use serde_json::Value;
use tempfile::TempDir;

fn robmon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robmon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = robmon(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn csv_rows(p: &str) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn json(p: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(robmon(&["--help"]).status.code(), Some(0));
    assert_eq!(robmon(&["--version"]).status.code(), Some(0));
    assert_eq!(robmon(&["monitor", "--help"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(robmon(&[]).status.code(), Some(1));
    assert_eq!(robmon(&["fit", "--data", "geyser", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        robmon(&["fit", "--data", "geyser", "--rho", "custom", "--bdp", "0.3"]).status.code(),
        Some(1)
    );
    assert_eq!(
        robmon(&["fit", "--data", "geyser", "--a", "0.2"]).status.code(),
        Some(1)
    );
    assert_eq!(
        robmon(&["fit", "--data", "geyser", "--estimator", "mcd", "--h", "200", "--bdp", "0.3"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        robmon(&["fit", "--data", "geyser", "--starts", "elemental:0"]).status.code(),
        Some(1)
    );
}

#[test]
fn missing_file_names_the_path() {
    let out = robmon(&["fit", "--data", "/nonexistent/input.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/input.csv"));
}

#[test]
fn malformed_csv_exits_one() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "bad.csv");
    fs::write(&p, "a,b\n1,2\n3,x\n").unwrap();
    let out = robmon(&["fit", "--data", &p]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains("line 3"), "{err}");
}

#[test]
fn degenerate_data_exits_two() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "flat.csv");
    fs::write(&p, "a,b\n1,2\n1,2\n1,2\n1,2\n1,2\n1,2\n").unwrap();
    assert_eq!(robmon(&["fit", "--data", &p]).status.code(), Some(2));
}

#[test]
fn simulate_two_cluster_counts() {
    let dir = TempDir::new().unwrap();
    let (data, mask) = (path(&dir, "d.csv"), path(&dir, "m.csv"));
    let args = [
        "simulate", "two-cluster", "--epsilon", "0.35", "--n", "200", "--seed", "7", "--output",
        &data, "--mask", &mask,
    ];
    ok(&args);
    let rows = csv_rows(&data);
    assert_eq!(rows.len(), 201);
    assert!(rows[1..].iter().all(|r| r.len() == 2));
    let flags = csv_rows(&mask);
    assert_eq!(flags[0], vec!["minority"]);
    assert_eq!(flags[1..].iter().filter(|r| r[0] == "1").count(), 70);

    let first = fs::read(&data).unwrap();
    ok(&args);
    assert_eq!(first, fs::read(&data).unwrap());
}

#[test]
fn simulate_skewed() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "s.csv");
    ok(&["simulate", "skewed", "--n", "50", "--p", "3", "--direction", "1,0,0", "--output", &data]);
    let rows = csv_rows(&data);
    assert_eq!(rows.len(), 51);
    assert_eq!(rows[0], vec!["x1", "x2", "x3"]);
}

#[test]
fn monitor_mcd_grid_and_determinism() {
    let dir = TempDir::new().unwrap();
    let trace = path(&dir, "t.csv");
    let args = [
        "monitor", "--data", "geyser", "--estimator", "mcd", "--grid", "0.5:0.05:0.1", "--output",
        &trace,
    ];
    ok(&args);
    let summary = json(&path(&dir, "t.json"));
    let points = summary["points"].as_array().unwrap();
    assert_eq!(points.len(), 9);
    assert_eq!(points[0]["grid_value"].as_f64(), Some(0.5));
    assert_eq!(points[8]["grid_value"].as_f64(), Some(0.1));
    let fp = &points[0]["starts_fingerprint"];
    assert!(points.iter().all(|p| &p["starts_fingerprint"] == fp));
    let rows = csv_rows(&trace);
    assert_eq!(rows[0], vec!["grid_value", "obs_index", "distance"]);
    assert_eq!(rows.len(), 1 + 9 * 272);

    let (a, b) = (fs::read(&trace).unwrap(), fs::read(path(&dir, "t.json")).unwrap());
    ok(&args);
    assert_eq!(a, fs::read(&trace).unwrap());
    assert_eq!(b, fs::read(path(&dir, "t.json")).unwrap());
}

#[test]
fn monitor_synthetic_transition_at_half() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "g.csv");
    ok(&[
        "simulate", "two-cluster", "--n", "272", "--epsilon", "0.35", "--seed", "3", "--output",
        &data,
    ]);
    let trace = path(&dir, "t.csv");
    ok(&[
        "monitor", "--data", &data, "--estimator", "s", "--rho", "bisquare", "--grid",
        "0.5:0.01:0.47", "--output", &trace,
    ]);
    let summary = json(&path(&dir, "t.json"));
    assert_eq!(summary["transition_index"].as_u64(), Some(1));
    assert_eq!(summary["transition_value"].as_f64(), Some(0.49));
}

#[test]
fn monitor_rejects_bad_grids() {
    let dir = TempDir::new().unwrap();
    let trace = path(&dir, "t.csv");
    for grid in ["0.5:0:0.1", "0.5,0.5", "abc", "0.5:0.1"] {
        let out = robmon(&["monitor", "--data", "geyser", "--grid", grid, "--output", &trace]);
        assert_eq!(out.status.code(), Some(1), "grid {grid}");
    }
}

#[test]
fn fit_mcd_raw_subset_has_h_members() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "f.json");
    ok(&["fit", "--data", "geyser", "--estimator", "mcd", "--bdp", "0.5", "--output", &out]);
    let fit = json(&out);
    let h = fit["mcd"]["h"].as_u64().unwrap() as usize;
    // ⌈n(1 − 0.5)⌉ = 136 is raised to the smallest legal size ⌈(n + p + 1)/2⌉.
    assert_eq!(h, 138);
    let raw = floats(&fit["mcd"]["raw_weights"]);
    assert_eq!(raw.iter().filter(|&&w| w == 1.0).count(), h);
    assert!(raw.iter().all(|&w| w == 0.0 || w == 1.0));
    assert_eq!(fit["method"], "MCD");
    assert_eq!(floats(&fit["scatter"]).len(), 4);
}

#[test]
fn fit_custom_rejects_geyser_minority() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "f.json");
    ok(&["fit", "--data", "geyser", "--rho", "custom", "--a", "0.2", "--output", &out]);
    let fit = json(&out);
    let weights = floats(&fit["weights"]);
    let mask = geyser_minority_mask(&load_geyser::<f64>());
    assert_eq!(weights.len(), 272);
    for (w, m) in weights.iter().zip(&mask) {
        if *m {
            assert_eq!(*w, 0.0);
        }
    }
    assert_eq!(fit["rho"]["family"], "custom_a");
}

#[test]
fn fit_csv_and_mm() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "f.csv");
    ok(&["fit", "--data", "geyser", "--estimator", "mcd", "--format", "csv", "--output", &out]);
    let rows = csv_rows(&out);
    assert_eq!(rows[0], vec!["obs_index", "distance", "weight", "raw_weight"]);
    assert_eq!(rows.len(), 273);

    let mm = path(&dir, "mm.json");
    ok(&[
        "fit", "--data", "geyser", "--estimator", "mm", "--efficiency", "0.7", "--starts",
        "elemental:300", "--output", &mm,
    ]);
    assert_eq!(json(&mm)["method"], "MM");
}

#[test]
fn weights_table_layout() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "w.csv");
    ok(&["weights", "--data", "geyser", "--output", &out]);
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 273);
    assert_eq!(rows[0].len(), 5);
    assert_eq!(&rows[0][..3], ["obs_index", "mcd_distance", "mcd_weight"]);
}

#[test]
fn ellipse_from_identity_fit_is_unit_circle() {
    let dir = TempDir::new().unwrap();
    let fit = path(&dir, "id.json");
    fs::write(&fit, r#"{"location":[0,0],"scatter":[1,0,0,1]}"#).unwrap();
    let out = path(&dir, "e.csv");
    // χ²₂ quantile equal to 1.
    let level = (1.0 - (-0.5f64).exp()).to_string();
    ok(&["ellipse", "--fit", &fit, "--level", &level, "--points", "64", "--output", &out]);
    let rows = csv_rows(&out);
    assert_eq!(rows[0], vec!["x", "y"]);
    assert_eq!(rows.len(), 65);
    for r in &rows[1..] {
        let (x, y): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        assert!((x.hypot(y) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ellipse_needs_two_dimensions() {
    let dir = TempDir::new().unwrap();
    let fit = path(&dir, "id3.json");
    fs::write(&fit, r#"{"location":[0,0,0],"scatter":[1,0,0,0,1,0,0,0,1]}"#).unwrap();
    assert_eq!(robmon(&["ellipse", "--fit", &fit]).status.code(), Some(1));
}

#[test]
fn pca_ratios() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "p.json");
    ok(&["pca", "--data", "geyser", "--k", "2", "--format", "json", "--output", &out]);
    let ratios = floats(&json(&out)["explained_variance_ratio"]);
    assert_eq!(ratios.len(), 2);
    assert!(ratios[0] >= ratios[1]);
    assert!((ratios.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(robmon(&["pca", "--data", "geyser", "--k", "3"]).status.code(), Some(1));
}

#[test]
fn no_header_input() {
    let dir = TempDir::new().unwrap();
    let p = path(&dir, "raw.csv");
    let body: String = (0..30)
        .map(|i| format!("{},{}\n", (i * 7 % 13) as f64, (i * 5 % 11) as f64))
        .collect();
    fs::write(&p, body).unwrap();
    assert!(Path::new(&p).exists());
    let out = path(&dir, "f.json");
    ok(&["fit", "--data", &p, "--no-header", "--starts", "deterministic", "--output", &out]);
    assert_eq!(floats(&json(&out)["distances"]).len(), 30);
}
