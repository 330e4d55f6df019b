use std::path::Path;
use std::process::{Command, Output};

fn greenw2(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greenw2"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GREENW2_REPLICAS")
        .env_remove("GREENW2_N_GRID")
        .output()
        .unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| greenw2(args, dir.path()).status.code();
    assert_eq!(code(&["green-check", "--surface", "unknown"]), Some(2));
    assert_eq!(code(&["w2-scan", "--solver", "simplex"]), Some(2));
    assert_eq!(
        code(&["w2-scan", "--n-grid", "8,4", "--replicas", "2"]),
        Some(2)
    );
    assert_eq!(code(&["energy-moments", "--replicas", "10"]), Some(2));
    assert_eq!(code(&["bogus"]), Some(2));
    let missing = dir.path().join("absent");
    let out = greenw2(&["w2-scan", "--n-grid", "2", "--replicas", "2"], &missing);
    assert_eq!(out.status.code(), Some(2));
    assert!(!missing.exists());
}

#[test]
fn energy_moments_table() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "energy-moments",
        "--surface",
        "sphere",
        "--n-grid",
        "2,5",
        "--replicas",
        "200",
        "--seed",
        "4",
    ];
    let out = greenw2(&args, dir.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let path = dir.path().join("energy_moments.csv");
    let (header, rows) = read_csv(&path);
    assert_eq!(
        header,
        [
            "n",
            "replicas",
            "mean_s_n",
            "se_s_n",
            "mean_s_n_sq",
            "se_s_n_sq",
            "predicted_s_n_sq",
            "ratio",
            "ratio_ci_low",
            "ratio_ci_high"
        ]
    );
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "2");
    let predicted: f64 = rows[0][6].parse().unwrap();
    assert!((predicted - 4.0).abs() < 1e-9, "{predicted}");
    assert!(dir.path().join("energy_moments.json").exists());

    let first = std::fs::read(&path).unwrap();
    let again = tempfile::tempdir().unwrap();
    assert_eq!(greenw2(&args, again.path()).status.code(), Some(0));
    assert_eq!(
        std::fs::read(again.path().join("energy_moments.csv")).unwrap(),
        first
    );
}

#[test]
fn scan_outputs_and_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_greenw2"))
        .args([
            "w2-scan",
            "--grid-res",
            "16",
            "--n-grid",
            "2,4,8,16",
            "--out",
        ])
        .arg(dir.path())
        .env("GREENW2_REPLICAS", "3")
        .env("GREENW2_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&dir.path().join("w2_scan.csv"));
    assert_eq!(
        header,
        [
            "n",
            "replicas",
            "mean_w2",
            "ci_low",
            "ci_high",
            "bias_bound"
        ]
    );
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1] == "3"));
    let (_, replicas) = read_csv(&dir.path().join("w2_scan_replicas.csv"));
    assert_eq!(replicas.len(), 12);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("w2_scan.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["replicas"], 3);
    assert_eq!(manifest["partial"], false);
    assert!(manifest["version"].is_string());
    assert!(manifest["fit"].is_object());

    // every value is written in shortest round-trip form
    for r in &rows {
        for v in &r[2..] {
            let x: f64 = v.parse().unwrap();
            assert_eq!(format!("{x}"), *v);
        }
    }
}

#[test]
fn falsify_adds_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = greenw2(
        &[
            "falsify",
            "--surface",
            "sphere",
            "--grid-res",
            "256",
            "--n-grid",
            "2,4,8,16",
            "--replicas",
            "4",
        ],
        dir.path(),
    );
    // tiny grids need not show growth, so both verdicts are acceptable here
    assert!(
        matches!(out.status.code(), Some(0 | 1)),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&dir.path().join("falsify.csv"));
    assert_eq!(
        header,
        [
            "n",
            "replicas",
            "mean_w2",
            "ci_low",
            "ci_high",
            "bias_bound",
            "mean_abs_s_n",
            "l_n",
            "l_n_ci_low",
            "l_n_ci_high"
        ]
    );
    assert_eq!(rows.len(), 4);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("falsify.json")).unwrap())
            .unwrap();
    assert!(manifest["falsifier"].is_object());
}

#[test]
fn green_check_detects_a_shifted_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let out = greenw2(
        &[
            "green-check",
            "--surface",
            "sphere",
            "--grid-res",
            "20000",
            "--kernel-offset",
            "0.1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean_zero"));
    let (header, rows) = read_csv(&dir.path().join("green_check.csv"));
    assert_eq!(header, ["check", "measured", "threshold", "passed"]);
    assert!(rows
        .iter()
        .any(|r| r[0].starts_with("mean_zero") && r[3] == "false"));
}
