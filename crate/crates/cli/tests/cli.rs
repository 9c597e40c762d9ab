use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn wsign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsign")).args(args).output().expect("spawn wsign")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small deterministic pseudo-random numbers, enough for test inputs.
fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }
}

fn data_csv(n: usize, scales: &[f64], seed: u64) -> String {
    let mut u = lcg(seed);
    let mut out = (1..=scales.len()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",") + "\n";
    for _ in 0..n {
        let row: Vec<String> = scales
            .iter()
            .map(|s| (s * (u() + u() + u() + u())).to_string())
            .collect();
        out += &(row.join(",") + "\n");
    }
    out
}

fn error_line(o: &Output) -> serde_json::Value {
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "stderr: {err}");
    serde_json::from_str(err.trim()).expect("stderr is one JSON line")
}

#[test]
fn estimate_location_prints_json() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "d.csv", &data_csv(80, &[3.0, 2.0, 1.0], 1));
    let o = wsign(&["estimate-location", "--in", s(&f), "--weight", "pd"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["q_hat"].as_array().unwrap().len(), 3);
    assert!(v["iterations"].as_u64().is_some());
    assert_eq!(v["avar"].as_array().unwrap().len(), 3);
}

#[test]
fn malformed_csv_is_located() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "bad.csv", "a,b\n1,2\n3,oops\n");
    let o = wsign(&["estimate-location", "--in", s(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    let e = error_line(&o);
    let msg = e["message"].as_str().unwrap();
    assert!(msg.contains("line 3, column 2"), "{msg}");

    let ragged = write(&dir, "ragged.csv", "a,b\n1,2\n3\n");
    let o = wsign(&["estimate-scatter", "--in", s(&ragged), "--estimator", "cov"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_line(&o)["message"].as_str().unwrap().contains("ragged"));
}

#[test]
fn numerical_failure_exits_two() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "d.csv", &data_csv(60, &[3.0, 1.0], 2));
    let o = wsign(&["estimate-location", "--in", s(&f), "--max-iter", "1", "--tol", "1e-15"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "numerical");
}

#[test]
fn usage_errors_exit_one() {
    let o = wsign(&["estimate-scatter", "--in", "x.csv", "--estimator", "nope"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(error_line(&o)["error"], "usage");
    let o = wsign(&["--threads", "0", "estimate-location", "--in", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn scatter_matrix_layout() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "d.csv", &data_csv(100, &[3.0, 2.0, 1.0], 3));
    for est in ["wscm", "adcm", "plugin", "scm", "tyler", "cov"] {
        let out = dir.path().join(format!("{est}.csv"));
        let o = wsign(&["estimate-scatter", "--in", s(&f), "--estimator", est, "--weight", "hsd", "--out", s(&out)]);
        assert!(o.status.success(), "{est}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
        let text = std::fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,0,1,2");
        assert_eq!(lines.len(), 4);
        let m: Vec<Vec<f64>> = lines[1..]
            .iter()
            .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
            .collect();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m[i][j], m[j][i], "{est} not symmetric");
            }
        }
    }
    let o = wsign(&["estimate-scatter", "--in", s(&f), "--estimator", "adcm", "--weight", "unit"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn floats_round_trip() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "d.csv", &data_csv(50, &[2.0, 1.0], 4));
    let o = wsign(&["eigenvalues", "--in", s(&f), "--seed", "9"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("index,eigenvalue,v_x1,v_x2\n"));
    for cell in text.lines().skip(1).flat_map(|l| l.split(',').skip(1)) {
        let v: f64 = cell.parse().unwrap();
        assert_eq!(format!("{v:.16e}"), cell);
    }
}

const MODEL: &str = r#"{"family": "student_t", "dof": 5, "mu": [0, 0, 0], "sigma": [[3, 0, 0], [0, 2, 0], [0, 0, 1]]}"#;

#[test]
fn simulate_fse_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "exp.json",
        &format!(r#"{{"model": {MODEL}, "n_list": [30, 60], "reps": 100, "estimators": ["scm", "wscm-pd", "adcm-pd"]}}"#),
    );
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = wsign(&["simulate-fse", "--config", s(&cfg), "--seed", "5", "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,scm,wscm-pd,adcm-pd,scm_se,wscm-pd_se,adcm-pd_se,kept");
    assert!(lines[1].starts_with("30,") && lines[2].starts_with("60,"));
}

#[test]
fn config_unknown_keys_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "exp.json",
        &format!(r#"{{"model": {MODEL}, "n_list": [30], "reps": 100, "estimators": ["scm"], "colour": 1}}"#),
    );
    let out = dir.path().join("never.csv");
    let o = wsign(&["simulate-fse", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(error_line(&o)["message"].as_str().unwrap().contains("colour"));
    assert!(!out.exists());
}

#[test]
fn influence_grid_long_format() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "grid.json",
        r#"{"model": {"family": "normal", "mu": [0, 0], "sigma": [[2, 0], [0, 1]]},
            "estimators": ["cov", "tyler", "wscm-pd"],
            "grid": {"type": "cartesian", "lo": -2, "hi": 2, "steps": 3},
            "mc": 20000}"#,
    );
    let o = wsign(&["influence-grid", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "estimator,x0_1,x0_2,if_norm");
    assert_eq!(lines.len(), 1 + 3 * 9);
    assert!(lines[1].starts_with("cov,"));
}

#[test]
fn are_table_shape() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "are.json",
        r#"{"estimator": "adcm", "families": [{"family": "student_t", "dof": 5}, {"family": "normal"}],
            "dims": [2, 3], "weights": ["PD", "HSD"], "mc": 20000}"#,
    );
    let o = wsign(&["are", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "distribution,PD_p2,PD_p3,HSD_p2,HSD_p3,PD_p2_se,PD_p3_se,HSD_p2_se,HSD_p3_se"
    );
    assert!(lines[1].starts_with("t5,") && lines[2].starts_with("MVN,"));
}

#[test]
fn sdr_fit_then_predict() {
    let dir = TempDir::new().unwrap();
    let mut u = lcg(6);
    let mut text = "a,b,c,y\n".to_string();
    for _ in 0..120 {
        let y = 2.0 * (u() + u() + u());
        let m = y + y * y + y * y * y;
        text += &format!("{},{},{},{y}\n", m + 2.0 * u(), m + 2.0 * u(), m + 2.0 * u());
    }
    let train = write(&dir, "train.csv", &text);
    let model = dir.path().join("model.json");
    for method in ["robust", "classical"] {
        let o = wsign(&["sdr", "fit", "--train", s(&train), "--method", method, "--out", s(&model)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let test = write(&dir, "test.csv", "c,b,a\n1,1,1\n-2,-2,-2\n");
        let o = wsign(&["sdr", "predict", "--model", s(&model), "--test", s(&test)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let out = String::from_utf8(o.stdout).unwrap();
        let preds: Vec<f64> = out.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        assert_eq!(preds.len(), 2);
        assert!(preds[0] > preds[1], "{method}: {preds:?}");
    }
    let test = write(&dir, "missing.csv", "a,b\n1,1\n");
    let o = wsign(&["sdr", "predict", "--model", s(&model), "--test", s(&test)]);
    assert_eq!(o.status.code(), Some(1));
}

fn curves_csv(design: &[f64], seed: u64) -> String {
    let m = design.len();
    let mut u = lcg(seed);
    let mut out = design.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",") + "\n";
    let pi = std::f64::consts::PI;
    for i in 0..30 {
        let c = 2.0 * (u() + u() + u());
        let row: Vec<String> = (0..m)
            .map(|l| {
                let t = l as f64 / (m - 1) as f64;
                let base = (pi * t).sin() + c * (2.0 * pi * t).sin() + 0.05 * u();
                (if i == 29 { 8.0 * (pi * t).sin() } else { base }).to_string()
            })
            .collect();
        out += &(row.join(",") + "\n");
    }
    out
}

#[test]
fn fpca_outliers_rescales_design() {
    let dir = TempDir::new().unwrap();
    let unit: Vec<f64> = (0..60).map(|l| l as f64 / 59.0).collect();
    let months: Vec<f64> = unit.iter().map(|t| 1.0 + 11.0 * t).collect();
    let mut flags = Vec::new();
    for (name, design) in [("unit", &unit), ("months", &months)] {
        let f = write(&dir, &format!("{name}.csv"), &curves_csv(design, 7));
        let report = dir.path().join(format!("{name}_report.csv"));
        let o = wsign(&["fpca-outliers", "--curves", s(&f), "--q", "1", "--weight", "pd", "--p-basis", "10", "--report", s(&report)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(&report).unwrap();
        assert!(text.starts_with("curve,od,sd,od_cutoff,sd_cutoff,od_flag,sd_flag,outlier\n"));
        let f: Vec<String> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect();
        assert_eq!(f.len(), 30);
        assert_eq!(f[29], "1");
        flags.push(f);
    }
    assert_eq!(flags[0], flags[1]);
}

#[test]
fn simulate_sdr_rows() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("fig3.csv");
    let o = wsign(&["simulate-sdr", "--p", "5", "--n", "60", "--reps", "2", "--seed", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "setting,p,robust_mse,classical_mse,robust_se,classical_se,kept,failures");
    assert!(lines[1].starts_with("clean,5,") && lines[2].starts_with("contaminated,5,"));
}
