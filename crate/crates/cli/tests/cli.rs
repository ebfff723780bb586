use std::path::Path;
use std::process::{Command, Output};

use gradhjb::operator::GridFunction;
use tempfile::TempDir;

const MINIMAL: &str = r#"{
    "version": 1,
    "problem": {"domain": [[-1, 1]], "a": 1, "c": 1, "f": 1},
    "constraint": {"kind": "norm", "r": 1},
    "shape": [199],
    "schedule": {"eps_list": [0.5, 0.1, 0.01, 0.001]}
}"#;

fn run(cmd: &str, config: &str, dir: &TempDir) -> Output {
    let path = dir.path().join("config.json");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_gradhjb"))
        .args([cmd, "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .arg("--quiet")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_minimal_config() {
    let dir = TempDir::new().unwrap();
    let o = run("solve", MINIMAL, &dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in ["solution.csv", "report.json", "free_boundary.csv", "mask.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let text = std::fs::read_to_string(out.join("solution.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x1,value"));
    assert_eq!(text.lines().count(), 1 + 201);
    let u = GridFunction::read_csv(text.as_bytes()).unwrap();
    let mut again = Vec::new();
    u.write_csv(&mut again).unwrap();
    assert_eq!(String::from_utf8(again).unwrap(), text);
    let exact = 1.0 - 1.0 / 1f64.cosh();
    assert!((u.interpolate_1d(0.0) - exact).abs() < 1e-3);
    let report = json(&out.join("report.json"));
    assert_eq!(report["eps_final"], 1e-3);
}

#[test]
fn solve_2d_writes_three_columns() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{
        "version": 1,
        "problem": {"domain": [[-1, 1], [-1, 1]], "a": [1, 1], "c": 1, "f": 3},
        "constraint": {"kind": "quadratic", "M": [[1, 0], [0, 1]], "r2": 1},
        "shape": [15, 15],
        "schedule": {"eps_list": [0.5, 0.1]}
    }"#;
    let o = run("solve", cfg, &dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/solution.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("x1,x2,value"));
    assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 3);
}

#[test]
fn degenerate_diffusion_exits_1() {
    let dir = TempDir::new().unwrap();
    let o = run("solve", &MINIMAL.replace("\"a\": 1", "\"a\": \"x1\""), &dir);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ellipticity violated"), "{}", stderr(&o));
}

#[test]
fn unreachable_tolerance_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = MINIMAL.replace(
        "\"eps_list\": [0.5, 0.1, 0.01, 0.001]",
        "\"eps_list\": [0.1], \"newton\": {\"abs_tol\": 0, \"max_iter\": 8}",
    );
    let o = run("solve", &cfg, &dir);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn empty_config_exits_1() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run("verify", "{}", &dir).status.code(), Some(1));
    assert_eq!(run("solve", "", &dir).status.code(), Some(1));
}

#[test]
fn verify_default_suite_passes() {
    let dir = TempDir::new().unwrap();
    let o = run("verify", MINIMAL, &dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&dir.path().join("out/verify.json"));
    assert_eq!(v["passed"], true);
    let names: Vec<&str> = v["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    for n in ["penalty_convex_eps_0.01", "envelope_upper_second_difference", "sandwich", "complementarity"] {
        assert!(names.contains(&n), "{n} missing from {names:?}");
    }
    assert!(names.iter().any(|n| n.starts_with("comparison")));
}

#[test]
fn injected_concave_penalty_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = MINIMAL.replace(
        "\"shape\"",
        "\"verify\": {\"inject_fault\": \"concave_penalty\", \"sandwich\": false, \"comparison\": false, \"complementarity\": false, \"envelope\": false}, \"shape\"",
    );
    let o = run("verify", &cfg, &dir);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let v = json(&dir.path().join("out/verify.json"));
    assert_eq!(v["passed"], false);
    let failed: Vec<&str> = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert!(failed.iter().any(|n| n.starts_with("penalty_convex")), "{failed:?}");
}

#[test]
fn quadratic_envelope_checks_in_2d() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{
        "version": 1,
        "problem": {"domain": [[-1, 1], [-1, 1]], "a": [1, 1], "c": 1, "f": 1},
        "constraint": {"kind": "quadratic", "M": [[2, 0.5], [0.5, 1]], "r2": 1},
        "shape": [9, 9],
        "verify": {"penalty": false, "sandwich": false, "comparison": false, "complementarity": false, "envelope_samples": 50}
    }"#;
    let o = run("verify", cfg, &dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&dir.path().join("out/verify.json"));
    assert_eq!(v["checks"].as_array().unwrap().len(), 4);
}

#[test]
fn study_writes_rate_table() {
    let dir = TempDir::new().unwrap();
    let cfg = MINIMAL.replace(
        "\"shape\"",
        r#""study": {"shapes": [[19], [39], [79]], "eps_levels": [0.1, 0.01, 0.001], "exact": "1 - (exp(x1) + exp(-x1)) / (exp(1) + exp(-1))"}, "shape""#,
    );
    let o = run("study", &cfg, &dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("out/rates.csv")).unwrap();
    let fit = text.lines().find(|l| l.starts_with("fit_h")).expect("fitted h row");
    let slope: f64 = fit.split(',').nth(3).unwrap().parse().unwrap();
    assert!((1.8..=2.2).contains(&slope), "{text}");
}

#[test]
fn simulate_inactive_benchmark() {
    let dir = TempDir::new().unwrap();
    let cfg = MINIMAL.replace(
        "\"shape\"",
        r#""mc": {"body": {"kind": "interval", "lo": -1, "hi": 1}, "x0": [0], "n_paths": 4000, "dt": 1e-3, "seed": 3}, "shape""#,
    );
    let o = run("simulate", &cfg, &dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(&dir.path().join("out/mc.json"));
    let e = &v["estimates"][0];
    let (mean, se) = (e["mean"].as_f64().unwrap(), e["std_error"].as_f64().unwrap());
    assert!((mean - 0.3518).abs() <= 3.0 * se + 0.03, "{v}");
    assert_eq!(e["n_paths"], 4000);
    assert_eq!(e["seed"], 3);
    assert_eq!(v["region"]["lo"], -1.0);
}

#[test]
fn simulate_without_free_boundary_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = MINIMAL.replace("\"constraint\": {\"kind\": \"norm\", \"r\": 1},", "").replace(
        "\"shape\"",
        r#""mc": {"body": {"kind": "interval", "lo": -1, "hi": 1}, "x0": [0], "n_paths": 100, "dt": 1e-3}, "shape""#,
    );
    let o = run("simulate", &cfg, &dir);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("free boundary required"), "{}", stderr(&o));
}

#[test]
fn shipped_configs_solve() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        let dir = TempDir::new().unwrap();
        let o = Command::new(env!("CARGO_BIN_EXE_gradhjb"))
            .args(["solve", "--quiet", "--config"])
            .arg(&path)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}: {}", path.display(), stderr(&o));
        n += 1;
    }
    assert!(n >= 4);
}
