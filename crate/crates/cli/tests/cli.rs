use std::path::Path;
use std::process::{Command, Output};

fn llob(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llob"))
        .args(args)
        .env("LLOB_OUT_DIR", out)
        .output()
        .unwrap()
}

fn csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    (header, rows)
}

#[test]
fn impact_writes_trajectory_and_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = llob(&["impact", "--profile", "round-trip", "--set", "solver.n_steps=64"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(&dir.path().join("trajectory.csv"));
    assert_eq!(header, ["t", "y", "x", "m", "Q", "cost"]);
    assert_eq!(rows.len(), 65);
    assert_eq!(rows[0][1], 0.0);
    let resolved = std::fs::read_to_string(dir.path().join("config.resolved")).unwrap();
    assert!(resolved.contains("solver.n_steps = 64"));
    assert!(resolved.contains("profile = round-trip"));
    // numbers carry 16 digits after the point
    let raw = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(raw.lines().nth(1).unwrap().starts_with("0.0000000000000000e0,"));
}

#[test]
fn config_file_sections_and_profile_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "[model]\nsigma = 1\nkappa = 0.5 # mean reversion\n\n[solver]\nn_steps = 40\n").unwrap();
    let prof = dir.path().join("m.csv");
    std::fs::write(&prof, "t,m\n0,1\n0.5,-1\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = llob(
        &["impact", "--variant", "meanrev", "--profile", prof.to_str().unwrap(), "--config", cfg.to_str().unwrap()],
        &out_dir,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = csv(&out_dir.join("trajectory.csv"));
    assert_eq!(rows.len(), 41);
    assert_eq!(rows[0][3], 1.0);
    assert_eq!(rows[40][3], -1.0);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["impact", "--set", "model.sigma=-1"][..],
        &["impact", "--set", "model.nope=1"],
        &["impact", "--variant", "meanrev"],
        &["impact", "--profile", "/no/such/file.csv"],
        &["scenario", "no-such-scenario"],
        &["scenario", "manipulation", "--preset", "nope"],
        &["analytic", "A", "--ratio", "-1"],
        &["book", "--set", "book.dT=0.3"],
    ] {
        let out = llob(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = llob(&["scenario", "no-such-scenario"], dir.path());
    assert!(String::from_utf8_lossy(&out.stderr).contains("sqrt-law"));
}

#[test]
fn numerical_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = llob(&["impact", "--set", "profile.m0=100", "--set", "solver.picard_max_iter=1", "--set", "solver.n_steps=32"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let out = llob(
        &["book", "--profile", "constant", "--set", "profile.m0=5", "--set", "book.M=1", "--set", "book.P=40", "--set", "book.dT=0.01", "--set", "book.margin=0.3"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn book_writes_prices_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = llob(
        &["book", "--profile", "constant", "--set", "profile.m0=0.5", "--set", "book.P=100", "--set", "book.dT=0.01", "--set", "book.stride=25"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = csv(&dir.path().join("price.csv"));
    assert_eq!(header, ["t", "p", "B", "f"]);
    assert_eq!(rows.len(), 101);
    assert!(rows[100][1] > 0.0);
    for step in ["0000", "0025", "0050", "0075", "0100"] {
        let (h, r) = csv(&dir.path().join(format!("book_{step}.csv")));
        assert_eq!(h, ["x", "phi"]);
        assert_eq!(r.len(), 101);
    }
}

#[test]
fn scenario_list_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = llob(&["scenario", "list"], dir.path());
    let ids: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(str::to_string).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert!(ids.contains(&"cross-validation".to_string()));

    let out = llob(&["scenario", "manipulation", "--preset", "equal-nu", "--set", "n_steps=400"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report = dir.path().join("manipulation/equal-nu");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["id"], "manipulation");
    assert_eq!(json["pass"], true);
    assert_eq!(json["params"]["n_steps"], 400.0);
    assert!(report.join("trajectory.csv").exists());
    assert!(std::fs::read_to_string(report.join("settings.resolved")).unwrap().contains("nu_asia = 0.05"));
}

#[test]
fn failing_scenario_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    // twenty steps is far from the stationary profile
    let out = llob(&["scenario", "stationary-book", "--set", "steps=20"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn analytic_values() {
    let dir = tempfile::tempdir().unwrap();
    let get = |args: &[&str]| -> f64 {
        let out = llob(args, dir.path());
        assert!(out.status.success(), "{args:?}");
        String::from_utf8(out.stdout).unwrap().trim().parse().unwrap()
    };
    assert!((get(&["analytic", "A", "--ratio", "1"]) - 0.5580546917042619).abs() < 1e-13);
    assert_eq!(get(&["analytic", "C", "--s", "0.2", "--t", "1", "--kappa", "0"]), 0.8);
    assert!((get(&["analytic", "mispricing", "--kappa", "1", "--t", "1"]) - (1.0 - (-2f64).exp()) / 2.0).abs() < 1e-15);
    assert!(get(&["analytic", "arcsine", "--t", "1", "--m0", "0.001", "--kappa", "1"]) > 0.0);
    assert!(get(&["analytic", "stationary", "--y", "1", "--lambda", "1", "--nu", "0.5"]) < 0.0);
    assert!(get(&["analytic", "cost", "--m0", "1", "--horizon", "1"]) > 0.0);
}
