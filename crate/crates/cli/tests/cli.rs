use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use contract_forge_cli::run::{run, Overrides};
use contract_forge_cli::scenario::{parse_scenario, parse_scenario_str};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn fixtures() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    v.sort();
    v
}

fn cli(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_contract-forge"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("CONTRACT_FORGE_OUT")
        .output()
        .unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn fixtures_round_trip() {
    let all = fixtures();
    assert!(all.len() >= 3);
    for path in all {
        let s = parse_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let text = serde_json::to_string_pretty(&s.file).unwrap();
        let again = parse_scenario_str(&text).unwrap();
        assert_eq!(again.file, s.file, "{}", path.display());
        assert_eq!(serde_json::to_string_pretty(&again.file).unwrap(), text);
    }
}

#[test]
fn labor_fixture_solves() {
    let s = parse_scenario(&fixture("labor_single.json")).unwrap();
    let out = run(&s, &Overrides::default()).unwrap();
    assert_eq!(out.exit_code(), 0);
    let r = &out.report.results;
    assert!((r["x"].as_f64().unwrap() - 1.3193).abs() <= 1e-3);
    assert!((r["y"].as_f64().unwrap() - 1.9895).abs() <= 1e-3);
    assert!((r["value"].as_f64().unwrap() - 5.2225).abs() <= 1e-3);
    assert_eq!(out.report.wall_time, None);
}

#[test]
fn agency_fixture_reaches_the_fixed_point() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["--scenario", fixture("agency_beta17_21.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    for x in r["results"]["x"].as_array().unwrap() {
        assert!((x.as_f64().unwrap() - 3.0).abs() <= 1e-3);
    }
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("iteration,x1,x2\n0,0,0\n"));
    assert!(dir.path().join("best_response.csv").exists());
}

#[test]
fn plain_menu_demo_reports_the_deviation() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["--scenario", fixture("plain_menu_demo.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("safe-profitable deviation: PlainMenu"), "{stdout}");
    let r = report(dir.path());
    assert_eq!(r["results"]["state_values_before"], serde_json::json!([2.0, 1.0]));
    assert_eq!(r["results"]["state_values_after"], serde_json::json!([[2.0, 2.0]]));
}

#[test]
fn revisable_tables_match() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["--scenario", fixture("revisable_quadratic.json").to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = std::fs::read(dir.path().join("gamma_alpha.csv")).unwrap();
    let z = std::fs::read(dir.path().join("gamma_zero.csv")).unwrap();
    assert_eq!(a, z);
    assert!(a.starts_with(b"allocation,type,z,probability,regime\n"));
}

#[test]
fn canonical_counts() {
    let s = parse_scenario(&fixture("two_action_menus.json")).unwrap();
    let out = run(&s, &Overrides::default()).unwrap();
    let p = &out.report.results["principals"][0];
    assert_eq!(p["gstar_count"], 3);
    assert_eq!(p["gsharp_count"], 31);
    assert_eq!(p["private_count"], 6);
}

#[test]
fn reports_do_not_depend_on_threads() {
    let root = tempfile::tempdir().unwrap();
    let scenario = fixture("labor_single.json");
    let mut seen = Vec::new();
    for (i, threads) in ["1", "2", "8", "8"].iter().enumerate() {
        let dir = root.path().join(format!("run{i}"));
        let o = cli(&["--scenario", scenario.to_str().unwrap(), "--threads", threads], &dir);
        assert_eq!(o.status.code(), Some(0));
        seen.push(files(&dir));
    }
    assert_eq!(seen[0].len(), 3);
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");

    std::fs::write(&bad, r#"{"schema_version": 1, "command": "plain-menu-demo", "foo": 1}"#).unwrap();
    let o = cli(&["--scenario", bad.to_str().unwrap()], &dir.path().join("o1"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));

    let text = std::fs::read_to_string(fixture("labor_single.json"))
        .unwrap()
        .replace("y*theta - x^2", "x*theta −");
    std::fs::write(&bad, text).unwrap();
    let o = cli(&["--scenario", bad.to_str().unwrap()], &dir.path().join("o2"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at byte 8"));

    let o = cli(&["--scenario", dir.path().join("missing.json").to_str().unwrap()], &dir.path().join("o3"));
    assert_eq!(o.status.code(), Some(2));

    // A command without the environment it needs is an error, not a finding.
    std::fs::write(&bad, r#"{"schema_version": 1, "command": "solve-single"}"#).unwrap();
    let o = cli(&["--scenario", bad.to_str().unwrap()], &dir.path().join("o4"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("solve-single"));

    let o = cli(&["--scenario", fixture("matching_robust.json").to_str().unwrap()], &dir.path().join("o5"));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_contract-forge"))
        .args(["--scenario", fixture("two_action_menus.json").to_str().unwrap()])
        .env("CONTRACT_FORGE_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("report.json").exists());
    assert!(dir.path().join("contracts.csv").exists());
}

#[test]
fn tolerance_flag_enters_the_hash() {
    let s = parse_scenario(&fixture("matching_check.json")).unwrap();
    let a = run(&s, &Overrides::default()).unwrap();
    let b = run(
        &s,
        &Overrides {
            tol: Some(1e-6),
            ..Default::default()
        },
    )
    .unwrap();
    assert_ne!(a.report.config_hash, b.report.config_hash);
    assert_eq!(a.report.results, b.report.results);
}
