use std::path::PathBuf;
use std::process::{Command, Output};

use twohol::cli::{parse_records, Status};

fn twohol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twohol")).args(args).output().expect("binary runs")
}

fn config_file(name: &str, text: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("twohol-{}-{name}.toml", std::process::id()));
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn passing_scenario_exits_zero() {
    let out = twohol(&["trivial"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# twohol trivial  seed=7  steps=8"), "{text}");
    assert!(text.lines().last().unwrap().starts_with("passed "));
}

#[test]
fn coarse_annulus_fails_with_exit_one() {
    let out = twohol(&["inner-annulus", "--steps", "8", "--format", "records"]);
    assert_eq!(out.status.code(), Some(1));
    let (_, records) = parse_records(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(records.iter().any(|r| r.status == Status::Fail));
}

#[test]
fn configuration_errors_exit_two() {
    assert_eq!(twohol(&["trivial", "--steps", "0"]).status.code(), Some(2));
    assert_eq!(twohol(&["trivial", "--no-such-flag"]).status.code(), Some(2));
    let bad = config_file("bad", "scenario = \"trivial\"\nstepz = 4\n");
    let out = twohol(&["--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("stepz"));
    std::fs::remove_file(bad).ok();
}

#[test]
fn config_file_selects_scenario_and_flags_override_it() {
    let path = config_file("ok", "scenario = \"trivial\"\nseed = 5\nsteps = 4\nformat = \"records\"\n");
    let out = twohol(&["--config", path.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(out.status.code(), Some(0));
    let (header, records) = parse_records(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!((header.scenario.as_str(), header.seed, header.steps), ("trivial", 9, 4));
    assert!(records.iter().all(|r| r.status == Status::Pass && r.millis.is_none()));
    std::fs::remove_file(path).ok();
}

#[test]
fn timing_fills_millis() {
    let out = twohol(&["trivial", "--format", "records", "--timing"]);
    let (_, records) = parse_records(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert!(records.iter().any(|r| r.millis.is_some()));
}

#[test]
fn list_names_scenarios() {
    let out = twohol(&["list"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["trivial", "abelian-stokes", "inner-annulus", "sphere-gerbe", "reparam-shear", "refinement-sweep", "verify", "sweep"] {
        assert!(text.contains(name), "{name} missing from {text}");
    }
}
