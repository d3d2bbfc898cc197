use std::path::PathBuf;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sim")).args(args).output().expect("sim runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scenarios(sub: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../fapi-sim/scenarios").join(sub)
}

#[test]
fn list_names_everything() {
    let o = sim(&["list"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("scenario honest-rw-oautb"));
    assert!(out.contains("attack pkce-chosen-challenge"));
}

#[test]
fn honest_run_passes() {
    let o = sim(&["run", "--scenario", "honest-r-pub-app", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).lines().filter(|l| l.starts_with("PASS ")).count() == 6);
}

#[test]
fn run_from_file_and_json_output() {
    let file = scenarios("legal/honest-rw-oautb.scenario");
    let o = sim(&["--format", "json", "run", "--scenario", file.to_str().unwrap(), "--seed", "2", "--trace"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["scenario"], "honest-rw-oautb");
    assert_eq!(v["verdicts"].as_array().unwrap().len(), 6);
    assert!(v["trace"].as_array().is_some_and(|t| !t.is_empty()));
}

#[test]
fn same_seed_same_output() {
    let a = sim(&["run", "--scenario", "honest-rw-mtls-web", "--seed", "9", "--trace"]);
    let b = sim(&["run", "--scenario", "honest-rw-mtls-web", "--seed", "9", "--trace"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn attack_exit_codes() {
    assert_eq!(code(&sim(&["attack", "--name", "cuckoo", "--fix", "fixAtIss=off"])), 1);
    assert_eq!(code(&sim(&["attack", "--name", "cuckoo"])), 0);
    assert_eq!(code(&sim(&["attack", "--name", "authreq-leak"])), 1);
    assert_eq!(code(&sim(&["attack", "--name", "nope"])), 2);
    assert_eq!(code(&sim(&["attack", "--name", "cuckoo", "--fix", "fixAtIss=maybe"])), 2);
}

#[test]
fn attack_json_reports_reproduction() {
    let o = sim(&["--format", "json", "attack", "--name", "idtoken-replay", "--fix", "fixAtHash=off"]);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["reproduced"], true);
    assert_eq!(v["fixes"]["fixAtHash"], false);
    assert!(v["steps"].as_u64().unwrap() <= 40);
}

#[test]
fn explore_verdicts() {
    let o = sim(&["explore", "--scenario", "attack-pkce-chosen-challenge", "--depth", "12"]);
    assert_eq!(code(&o), 0);
    let o = sim(&["explore", "--scenario", "attack-cuckoo", "--depth", "12", "--node-limit", "10"]);
    assert_eq!(code(&o), 2);
    assert!(stdout(&o).contains("INCONCLUSIVE"));
}

#[test]
fn campaign_over_legal_fixtures() {
    let dir = scenarios("legal");
    let o = sim(&["campaign", "--scenario-dir", dir.to_str().unwrap(), "--seeds", "5"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).starts_with("40 runs over 8 scenarios"));
}

#[test]
fn illegal_scenarios_are_errors() {
    let file = scenarios("illegal/rw-pub-mtls.scenario");
    let o = sim(&["run", "--scenario", file.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("rw-pub-requires-oautb"));
    let dir = scenarios("illegal");
    assert_eq!(code(&sim(&["campaign", "--scenario-dir", dir.to_str().unwrap(), "--seeds", "1"])), 2);
}
