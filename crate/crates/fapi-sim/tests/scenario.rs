use fapi_sim::runtime::{Fixes, Leaks, ProcKind};
use fapi_sim::scenario::{bundled_text, LoadError, Scenario, BUNDLED, LEGAL_FIXTURES};
use std::path::PathBuf;

fn scenario_dir(sub: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(sub)
}

fn files(sub: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(scenario_dir(sub))
        .expect("scenario directory")
        .map(|e| e.expect("dir entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "scenario"))
        .collect();
    out.sort();
    out
}

#[test]
fn every_bundled_scenario_loads() {
    for (name, _) in BUNDLED {
        let sc = Scenario::bundled(name).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(sc.name(), *name);
    }
    assert_eq!(LEGAL_FIXTURES.len(), 8);
    assert_eq!(files("legal").len(), 8);
}

#[test]
fn oautb_fixture_shape() {
    let sc = Scenario::bundled("honest-rw-oautb").unwrap();
    let count = |k: ProcKind| sc.world.procs.iter().filter(|p| p.kind == k).count();
    assert_eq!(
        [count(ProcKind::Browser), count(ProcKind::Client), count(ProcKind::As), count(ProcKind::Rs)],
        [1, 1, 1, 1]
    );
    assert!(sc.world.registrations.values().all(|r| r.oautb_web()));
    assert_eq!(sc.world.fixes, Fixes::default());
    assert_eq!(sc.world.leaks, Leaks::default());
}

#[test]
fn legal_fixtures_cover_the_matrix() {
    let mut paths: Vec<(String, String, bool)> = LEGAL_FIXTURES
        .iter()
        .flat_map(|f| {
            let sc = Scenario::bundled(f).unwrap();
            sc.world
                .registrations
                .values()
                .map(|r| (r.profile.as_str().to_string(), r.client_type.as_str().to_string(), r.is_app))
                .collect::<Vec<_>>()
        })
        .collect();
    paths.sort();
    paths.dedup();
    assert_eq!(paths.len(), 8, "{paths:?}");
}

#[test]
fn illegal_fixtures_name_their_rule() {
    let illegal = files("illegal");
    assert!(illegal.len() >= 8);
    for p in illegal {
        let text = std::fs::read_to_string(&p).unwrap();
        let desc: serde_json::Value = serde_json::from_str(&text).unwrap();
        let want = desc["description"]
            .as_str()
            .and_then(|d| d.split("rule ").nth(1))
            .map(|r| r.trim_end_matches('.'))
            .unwrap_or_else(|| panic!("{}: description names no rule", p.display()));
        match Scenario::load(&p) {
            Err(LoadError::Illegal { rule, .. }) => assert_eq!(rule, want, "{}", p.display()),
            other => panic!("{}: expected rule {want}, got {:?}", p.display(), other.map(|s| s.name().to_string())),
        }
    }
}

#[test]
fn schema_and_syntax_errors() {
    let text = bundled_text("honest-r-pub-app").unwrap();
    let wrong = text.replace("fapi-sim/scenario@1", "fapi-sim/scenario@0");
    assert!(matches!(Scenario::from_json(&wrong), Err(LoadError::Schema(_))));
    let extra = text.replacen("\"name\"", "\"surprise\": 1, \"name\"", 1);
    assert!(matches!(Scenario::from_json(&extra), Err(LoadError::Parse(_))));
    assert!(matches!(Scenario::bundled("no-such-fixture"), Err(LoadError::UnknownBundled(_))));
    assert!(matches!(Scenario::load(&scenario_dir("missing.scenario")), Err(LoadError::Io { .. })));
}

#[test]
fn fix_toggles_parse() {
    let text = bundled_text("honest-rw-mtls-web").unwrap();
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    v["fixes"] = serde_json::json!({ "fixAtIss": false });
    let sc = Scenario::from_json(&v.to_string()).unwrap();
    assert!(!sc.world.fixes.at_iss);
    assert!(sc.world.fixes.at_hash && sc.world.fixes.signed_request_jws);
}
