use fapi_sim::monitors::{check_trace, Monitor, Property};
use fapi_sim::runtime::explore::ExploreOutcome;
use fapi_sim::runtime::{Action, Fact};
use fapi_sim::scenario::{
    attack_scenario, identity, run_attack, AttackError, Scenario, ATTACKS, CORE_PROPERTIES, SI_PROPERTIES,
};
use fapi_sim::terms::{KnowledgeBase, Term};

fn off(fix: &str) -> Vec<(String, bool)> {
    vec![(fix.to_string(), false)]
}

#[test]
fn cuckoo_leaks_a_resource_without_the_iss_fix() {
    let r = run_attack("cuckoo", &off("fixAtIss")).unwrap();
    assert!(r.reproduced);
    let w = r.run.verdicts.iter().find(|v| v.property == Property::Authorization).unwrap().witness.clone().unwrap();
    let label = w.term.unwrap().nonce_label().unwrap().to_string();
    assert!(label.starts_with("wNonce") || label.starts_with("rNonce"), "{label}");
    assert!(r.run.steps <= 40);
}

#[test]
fn idtoken_replay_without_at_hash() {
    let r = run_attack("idtoken-replay", &off("fixAtHash")).unwrap();
    assert!(r.reproduced && !r.run.holds(Property::Authorization));
    assert!(r.run.steps <= 40);
}

#[test]
fn idtoken_replay_stalls_at_the_client_with_the_fix() {
    let r = run_attack("idtoken-replay", &[]).unwrap();
    assert!(!r.reproduced);
    assert!(r.run.trace.steps.iter().any(|s| s.actor == "c1" && s.stopped), "client never rejected the replayed token");
}

#[test]
fn pkce_chosen_challenge_without_signed_requests() {
    let r = run_attack("pkce-chosen-challenge", &off("fixSignedRequestJws")).unwrap();
    assert!(r.reproduced && !r.run.holds(Property::Authorization));
    assert!(run_attack("pkce-chosen-challenge", &[]).unwrap().run.holds(Property::Authorization));
}

#[test]
fn authreq_leak_breaks_session_integrity_without_oautb() {
    let r = run_attack("authreq-leak", &[]).unwrap();
    assert!(r.reproduced);
    assert!(r.run.holds(Property::Authorization) && r.run.holds(Property::Authentication));
    let sc = Scenario::bundled("attack-authreq-leak-oautb").unwrap();
    let run = sc.run_guided(sc.file.scheduler.max_steps).unwrap();
    assert!(SI_PROPERTIES.iter().all(|p| run.holds(*p)));
    assert!(run.trace.steps.iter().any(|s| matches!(s.action, Action::Attack(_))), "recipe never ran");
}

#[test]
fn fixed_attacks_are_blocked() {
    for a in &ATTACKS {
        let r = run_attack(a.name, &[]).unwrap();
        for p in CORE_PROPERTIES {
            assert!(r.run.holds(p), "{} breaks {p} with all fixes", a.name);
        }
    }
}

#[test]
fn bad_attack_requests() {
    assert!(matches!(run_attack("nope", &[]), Err(AttackError::Unknown(_))));
    assert!(matches!(run_attack("cuckoo", &off("fixEverything")), Err(AttackError::UnknownFix(_))));
}

#[test]
fn witnesses_are_minimal_and_replay() {
    for a in ATTACKS.iter() {
        let fixes = a.fix.map(off).unwrap_or_default();
        let sc = attack_scenario(a.name, &fixes).unwrap();
        let run = sc.run_guided(40).unwrap();
        let flags = sc.honest_flags();
        for v in &run.verdicts {
            let Some(w) = &v.witness else { continue };
            let mut prefix = run.trace.clone();
            prefix.steps.truncate(w.step + 1);
            let again = check_trace(&sc.world, &prefix, &flags);
            assert_eq!(again.iter().find(|x| x.property == v.property).unwrap().witness.as_ref(), Some(w));
            prefix.steps.truncate(w.step);
            let before = check_trace(&sc.world, &prefix, &flags);
            assert!(before.iter().find(|x| x.property == v.property).unwrap().holds, "{} not minimal", a.name);
        }
    }
}

#[test]
fn monitors_are_pure() {
    let sc = attack_scenario("cuckoo", &off("fixAtIss")).unwrap();
    let run = sc.run_guided(40).unwrap();
    let a = check_trace(&sc.world, &run.trace, &sc.honest_flags());
    let b = check_trace(&sc.world, &run.trace, &sc.honest_flags());
    assert_eq!(a, b);
    let mut empty = run.trace.clone();
    empty.steps.clear();
    assert!(check_trace(&sc.world, &empty, &sc.honest_flags()).iter().all(|v| v.holds));
}

#[test]
fn dishonest_resource_servers_are_exempt() {
    let sc = Scenario::bundled("honest-rw-mtls-web").unwrap();
    let w = &sc.world;
    let (asp, rsp) = (w.proc_named("as1").unwrap(), w.proc_named("rs1").unwrap());
    let alice = identity("alice", "as.example");
    let token = Term::nonce(900, "access_token");
    let resource = Term::nonce(901, "wNonce");
    let facts = vec![
        Fact::TokenIssued { auth_server: asp, token: token.clone(), client_id: Term::atom("c1"), identity: alice.clone() },
        Fact::ResourceIssued { rs: rsp, resource: resource.clone(), identity: alice, token },
    ];
    let kb = KnowledgeBase::from_terms([resource]);
    let honest = sc.honest_flags();
    let found = Monitor::new().step(w, &honest, &facts, &kb, 0);
    assert!(found.iter().any(|v| v.property == Property::Authorization));
    let mut flags = honest.clone();
    flags[rsp] = false;
    assert!(Monitor::new().step(w, &flags, &facts, &kb, 0).is_empty());
}

#[test]
fn exploration_discovers_pkce_attack() {
    let sc = attack_scenario("pkce-chosen-challenge", &off("fixSignedRequestJws")).unwrap();
    let rep = sc.explore(12, 1_000_000, &[Property::Authorization]).unwrap();
    let ExploreOutcome::Violation { violation, path } = rep.outcome else { panic!("no violation found") };
    assert_eq!(violation.property, Property::Authorization);
    assert!(path.len() <= 12);
    let replayed = sc.witness_trace(&path).unwrap();
    assert!(!replayed.holds(Property::Authorization));
}

#[test]
fn exploration_reports_node_limit() {
    let sc = Scenario::bundled("attack-cuckoo").unwrap();
    let rep = sc.explore(12, 50, &CORE_PROPERTIES).unwrap();
    assert!(matches!(rep.outcome, ExploreOutcome::NodeLimit));
    assert_eq!(rep.nodes, 50);
}

#[test]
fn exploration_of_fixed_scenario_is_clean() {
    let sc = Scenario::bundled("attack-pkce-chosen-challenge").unwrap();
    let rep = sc.explore(12, 1_000_000, &Property::ALL).unwrap();
    assert!(matches!(rep.outcome, ExploreOutcome::Complete));
    assert!(rep.distinct > 1);
}
