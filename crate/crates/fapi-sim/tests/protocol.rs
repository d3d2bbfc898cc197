//! Protocol invariants of the honest roles, checked over seeded runs.

use fapi_sim::browser::add_cookie;
use fapi_sim::https::Url;
use fapi_sim::runtime::{empty_trace, run_seeded, Config, Fact, Mode, Proc, ProcKind, RunOptions, Trace};
use fapi_sim::scenario::{with_passive_attacker, Scenario, BUNDLED, LEGAL_FIXTURES};
use fapi_sim::terms::{Fun, Term, View};
use std::collections::HashSet;

const SEEDS: u64 = 60;

fn runs(sc: &Scenario, seeds: u64) -> Vec<(Trace, Config)> {
    (0..seeds)
        .map(|seed| {
            let trace = empty_trace(sc.name(), Mode::Seeded, Some(seed), &sc.initial_knowledge, Vec::new());
            let opts = RunOptions { max_steps: 80, track_digests: false };
            let out = run_seeded(&sc.world, &sc.init_for(Mode::Seeded), trace, seed, &opts).expect("run");
            (out.trace, out.last)
        })
        .collect()
}

fn all_scenarios() -> Vec<Scenario> {
    BUNDLED.iter().map(|(n, _)| Scenario::bundled(n).unwrap()).collect()
}

#[test]
fn secure_cookies_need_https() {
    let c = Term::pair(
        Term::pair(Term::atom("__Secure"), Term::atom("sid")),
        Term::seq(vec![Term::atom("v"), Term::top(), Term::top(), Term::top()]),
    );
    assert!(add_cookie(&[], &c, &Term::atom("P")).is_empty());
    assert_eq!(add_cookie(&[], &c, &Term::atom("S")).len(), 1);
    let newer = Term::pair(c.proj(1), Term::seq(vec![Term::atom("w"), Term::top(), Term::top(), Term::top()]));
    let jar = add_cookie(&add_cookie(&[], &c, &Term::atom("S")), &newer, &Term::atom("S"));
    assert_eq!(jar, vec![newer]);
}

#[test]
fn signing_and_binding_keys_stay_secret() {
    for sc in all_scenarios() {
        for (_, last) in runs(&sc, SEEDS) {
            for (p, proc) in last.procs.iter().enumerate() {
                if !last.honest(p) {
                    continue;
                }
                match &**proc {
                    Proc::Client(c) => {
                        assert!(!last.attacker.kb.derivable(&c.auth_req_sig_key), "{}", sc.name());
                        for (_, k) in &c.token_bindings {
                            assert!(!last.attacker.kb.derivable(k), "{}", sc.name());
                        }
                    }
                    Proc::Browser(b) => {
                        for (_, k) in &b.token_bindings {
                            assert!(!last.attacker.kb.derivable(k), "{}: browser binding key leaked", sc.name());
                        }
                        let keys: HashSet<&Term> = b.token_bindings.iter().map(|(_, k)| k).collect();
                        assert_eq!(keys.len(), b.token_bindings.len(), "binding keys shared across origins");
                    }
                    _ => {}
                }
            }
        }
    }
}

#[test]
fn auth_request_key_is_never_sent() {
    for sc in all_scenarios() {
        let keys: Vec<Term> = sc
            .init
            .procs
            .iter()
            .filter_map(|p| match &**p {
                Proc::Client(c) => Some(c.auth_req_sig_key.clone()),
                _ => None,
            })
            .collect();
        for (trace, _) in runs(&sc, 20) {
            for e in trace.steps.iter().flat_map(|s| &s.emitted) {
                assert!(!exposes(&e.msg, &keys), "{}: signing key inside {}", sc.name(), e.msg.render());
            }
        }
    }
}

/// Whether one of `keys` occurs in `t` other than as a signing key.
fn exposes(t: &Term, keys: &[Term]) -> bool {
    if keys.contains(t) {
        return true;
    }
    match t.view() {
        View::App(Fun::Sig, [x, _]) => exposes(x, keys),
        View::Seq(xs) | View::App(_, xs) => xs.iter().any(|x| exposes(x, keys)),
        _ => false,
    }
}

#[test]
fn passive_attacker_learns_no_passwords() {
    for f in LEGAL_FIXTURES {
        let sc = with_passive_attacker(f).unwrap();
        let passwords: Vec<Term> = sc
            .init
            .procs
            .iter()
            .flat_map(|p| match &**p {
                Proc::Browser(b) => b.secrets.iter().map(|(_, pw)| pw.clone()).collect(),
                _ => Vec::new(),
            })
            .collect();
        assert!(!passwords.is_empty());
        for (trace, last) in runs(&sc, SEEDS) {
            assert!(trace.steps.iter().all(|s| !matches!(s.action, fapi_sim::runtime::Action::Attack(_))));
            for pw in &passwords {
                assert!(!last.attacker.kb.derivable(pw), "{f}");
            }
        }
    }
}

/// Expected challenge shape per (profile, client type, app).
fn challenge_ok(profile: &str, client_type: &str, is_app: bool, c: &Term) -> bool {
    let hashed_nonce = c.as_app(Fun::Hash).is_some_and(|x| x[0].nonce_id().is_some());
    let hashed_key = c.as_app(Fun::Hash).is_some_and(|x| x[0].as_app(Fun::Pub).is_some());
    match (profile, client_type, is_app) {
        ("r", _, _) => hashed_nonce,
        ("rw", "pub", _) | ("rw", "conf_OAUTB", true) => hashed_key,
        ("rw", "conf_OAUTB", false) => c.as_atom() == Some("referred_tb"),
        ("rw", "conf_MTLS", _) => c.is_empty_seq(),
        _ => false,
    }
}

#[test]
fn pkce_challenge_shape_per_configuration() {
    for f in LEGAL_FIXTURES {
        let sc = Scenario::bundled(f).unwrap();
        let reg = sc.world.registrations.values().next().unwrap().clone();
        let mut seen = 0;
        for (trace, _) in runs(&sc, 30) {
            for e in trace.steps.iter().flat_map(|s| &s.emitted) {
                if e.receiver != sc.world.leak_addr {
                    continue;
                }
                let Some((tag, url)) = e.msg.as_pair() else { continue };
                let Some(url) = Url::from_term(url).filter(|_| tag.as_atom() == Some("LEAK")) else { continue };
                let c = url.params.at("pkce_challenge");
                assert!(
                    challenge_ok(reg.profile.as_str(), reg.client_type.as_str(), reg.is_app, &c),
                    "{f}: challenge {}",
                    c.render()
                );
                seen += 1;
            }
        }
        assert!(seen > 0, "{f}: no authorization request observed");
    }
}

#[test]
fn read_clients_only_redeem_codes_at_their_issuer() {
    let mut positive_control = false;
    for sc in all_scenarios() {
        let read = sc.world.registrations.values().all(|r| r.profile.as_str() == "r");
        for (trace, _) in runs(&sc, 40) {
            for s in &trace.steps {
                let from_client = sc.world.proc_named(&s.actor).is_some_and(|p| sc.world.procs[p].kind == ProcKind::Client);
                if !from_client {
                    continue;
                }
                for e in &s.emitted {
                    let Some((req, _)) = sc.world.attacker.open_request(&e.msg) else { continue };
                    if req.path_str() == "/token" {
                        assert!(!read, "{}: read client sent a token request to {}", sc.name(), req.host.render());
                        positive_control = true;
                    }
                }
            }
        }
    }
    assert!(positive_control, "no rw client ever used the misconfigured token endpoint");
}

#[test]
fn codes_redeem_once_and_tokens_are_unique() {
    for sc in all_scenarios() {
        for (trace, last) in runs(&sc, SEEDS) {
            let mut tokens = HashSet::new();
            for f in trace.steps.iter().flat_map(|s| &s.facts) {
                if let Fact::TokenIssued { token, .. } = f {
                    assert!(tokens.insert(token.clone()), "{}: token issued twice", sc.name());
                }
            }
            for p in &last.procs {
                let Proc::As(a) = &**p else { continue };
                let live: Vec<Term> = a.records.iter().map(|r| r.at("code")).filter(|c| c.nonce_id().is_some()).collect();
                let distinct: HashSet<&Term> = live.iter().collect();
                assert_eq!(distinct.len(), live.len());
                let at: HashSet<&Term> = a.access_tokens.iter().collect();
                assert_eq!(at.len(), a.access_tokens.len(), "{}: duplicate access token entry", sc.name());
            }
        }
    }
}

#[test]
fn confidential_token_requests_come_from_the_client() {
    for sc in all_scenarios() {
        for (trace, _) in runs(&sc, SEEDS) {
            for (i, s) in trace.steps.iter().enumerate() {
                for f in &s.facts {
                    let Fact::TokenIssued { auth_server, client_id, .. } = f else { continue };
                    let Proc::As(a) = &*sc.init.procs[*auth_server] else { continue };
                    let info = a.clients.iter().find(|c| &c.client_id == client_id).unwrap();
                    if info.client_type.as_str() == "pub" {
                        continue;
                    }
                    let consumed = s.consumed.as_ref().unwrap();
                    let from_client = trace.steps[..i].iter().any(|p| {
                        sc.world.proc_named(&p.actor).is_some_and(|q| sc.world.procs[q].kind == ProcKind::Client)
                            && p.emitted.contains(consumed)
                    });
                    assert!(from_client, "{}: token request for {} not sent by the client", sc.name(), client_id.render());
                }
            }
        }
    }
}

#[test]
fn resources_only_for_issued_tokens() {
    for sc in all_scenarios() {
        for (trace, _) in runs(&sc, SEEDS) {
            let mut issued: Vec<(Term, Term)> = Vec::new();
            for f in trace.steps.iter().flat_map(|s| &s.facts) {
                match f {
                    Fact::TokenIssued { token, identity, .. } => issued.push((token.clone(), identity.clone())),
                    Fact::ResourceIssued { token, identity, .. } => {
                        assert!(
                            issued.iter().any(|(t, u)| t == token && u == identity),
                            "{}: resource for {} without a matching token",
                            sc.name(),
                            identity.render()
                        );
                    }
                    _ => {}
                }
            }
        }
    }
}
