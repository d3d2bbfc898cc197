//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use common::{closure_derivable, instance};
use fapi_sim::monitors::Property;
use fapi_sim::runtime::explore::ExploreOutcome;
use fapi_sim::scenario::{
    campaign, run_attack, with_authreq_leak, with_passive_attacker, Scenario, ATTACKS, BUNDLED, CORE_PROPERTIES,
    LEGAL_FIXTURES, SI_PROPERTIES,
};
use fapi_sim::terms::KnowledgeBase;
use std::process::ExitCode;
use std::time::{Duration, Instant};

const ORACLE_INSTANCES: u64 = 10_000;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const ATTACK_BUDGET: Duration = Duration::from_secs(1);
const ATTACK_MAX_STEPS: usize = 40;
const EXPLORE_DEPTH: usize = 12;
const EXPLORE_NODE_LIMIT: usize = 1_000_000;
const CAMPAIGN_SEEDS: u64 = 1_000;
const FIXED_BUDGET: Duration = Duration::from_secs(120);
const PASSIVE_SEEDS: u64 = 200;
const DETERMINISM_SEEDS: u64 = 5;

struct Line {
    id: &'static str,
    ok: bool,
    detail: String,
}

fn line(id: &'static str, ok: bool, detail: String) -> Line {
    Line { id, ok, detail }
}

fn off(fix: &str) -> Vec<(String, bool)> {
    vec![(fix.to_string(), false)]
}

fn oracle() -> Line {
    let start = Instant::now();
    let mut agree = 0u64;
    let mut positives = 0u64;
    let mut first_bad = None;
    for seed in 0..ORACLE_INSTANCES {
        let (kb, t) = instance(seed);
        let want = closure_derivable(&kb, &t);
        if KnowledgeBase::from_terms(kb.iter().cloned()).derivable(&t) == want {
            agree += 1;
        } else if first_bad.is_none() {
            first_bad = Some(seed);
        }
        positives += want as u64;
    }
    let took = start.elapsed();
    let ok = agree == ORACLE_INSTANCES && took < ORACLE_BUDGET;
    line(
        "1 derivation-oracle",
        ok,
        format!(
            "{agree}/{ORACLE_INSTANCES} agree ({positives} derivable), {:.2}s (limit {}s){}",
            took.as_secs_f64(),
            ORACLE_BUDGET.as_secs(),
            first_bad.map(|s| format!(", first mismatch at seed {s}")).unwrap_or_default()
        ),
    )
}

fn attacks() -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    for a in &ATTACKS {
        let fixes = a.fix.map(off).unwrap_or_default();
        let start = Instant::now();
        let r = run_attack(a.name, &fixes);
        let took = start.elapsed();
        let (good, what) = match r {
            Ok(r) => {
                let broken: Vec<Property> = a.targets.iter().copied().filter(|p| !r.run.holds(*p)).collect();
                let resource = a.fix.is_none()
                    || r.run.verdicts.iter().filter_map(|v| v.witness.as_ref()).any(|w| {
                        w.property == Property::Authorization
                            && w.term.as_ref().and_then(|t| t.nonce_label()).is_some_and(|l| l.starts_with(['r', 'w']))
                    });
                (
                    r.reproduced && resource && r.run.steps <= ATTACK_MAX_STEPS && took < ATTACK_BUDGET,
                    format!("{} steps, {:.0}ms, {:?}", r.run.steps, took.as_secs_f64() * 1e3, broken),
                )
            }
            Err(e) => (false, e.to_string()),
        };
        ok &= good;
        parts.push(format!("{}: {what}", a.name));
    }
    line("2 attack-reproduction", ok, parts.join("; "))
}

fn fixed() -> Line {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, _) in BUNDLED.iter().filter(|(n, _)| n.starts_with("attack-")) {
        let sc = Scenario::bundled(name).expect("bundled scenario loads");
        match sc.explore(EXPLORE_DEPTH, EXPLORE_NODE_LIMIT, &CORE_PROPERTIES) {
            Ok(rep) => {
                let verdict = match &rep.outcome {
                    ExploreOutcome::Complete => "complete".to_string(),
                    ExploreOutcome::NodeLimit => {
                        ok = false;
                        "INCONCLUSIVE".to_string()
                    }
                    ExploreOutcome::Violation { violation, .. } => {
                        ok = false;
                        format!("violation {}", violation.property)
                    }
                };
                parts.push(format!("{name} {} nodes {verdict}", rep.nodes));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    let scenarios: Vec<Scenario> = LEGAL_FIXTURES.iter().map(|f| Scenario::bundled(f).expect("fixture loads")).collect();
    let rep = campaign(&scenarios, CAMPAIGN_SEEDS, None);
    ok &= rep.violations.is_empty() && rep.errors.is_empty() && rep.runs == 8 * CAMPAIGN_SEEDS as usize;
    let took = start.elapsed();
    ok &= took < FIXED_BUDGET;
    parts.push(format!(
        "campaign {} runs, {} violations, {} errors",
        rep.runs,
        rep.violations.len(),
        rep.errors.len()
    ));
    parts.push(format!("{:.1}s (limit {}s); bounded evidence only, not a proof for unbounded runs", took.as_secs_f64(), FIXED_BUDGET.as_secs()));
    line("3 fix-effectiveness", ok, parts.join("; "))
}

fn ablation() -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    let fixes: Vec<&str> = ATTACKS.iter().filter_map(|a| a.fix).collect();
    for a in ATTACKS.iter().filter(|a| a.fix.is_some()) {
        let base = run_attack(a.name, &[]).map(|r| r.reproduced).unwrap_or(true);
        ok &= !base;
        for f in &fixes {
            let flipped = run_attack(a.name, &off(f)).map(|r| r.reproduced).unwrap_or(false);
            let expect = Some(*f) == a.fix;
            if flipped != expect {
                ok = false;
                parts.push(format!("{} with {f} off: reproduced={flipped}", a.name));
            }
        }
    }
    let mut leaky = Vec::new();
    for f in LEGAL_FIXTURES {
        let sc = match with_authreq_leak(f) {
            Ok(sc) => sc,
            Err(e) => {
                ok = false;
                parts.push(format!("{f}: {e}"));
                continue;
            }
        };
        let oautb_web = sc.world.registrations.values().any(|r| r.oautb_web());
        let violated = match sc.run_guided(sc.file.scheduler.max_steps) {
            Ok(r) => SI_PROPERTIES.iter().any(|p| !r.holds(*p)),
            Err(_) => false,
        };
        if violated != !oautb_web {
            ok = false;
            parts.push(format!("{f}: violation={violated} oautb_web={oautb_web}"));
        }
        if violated {
            leaky.push(f);
        }
    }
    parts.insert(0, format!("3 fix pairs x 3 fixes, authreq-leak breaks {}/8 fixtures", leaky.len()));
    line("4 fix-ablation-bijection", ok, parts.join("; "))
}

fn determinism() -> Line {
    let mut ok = true;
    let mut runs = 0;
    for f in LEGAL_FIXTURES {
        let sc = Scenario::bundled(f).expect("fixture loads");
        for seed in 0..DETERMINISM_SEEDS {
            let a = sc.run_seeded(seed, 80).map(|r| r.trace.render_jsonl());
            let b = Scenario::bundled(f).expect("fixture loads").run_seeded(seed, 80).map(|r| r.trace.render_jsonl());
            ok &= matches!((&a, &b), (Ok(x), Ok(y)) if x == y);
            runs += 1;
        }
    }
    for a in &ATTACKS {
        let x = run_attack(a.name, &[]).map(|r| r.run.trace.render_jsonl()).ok();
        let y = run_attack(a.name, &[]).map(|r| r.run.trace.render_jsonl()).ok();
        ok &= x.is_some() && x == y;
        runs += 1;
    }
    line("5 determinism", ok, format!("{runs} scenario/seed pairs rendered twice"))
}

fn passive() -> Line {
    let mut ok = true;
    let mut parts = Vec::new();
    for f in LEGAL_FIXTURES {
        let sc = with_passive_attacker(f).expect("fixture loads");
        let is_app = sc.file.clients.iter().flat_map(|c| &c.registrations).all(|r| r.is_app);
        let hit = (0..PASSIVE_SEEDS).find(|&seed| {
            sc.run_seeded(seed, sc.file.scheduler.max_steps)
                .is_ok_and(|r| if is_app { r.resources_obtained > 0 } else { r.logged_in > 0 })
        });
        ok &= hit.is_some();
        parts.push(format!("{f}: {}", hit.map(|s| format!("seed {s}")).unwrap_or_else(|| "none".into())));
    }
    line("6 honest-completion", ok, parts.join(", "))
}

fn main() -> ExitCode {
    let checks: [fn() -> Line; 6] = [oracle, attacks, fixed, ablation, determinism, passive];
    let mut failed = 0;
    for check in checks {
        let l = check();
        println!("{} {}: {}", if l.ok { "PASS" } else { "FAIL" }, l.id, l.detail);
        failed += !l.ok as usize;
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
