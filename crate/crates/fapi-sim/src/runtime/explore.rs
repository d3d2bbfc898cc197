//! Bounded breadth-first exploration of all schedules and inner choices,
//! with deduplication of configurations up to nonce renaming.

use super::choice::ScriptChooser;
use super::{enabled_actions, step, Action, Config, Fact, StepError, StepRecord, World};
use crate::monitors::{Monitor, Property, Violation};
use crate::terms::Term;
use std::collections::{HashMap, HashSet};
use std::hash::Hasher;

#[derive(Clone, Debug)]
pub struct ExploreOptions {
    pub depth: usize,
    pub node_limit: usize,
    /// Properties whose violation ends the search.
    pub watch: Vec<Property>,
}

#[derive(Clone, Debug)]
pub enum ExploreOutcome {
    /// Every schedule up to the depth bound was explored.
    Complete,
    /// A property failed; `path` reproduces it from the initial configuration.
    Violation { violation: Violation, path: Vec<(Action, Vec<usize>)> },
    /// The node limit was hit before the bound was exhausted.
    NodeLimit,
}

#[derive(Clone, Debug)]
pub struct ExploreReport {
    pub outcome: ExploreOutcome,
    /// Processing steps executed.
    pub nodes: usize,
    /// Distinct configurations reached.
    pub distinct: usize,
    pub depth_reached: usize,
}

/// Multiply-xorshift hasher with two independent 64-bit lanes.
struct Wide {
    a: u64,
    b: u64,
}

impl Wide {
    fn new() -> Self {
        Wide { a: 0x243f_6a88_85a3_08d3, b: 0x1319_8a2e_0370_7344 }
    }

    fn finish128(&self) -> u128 {
        ((self.a as u128) << 64) | self.b as u128
    }
}

impl Hasher for Wide {
    fn write(&mut self, bytes: &[u8]) {
        for chunk in bytes.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            self.write_u64(u64::from_le_bytes(buf));
        }
    }

    fn write_u64(&mut self, x: u64) {
        self.a = (self.a ^ x).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        self.a ^= self.a >> 29;
        self.b = (self.b.rotate_left(23) ^ x).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        self.b ^= self.b >> 31;
    }

    fn write_u8(&mut self, x: u8) {
        self.write_u64(x as u64 | 0x100);
    }

    fn write_usize(&mut self, x: usize) {
        self.write_u64(x as u64);
    }

    fn finish(&self) -> u64 {
        self.a ^ self.b.rotate_left(32)
    }
}

struct Renamer {
    map: HashMap<u64, u64>,
}

impl Renamer {
    fn hash_into(&mut self, t: &Term, h: &mut impl Hasher) {
        let map = &mut self.map;
        t.canonical_hash(
            &mut |id| {
                let n = map.len() as u64;
                *map.entry(id).or_insert(n)
            },
            h,
        );
    }

    /// Hash that ignores nonces not yet renamed; used to order multisets.
    fn shape(&self, t: &Term) -> u64 {
        let mut h = Wide::new();
        t.canonical_hash(&mut |id| self.map.get(&id).copied().unwrap_or(u64::MAX), &mut h);
        h.finish()
    }

    fn multiset(&mut self, items: Vec<Term>, h: &mut impl Hasher) {
        let mut keyed: Vec<(u64, Term)> = items.into_iter().map(|t| (self.shape(&t), t)).collect();
        keyed.sort_by_key(|(k, _)| *k);
        h.write_usize(keyed.len());
        for (_, t) in keyed {
            self.hash_into(&t, h);
        }
    }
}

fn event_term(e: &super::Event) -> Term {
    Term::seq(vec![e.receiver.clone(), e.sender.clone(), e.msg.clone()])
}

fn fact_term(f: &Fact) -> Term {
    let n = |p: &usize| Term::atom(&p.to_string());
    let o = |t: &Option<Term>| t.clone().unwrap_or_else(Term::bot);
    let (tag, parts) = match f {
        Fact::TokenIssued { auth_server, token, client_id, identity } => {
            ("token", vec![n(auth_server), token.clone(), client_id.clone(), identity.clone()])
        }
        Fact::ResourceIssued { rs, resource, identity, token } => {
            ("resource", vec![n(rs), resource.clone(), identity.clone(), token.clone()])
        }
        Fact::StartLogin { browser, request } => ("start", vec![n(browser), request.clone()]),
        Fact::SessionCookie { client, lsid, request } => ("cookie", vec![n(client), lsid.clone(), request.clone()]),
        Fact::SessionState { client, lsid, state, issuer } => {
            ("state", vec![n(client), lsid.clone(), state.clone(), issuer.clone()])
        }
        Fact::AuthFormSubmitted { browser, identity, host, state } => {
            ("form", vec![n(browser), identity.clone(), host.clone(), state.clone()])
        }
        Fact::LoggedIn { client, lsid, identity, issuer, ssid, receiver } => {
            ("login", vec![n(client), lsid.clone(), identity.clone(), issuer.clone(), o(ssid), o(receiver)])
        }
        Fact::ResourceObtained { client, lsid, resource, rs, issuer, receiver } => {
            ("obtained", vec![n(client), lsid.clone(), resource.clone(), rs.clone(), issuer.clone(), o(receiver)])
        }
        Fact::Corrupted { process } => ("corrupted", vec![n(process)]),
    };
    Term::seq(std::iter::once(Term::atom(tag)).chain(parts).collect())
}

/// Hash of a configuration that is invariant under consistent renaming of
/// nonces and under reordering of the network pool, observed events and
/// facts.
pub fn canonical_hash(cfg: &Config) -> u128 {
    let mut r = Renamer { map: HashMap::new() };
    let mut h = Wide::new();
    for (i, p) in cfg.procs.iter().enumerate() {
        h.write_u8(cfg.corrupted[i] as u8);
        r.hash_into(&p.to_term(), &mut h);
    }
    r.hash_into(&cfg.attacker.progress_term(), &mut h);
    r.hash_into(&Term::seq(cfg.attacker.inbox.iter().map(event_term).collect()), &mut h);
    r.multiset(cfg.pool.iter().map(event_term).collect(), &mut h);
    r.multiset(cfg.attacker.observed.iter().map(event_term).collect(), &mut h);
    r.multiset(cfg.facts.iter().map(fact_term).collect(), &mut h);
    h.finish128()
}

struct Node {
    parent: usize,
    action: Action,
    script: Vec<usize>,
}

fn path_to(arena: &[Node], mut i: usize) -> Vec<(Action, Vec<usize>)> {
    let mut out = Vec::new();
    while i != usize::MAX {
        out.push((arena[i].action.clone(), arena[i].script.clone()));
        i = arena[i].parent;
    }
    out.reverse();
    out
}

fn honest_flags(cfg: &Config) -> Vec<bool> {
    (0..cfg.procs.len()).map(|p| cfg.honest(p)).collect()
}

/// Explores every schedule of length at most `opts.depth`. Monitors are
/// evaluated inline on each new configuration.
pub fn explore(world: &World, init: &Config, opts: &ExploreOptions) -> Result<ExploreReport, StepError> {
    let mut seen: HashSet<u128> = HashSet::new();
    seen.insert(canonical_hash(init));
    let mut arena: Vec<Node> = Vec::new();
    let mut frontier: Vec<(Config, Monitor, usize)> = vec![(init.clone(), Monitor::new(), usize::MAX)];
    let mut nodes = 0usize;
    let mut depth_reached = 0;
    for depth in 0..opts.depth {
        let mut next_frontier = Vec::new();
        for (cfg, mon, at) in frontier {
            for action in enabled_actions(world, &cfg) {
                let mut script = Some(Vec::new());
                while let Some(s) = script {
                    if nodes >= opts.node_limit {
                        return Ok(ExploreReport {
                            outcome: ExploreOutcome::NodeLimit,
                            nodes,
                            distinct: seen.len(),
                            depth_reached,
                        });
                    }
                    nodes += 1;
                    let mut ch = ScriptChooser::new(s.clone());
                    let (next, rec): (Config, StepRecord) = step(world, &cfg, &action, depth, &mut ch, false)?;
                    let picks = rec.choice_script();
                    script = ch.successor();
                    if !seen.insert(canonical_hash(&next)) {
                        continue;
                    }
                    depth_reached = depth + 1;
                    let mut m = mon.clone();
                    let found = m.step(world, &honest_flags(&next), &next.facts, &next.attacker.kb, depth);
                    arena.push(Node { parent: at, action: action.clone(), script: picks });
                    let id = arena.len() - 1;
                    if let Some(v) = found.into_iter().find(|v| opts.watch.contains(&v.property)) {
                        return Ok(ExploreReport {
                            outcome: ExploreOutcome::Violation { violation: v, path: path_to(&arena, id) },
                            nodes,
                            distinct: seen.len(),
                            depth_reached,
                        });
                    }
                    next_frontier.push((next, m, id));
                }
            }
        }
        if next_frontier.is_empty() {
            break;
        }
        frontier = next_frontier;
    }
    Ok(ExploreReport { outcome: ExploreOutcome::Complete, nodes, distinct: seen.len(), depth_reached })
}
