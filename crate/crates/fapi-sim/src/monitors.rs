//! Security properties evaluated over runs: authorization, authentication
//! and session integrity.

use crate::runtime::{Fact, ProcKind, Trace, World};
use crate::terms::{KnowledgeBase, Term};
use serde::Serialize;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, PartialOrd, Ord)]
pub enum Property {
    #[serde(rename = "authorization")]
    Authorization,
    #[serde(rename = "authentication")]
    Authentication,
    #[serde(rename = "si-authn")]
    SessionIntegrityAuthn,
    #[serde(rename = "si-authz")]
    SessionIntegrityAuthz,
    /// Session integrity checked for clients other than OAUTB web-server
    /// clients, where it is not expected to hold.
    #[serde(rename = "si-authn-ext")]
    SessionIntegrityAuthnExt,
    #[serde(rename = "si-authz-ext")]
    SessionIntegrityAuthzExt,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::Authorization,
        Property::Authentication,
        Property::SessionIntegrityAuthn,
        Property::SessionIntegrityAuthz,
        Property::SessionIntegrityAuthnExt,
        Property::SessionIntegrityAuthzExt,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Property::Authorization => "authorization",
            Property::Authentication => "authentication",
            Property::SessionIntegrityAuthn => "si-authn",
            Property::SessionIntegrityAuthz => "si-authz",
            Property::SessionIntegrityAuthnExt => "si-authn-ext",
            Property::SessionIntegrityAuthzExt => "si-authz-ext",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub property: Property,
    /// Index of the processing step after which the property fails.
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub term: Option<Term>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub property: Property,
    pub holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Violation>,
}

/// Incremental checker. Feed it the facts and attacker knowledge after
/// every step; it reports violations in step order.
#[derive(Clone, Debug, Default)]
pub struct Monitor {
    /// Terms that must stay underivable, with their property.
    secrets: Vec<(Property, Term)>,
    seen_facts: usize,
}

fn honest(honest: &[bool], p: usize) -> bool {
    honest.get(p).copied().unwrap_or(false)
}

fn proc_at(world: &World, addr: &Term) -> Option<usize> {
    world.addr_index.get(addr).copied()
}

fn proc_for_domain(world: &World, dom: &Term) -> Option<usize> {
    world.resolve(dom).and_then(|a| proc_at(world, &a))
}

/// Honest AS governing `domain`, if any.
fn honest_as(world: &World, hon: &[bool], domain: &Term) -> Option<usize> {
    world.as_by_domain.get(domain).copied().filter(|&p| honest(hon, p))
}

fn owner_honest(world: &World, hon: &[bool], identity: &Term) -> bool {
    world.identity_owner.get(identity).is_some_and(|&b| honest(hon, b))
}

fn client_for(world: &World, as_proc: usize, client_id: &Term) -> Option<usize> {
    world.procs[as_proc].domains.iter().find_map(|d| world.client_by_id.get(&(d.clone(), client_id.clone())).copied())
}

/// `started(b, c, lsid)`: the browser that ran the client index script for
/// the request that opened session `lsid`.
fn starter(prior: &[Fact], c: usize, lsid: &Term) -> Option<usize> {
    let request = prior.iter().find_map(|f| match f {
        Fact::SessionCookie { client, lsid: l, request } if *client == c && l == lsid => Some(request),
        _ => None,
    })?;
    prior.iter().find_map(|f| match f {
        Fact::StartLogin { browser, request: r } if r == request => Some(*browser),
        _ => None,
    })
}

/// `authenticated(b, c, u, as, lsid)`
fn authenticated(world: &World, prior: &[Fact], b: usize, c: usize, u: &Term, as_proc: usize, lsid: &Term) -> bool {
    let Some(state) = prior.iter().find_map(|f| match f {
        Fact::SessionState { client, lsid: l, state, .. } if *client == c && l == lsid => Some(state),
        _ => None,
    }) else {
        return false;
    };
    let domains = &world.procs[as_proc].domains;
    prior.iter().any(|f| {
        matches!(f, Fact::AuthFormSubmitted { browser, identity, host, state: s }
            if *browser == b && identity == u && domains.contains(host) && s == state)
    })
}

impl Monitor {
    pub fn new() -> Self {
        Monitor::default()
    }

    /// Checks the facts added since the last call and every protected term
    /// against `kb`. `facts` is the full fact history.
    pub fn step(
        &mut self,
        world: &World,
        hon: &[bool],
        facts: &[Fact],
        kb: &KnowledgeBase,
        index: usize,
    ) -> Vec<Violation> {
        let mut out = Vec::new();
        let start = self.seen_facts.min(facts.len());
        for i in start..facts.len() {
            let prior = &facts[..i];
            match &facts[i] {
                Fact::ResourceIssued { rs, resource, identity, token } => {
                    if !honest(hon, *rs) || !owner_honest(world, hon, identity) {
                        continue;
                    }
                    let issued = prior.iter().any(|f| match f {
                        Fact::TokenIssued { auth_server, token: t, client_id, identity: u } => {
                            t == token
                                && u == identity
                                && honest(hon, *auth_server)
                                && client_for(world, *auth_server, client_id).is_some_and(|c| honest(hon, c))
                        }
                        _ => false,
                    });
                    if issued {
                        self.secrets.push((Property::Authorization, resource.clone()));
                    }
                }
                Fact::LoggedIn { client, lsid, identity, issuer, ssid, receiver } => {
                    if !honest(hon, *client) {
                        continue;
                    }
                    let as_proc = honest_as(world, hon, issuer);
                    if let Some(n) = ssid {
                        if as_proc.is_some() && owner_honest(world, hon, identity) {
                            self.secrets.push((Property::Authentication, n.clone()));
                        }
                    }
                    let ext = !world.registrations.get(&(*client, issuer.clone())).is_some_and(|r| r.oautb_web());
                    let prop = if ext { Property::SessionIntegrityAuthnExt } else { Property::SessionIntegrityAuthn };
                    if let Some(v) = si_check(world, hon, prior, *client, lsid, identity, as_proc, receiver.as_ref(), prop, index) {
                        out.push(v);
                    }
                }
                Fact::ResourceObtained { client, lsid, resource, rs, issuer, receiver } => {
                    if !honest(hon, *client) || !proc_for_domain(world, rs).is_some_and(|p| honest(hon, p)) {
                        continue;
                    }
                    let Some(u) = prior.iter().find_map(|f| match f {
                        Fact::ResourceIssued { resource: r, identity, .. } if r == resource => Some(identity),
                        _ => None,
                    }) else {
                        continue;
                    };
                    let as_proc = honest_as(world, hon, issuer);
                    let ext = !world.registrations.get(&(*client, issuer.clone())).is_some_and(|r| r.oautb_web());
                    let prop = if ext { Property::SessionIntegrityAuthzExt } else { Property::SessionIntegrityAuthz };
                    if let Some(v) = si_check(world, hon, prior, *client, lsid, u, as_proc, receiver.as_ref(), prop, index) {
                        out.push(v);
                    }
                }
                _ => {}
            }
        }
        self.seen_facts = facts.len();
        for (p, t) in &self.secrets {
            if kb.derivable(t) {
                out.push(Violation {
                    property: *p,
                    step: index,
                    term: Some(t.clone()),
                    detail: format!("attacker derives {}", t.render()),
                });
            }
        }
        // report each secret once
        let leaked: Vec<Term> = out.iter().filter_map(|v| v.term.clone()).collect();
        self.secrets.retain(|(_, t)| !leaked.contains(t));
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn si_check(
    world: &World,
    hon: &[bool],
    prior: &[Fact],
    c: usize,
    lsid: &Term,
    u: &Term,
    as_proc: Option<usize>,
    receiver: Option<&Term>,
    prop: Property,
    index: usize,
) -> Option<Violation> {
    let start = starter(prior, c, lsid);
    let b = match receiver {
        Some(addr) => proc_at(world, addr).filter(|&p| world.procs[p].kind == ProcKind::Browser)?,
        None => start?,
    };
    if !honest(hon, b) {
        return None;
    }
    let name = |p: usize| world.procs[p].name.clone();
    if start != Some(b) {
        return Some(Violation {
            property: prop,
            step: index,
            term: Some(lsid.clone()),
            detail: format!("{} at {} in a session {} did not start", u.render(), name(c), name(b)),
        });
    }
    let as_proc = as_proc?;
    if !authenticated(world, prior, b, c, u, as_proc, lsid) {
        return Some(Violation {
            property: prop,
            step: index,
            term: Some(u.clone()),
            detail: format!("{} used identity {} at {} without authenticating at {}", name(b), u.render(), name(c), name(as_proc)),
        });
    }
    None
}

/// Evaluates all properties over a recorded trace, rebuilding attacker
/// knowledge from the initial knowledge and the trace contents.
pub fn check_trace(world: &World, trace: &Trace, honest_flags: &[bool]) -> Vec<Verdict> {
    let mut kb = KnowledgeBase::from_terms(trace.initial_knowledge.iter().cloned());
    let mut facts: Vec<Fact> = Vec::new();
    let mut mon = Monitor::new();
    let mut first: Vec<Option<Violation>> = vec![None; Property::ALL.len()];
    for s in &trace.steps {
        for e in &s.emitted {
            kb.add(e.msg.clone());
        }
        for t in &s.learned {
            kb.add(t.clone());
        }
        facts.extend(s.facts.iter().cloned());
        for v in mon.step(world, honest_flags, &facts, &kb, s.index) {
            let slot = &mut first[Property::ALL.iter().position(|p| *p == v.property).expect("known property")];
            if slot.is_none() {
                *slot = Some(v);
            }
        }
    }
    Property::ALL
        .iter()
        .zip(first)
        .map(|(p, w)| Verdict { property: *p, holds: w.is_none(), witness: w })
        .collect()
}

/// The earliest violation over all properties, if any.
pub fn first_violation(verdicts: &[Verdict]) -> Option<&Violation> {
    verdicts.iter().filter_map(|v| v.witness.as_ref()).min_by_key(|w| w.step)
}
