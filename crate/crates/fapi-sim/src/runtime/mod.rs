//! Run semantics: configurations, processing steps, nonce supply,
//! schedulers and corruption.

pub mod choice;
pub mod explore;

use crate::attacker::{self, AttackMove, AttackerSetup, AttackerState};
use crate::authserver::AuthServer;
use crate::browser::Browser;
use crate::client::Client;
use crate::https::{dns_response, Url};
use crate::resourceserver::ResourceServer;
use crate::terms::Term;
use choice::{Chooser, PreferChooser, RandomChooser};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Event {
    pub receiver: Term,
    pub sender: Term,
    pub msg: Term,
}

/// A plain `stop`: the step is discarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Halt;

pub type Flow = Result<(), Halt>;

pub fn guard(cond: bool) -> Flow {
    if cond {
        Ok(())
    } else {
        Err(Halt)
    }
}

pub trait OrHalt<T> {
    fn or_halt(self) -> Result<T, Halt>;
}

impl<T> OrHalt<T> for Option<T> {
    fn or_halt(self) -> Result<T, Halt> {
        self.ok_or(Halt)
    }
}

/// Rejects `FAIL` results of destructor applications.
pub fn nofail(t: Term) -> Result<Term, Halt> {
    if t.is_fail() {
        Err(Halt)
    } else {
        Ok(t)
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixes {
    #[serde(rename = "fixAtHash", default = "yes")]
    pub at_hash: bool,
    #[serde(rename = "fixAtIss", default = "yes")]
    pub at_iss: bool,
    #[serde(rename = "fixSignedRequestJws", default = "yes")]
    pub signed_request_jws: bool,
}

impl Default for Fixes {
    fn default() -> Self {
        Fixes { at_hash: true, at_iss: true, signed_request_jws: true }
    }
}

impl Fixes {
    pub const NAMES: [&'static str; 3] = ["fixAtHash", "fixAtIss", "fixSignedRequestJws"];

    pub fn set(&mut self, name: &str, on: bool) -> bool {
        match name {
            "fixAtHash" => self.at_hash = on,
            "fixAtIss" => self.at_iss = on,
            "fixSignedRequestJws" => self.signed_request_jws = on,
            _ => return false,
        }
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leaks {
    #[serde(rename = "leakAuthRequest", default = "yes")]
    pub auth_request: bool,
    #[serde(rename = "leakAuthResponseApp", default = "yes")]
    pub auth_response_app: bool,
    #[serde(rename = "leakAccessTokenRW", default = "yes")]
    pub access_token_rw: bool,
    #[serde(rename = "misconfiguredTokenEndpoint", default = "yes")]
    pub misconfigured_token_endpoint: bool,
}

impl Default for Leaks {
    fn default() -> Self {
        Leaks { auth_request: true, auth_response_app: true, access_token_rw: true, misconfigured_token_endpoint: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Profile {
    #[serde(rename = "r")]
    R,
    #[serde(rename = "rw")]
    Rw,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::R => "r",
            Profile::Rw => "rw",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClientType {
    #[serde(rename = "pub")]
    Pub,
    #[serde(rename = "conf_JWS")]
    ConfJws,
    #[serde(rename = "conf_MTLS")]
    ConfMtls,
    #[serde(rename = "conf_OAUTB")]
    ConfOautb,
}

impl ClientType {
    pub fn as_str(self) -> &'static str {
        match self {
            ClientType::Pub => "pub",
            ClientType::ConfJws => "conf_JWS",
            ClientType::ConfMtls => "conf_MTLS",
            ClientType::ConfOautb => "conf_OAUTB",
        }
    }

    pub fn from_atom(t: &Term) -> Option<ClientType> {
        match t.as_atom()? {
            "pub" => Some(ClientType::Pub),
            "conf_JWS" => Some(ClientType::ConfJws),
            "conf_MTLS" => Some(ClientType::ConfMtls),
            "conf_OAUTB" => Some(ClientType::ConfOautb),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcKind {
    Browser,
    Client,
    As,
    Rs,
}

#[derive(Clone, Debug)]
pub struct ProcInfo {
    pub name: String,
    pub kind: ProcKind,
    pub addr: Term,
    pub domains: Vec<Term>,
}

#[derive(Clone, Debug)]
pub struct RegInfo {
    pub client_id: Term,
    pub profile: Profile,
    pub client_type: ClientType,
    pub is_app: bool,
}

impl RegInfo {
    pub fn oautb_web(&self) -> bool {
        self.client_type == ClientType::ConfOautb && !self.is_app
    }
}

/// Static run parameters shared by all processes.
#[derive(Clone, Debug)]
pub struct World {
    pub key_mapping: HashMap<Term, Term>,
    pub dns: HashMap<Term, Term>,
    pub dns_addr: Term,
    pub leak_addr: Term,
    pub attacker_addr: Term,
    pub honest_dns: bool,
    pub fixes: Fixes,
    pub leaks: Leaks,
    pub procs: Vec<ProcInfo>,
    pub addr_index: HashMap<Term, usize>,
    /// Identity → owning honest browser.
    pub identity_owner: HashMap<Term, usize>,
    /// Domain → honest AS process.
    pub as_by_domain: HashMap<Term, usize>,
    pub attacker_as_domains: HashSet<Term>,
    /// (client process, issuer domain) → registration.
    pub registrations: HashMap<(usize, Term), RegInfo>,
    /// (AS domain, client_id) → client process.
    pub client_by_id: HashMap<(Term, Term), usize>,
    pub attacker_endpoints: Vec<Url>,
    pub attacker: AttackerSetup,
}

impl World {
    pub fn key_of(&self, domain: &Term) -> Option<Term> {
        self.key_mapping.get(domain).cloned()
    }

    pub fn resolve(&self, domain: &Term) -> Option<Term> {
        self.dns.get(domain).cloned()
    }

    pub fn proc_named(&self, name: &str) -> Option<usize> {
        self.procs.iter().position(|p| p.name == name)
    }

    pub fn domain_of(&self, p: usize) -> Option<&Term> {
        self.procs.get(p).and_then(|i| i.domains.first())
    }
}

/// Observations emitted by processes for the monitors.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "fact", rename_all = "snake_case")]
pub enum Fact {
    TokenIssued { auth_server: usize, token: Term, client_id: Term, identity: Term },
    ResourceIssued { rs: usize, resource: Term, identity: Term, token: Term },
    StartLogin { browser: usize, request: Term },
    SessionCookie { client: usize, lsid: Term, request: Term },
    SessionState { client: usize, lsid: Term, state: Term, issuer: Term },
    AuthFormSubmitted { browser: usize, identity: Term, host: Term, state: Term },
    LoggedIn { client: usize, lsid: Term, identity: Term, issuer: Term, ssid: Option<Term>, receiver: Option<Term> },
    ResourceObtained { client: usize, lsid: Term, resource: Term, rs: Term, issuer: Term, receiver: Option<Term> },
    Corrupted { process: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChoiceRecord {
    pub label: String,
    pub pick: usize,
    pub of: usize,
    pub name: String,
}

/// Per-step execution context handed to process algorithms.
pub struct Ctx<'a> {
    pub world: &'a World,
    pub procs: &'a [Arc<Proc>],
    pub me: usize,
    next_nonce: u64,
    chooser: &'a mut dyn Chooser,
    pub choices: Vec<ChoiceRecord>,
    out: Vec<Event>,
    facts: Vec<Fact>,
    drawn: Vec<Term>,
}

impl<'a> Ctx<'a> {
    pub fn new(
        world: &'a World,
        procs: &'a [Arc<Proc>],
        me: usize,
        next_nonce: u64,
        chooser: &'a mut dyn Chooser,
    ) -> Self {
        Ctx { world, procs, me, next_nonce, chooser, choices: Vec::new(), out: Vec::new(), facts: Vec::new(), drawn: Vec::new() }
    }

    /// Events emitted so far in this step.
    pub fn emitted(&self) -> &[Event] {
        &self.out
    }

    pub fn fresh(&mut self, label: &str) -> Term {
        let t = Term::nonce(self.next_nonce, label);
        self.next_nonce += 1;
        self.drawn.push(t.clone());
        t
    }

    /// `let x ← options`; an empty set stops the step.
    pub fn choose(&mut self, label: &str, options: Vec<String>) -> Result<usize, Halt> {
        match options.len() {
            0 => Err(Halt),
            1 => Ok(0),
            n => {
                let pick = self.chooser.choose(label, &options).min(n - 1);
                self.choices.push(ChoiceRecord {
                    label: label.to_string(),
                    pick,
                    of: n,
                    name: options[pick].clone(),
                });
                Ok(pick)
            }
        }
    }

    pub fn choose_bool(&mut self, label: &str) -> Result<bool, Halt> {
        Ok(self.choose(label, vec!["false".into(), "true".into()])? == 1)
    }

    /// Chooses one of `terms`, naming options by their rendering.
    pub fn choose_term(&mut self, label: &str, terms: &[Term]) -> Result<Term, Halt> {
        let i = self.choose(label, terms.iter().map(Term::render).collect())?;
        Ok(terms[i].clone())
    }

    pub fn emit(&mut self, receiver: Term, sender: Term, msg: Term) {
        self.out.push(Event { receiver, sender, msg });
    }

    pub fn fact(&mut self, f: Fact) {
        self.facts.push(f);
    }

    pub fn proc(&self, i: usize) -> &Proc {
        &self.procs[i]
    }
}

#[derive(Clone, Debug)]
pub enum Proc {
    Browser(Browser),
    Client(Client),
    As(AuthServer),
    Rs(ResourceServer),
}

impl Proc {
    pub fn receive(&mut self, ev: &Event, ctx: &mut Ctx) -> Flow {
        match self {
            Proc::Browser(b) => b.receive(ev, ctx),
            Proc::Client(c) => c.receive(ev, ctx),
            Proc::As(a) => a.receive(ev, ctx),
            Proc::Rs(r) => r.receive(ev, ctx),
        }
    }

    pub fn to_term(&self) -> Term {
        match self {
            Proc::Browser(b) => b.to_term(),
            Proc::Client(c) => c.to_term(),
            Proc::As(a) => a.to_term(),
            Proc::Rs(r) => r.to_term(),
        }
    }

    /// Named trigger options; empty for servers.
    pub fn trigger_options(&self) -> Vec<String> {
        match self {
            Proc::Browser(b) => b.trigger_options(),
            _ => Vec::new(),
        }
    }

    pub fn as_auth_server(&self) -> Option<&AuthServer> {
        match self {
            Proc::As(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Deliver(usize),
    Trigger(usize),
    Attack(AttackMove),
}

#[derive(Clone, Debug)]
pub struct Config {
    pub procs: Vec<Arc<Proc>>,
    pub pool: Vec<Event>,
    pub next_nonce: u64,
    pub attacker: Arc<AttackerState>,
    pub corrupted: Vec<bool>,
    pub facts: Arc<Vec<Fact>>,
    digest_cache: Vec<Option<[u8; 32]>>,
    att_chain: [u8; 32],
}

impl Config {
    pub fn new(procs: Vec<Proc>, next_nonce: u64, attacker: AttackerState) -> Self {
        let n = procs.len();
        Config {
            procs: procs.into_iter().map(Arc::new).collect(),
            pool: Vec::new(),
            next_nonce,
            attacker: Arc::new(attacker),
            corrupted: vec![false; n],
            facts: Arc::new(Vec::new()),
            digest_cache: vec![None; n],
            att_chain: [0; 32],
        }
    }

    pub fn honest(&self, p: usize) -> bool {
        !self.corrupted.get(p).copied().unwrap_or(false)
    }

    fn set_proc(&mut self, p: usize, proc: Proc) {
        self.procs[p] = Arc::new(proc);
        self.digest_cache[p] = None;
    }

    /// Stable hash of the canonical rendering of the configuration.
    pub fn digest(&mut self) -> String {
        let mut h = Sha256::new();
        for (i, p) in self.procs.iter().enumerate() {
            let d = *self.digest_cache[i].get_or_insert_with(|| sha(p.to_term().render().as_bytes()));
            h.update(d);
            h.update([self.corrupted[i] as u8]);
        }
        for ev in &self.pool {
            h.update(ev.receiver.render().as_bytes());
            h.update(ev.sender.render().as_bytes());
            h.update(ev.msg.render().as_bytes());
            h.update(b"\n");
        }
        h.update(self.next_nonce.to_le_bytes());
        h.update(self.att_chain);
        h.update(self.attacker.progress_term().render().as_bytes());
        hex::encode(h.finalize())
    }

    fn observe(&mut self, t: &Term) {
        let mut h = Sha256::new();
        h.update(self.att_chain);
        h.update(t.render().as_bytes());
        self.att_chain = h.finalize().into();
    }
}

fn sha(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub index: usize,
    pub action: Action,
    pub actor: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consumed: Option<Event>,
    pub choices: Vec<ChoiceRecord>,
    pub emitted: Vec<Event>,
    pub stopped: bool,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub learned: Vec<Term>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub facts: Vec<Fact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

impl StepRecord {
    pub fn choice_script(&self) -> Vec<usize> {
        self.choices.iter().map(|c| c.pick).collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("invalid scheduler choice: {0}")]
    InvalidAction(String),
    #[error("attacker emitted an underivable message: {0}")]
    Underivable(String),
}

fn attacker_controlled(world: &World, cfg: &Config, addr: &Term) -> bool {
    match world.addr_index.get(addr) {
        Some(&p) => !cfg.honest(p),
        None => true,
    }
}

struct Stepper<'w, 'c> {
    world: &'w World,
    chooser: &'c mut dyn Chooser,
    track: bool,
    record: StepRecord,
}

impl Stepper<'_, '_> {
    fn route(&mut self, next: &mut Config, ev: Event) {
        let absorbed = attacker_controlled(self.world, next, &ev.receiver);
        let att = Arc::make_mut(&mut next.attacker);
        att.kb.add(ev.msg.clone());
        if absorbed {
            att.inbox.push(ev.clone());
        } else {
            att.observed.push(ev.clone());
        }
        if self.track {
            next.observe(&ev.msg);
        }
        self.record.emitted.push(ev.clone());
        if !absorbed {
            next.pool.push(ev);
        }
    }

    /// Runs one process on one event. Honest DNS answers for the requests
    /// it emits are delivered to it within the same processing step.
    fn run_proc(&mut self, next: &mut Config, p: usize, ev: Event) -> bool {
        let mut queue = vec![ev];
        let mut first = true;
        let mut committed = false;
        while let Some(ev) = queue.pop() {
            let mut proc = (*next.procs[p]).clone();
            let (res, out, facts, nonce, choices) = {
                let mut ctx = Ctx::new(self.world, &next.procs, p, next.next_nonce, &mut *self.chooser);
                let res = proc.receive(&ev, &mut ctx);
                (res, ctx.out, ctx.facts, ctx.next_nonce, ctx.choices)
            };
            self.record.choices.extend(choices);
            if res.is_err() {
                if first {
                    self.record.stopped = true;
                }
                first = false;
                continue;
            }
            first = false;
            committed = true;
            next.set_proc(p, proc);
            next.next_nonce = nonce;
            self.record.facts.extend(facts.iter().cloned());
            Arc::make_mut(&mut next.facts).extend(facts);
            let mut follow = Vec::new();
            for e in out {
                let answer = self.fold_dns(&e, p);
                self.route(next, e);
                if let Some(a) = answer {
                    follow.push(a);
                }
            }
            follow.reverse();
            queue.extend(follow);
        }
        committed
    }

    fn fold_dns(&self, e: &Event, p: usize) -> Option<Event> {
        if !self.world.honest_dns || e.receiver != self.world.dns_addr {
            return None;
        }
        let [tag, host, nonce] = e.msg.as_seq()? else { return None };
        if tag.as_atom() != Some("DNSResolve") {
            return None;
        }
        let addr = self.world.resolve(host)?;
        Some(Event {
            receiver: self.world.procs[p].addr.clone(),
            sender: self.world.dns_addr.clone(),
            msg: dns_response(host, &addr, nonce),
        })
    }
}

pub fn trigger_msg() -> Term {
    Term::atom("TRIGGER")
}

/// Applies one scheduler action. The input configuration is unchanged.
pub fn step(
    world: &World,
    cfg: &Config,
    action: &Action,
    index: usize,
    chooser: &mut dyn Chooser,
    track: bool,
) -> Result<(Config, StepRecord), StepError> {
    let mut next = cfg.clone();
    let record = StepRecord {
        index,
        action: action.clone(),
        actor: String::new(),
        consumed: None,
        choices: Vec::new(),
        emitted: Vec::new(),
        stopped: false,
        learned: Vec::new(),
        facts: Vec::new(),
        digest: None,
    };
    let mut st = Stepper { world, chooser, track, record };
    match action {
        Action::Deliver(i) => {
            if *i >= next.pool.len() {
                return Err(StepError::InvalidAction(format!("pool index {i}")));
            }
            let ev = next.pool.remove(*i);
            st.record.consumed = Some(ev.clone());
            match world.addr_index.get(&ev.receiver) {
                Some(&p) if next.honest(p) => {
                    st.record.actor = world.procs[p].name.clone();
                    st.run_proc(&mut next, p, ev);
                }
                _ => {
                    st.record.actor = "attacker".into();
                    Arc::make_mut(&mut next.attacker).inbox.push(ev);
                }
            }
        }
        Action::Trigger(p) => {
            let enabled = next.procs.get(*p).is_some_and(|x| !x.trigger_options().is_empty()) && next.honest(*p);
            if !enabled {
                return Err(StepError::InvalidAction(format!("trigger {p}")));
            }
            st.record.actor = world.procs[*p].name.clone();
            let addr = world.procs[*p].addr.clone();
            let ev = Event { receiver: addr.clone(), sender: addr, msg: trigger_msg() };
            st.record.stopped = !st.run_proc(&mut next, *p, ev);
        }
        Action::Attack(m) => {
            st.record.actor = "attacker".into();
            let mut att = (*next.attacker).clone();
            let (res, out, nonce, choices, drawn) = {
                let mut ctx = Ctx::new(world, &next.procs, usize::MAX, next.next_nonce, &mut *st.chooser);
                let res = attacker::execute(&mut att, m, &next, &mut ctx);
                (res, ctx.out, ctx.next_nonce, ctx.choices, ctx.drawn)
            };
            st.record.choices.extend(choices);
            match res {
                Ok(()) => {
                    next.next_nonce = nonce;
                    for t in &drawn {
                        att.kb.add(t.clone());
                    }
                    att.learned.extend(drawn.iter().cloned());
                    for e in &out {
                        if !att.kb.derivable(&e.msg) {
                            return Err(StepError::Underivable(e.msg.render()));
                        }
                    }
                    st.record.learned = drawn;
                    next.attacker = Arc::new(att);
                    if track {
                        for t in st.record.learned.clone() {
                            next.observe(&t);
                        }
                    }
                    for e in out {
                        st.route(&mut next, e);
                    }
                }
                Err(Halt) => st.record.stopped = true,
            }
        }
    }
    let mut record = st.record;
    if track {
        record.digest = Some(next.digest());
    }
    Ok((next, record))
}

/// Marks `p` corrupted and hands its state to the attacker. Idempotent.
pub fn corrupt(world: &World, cfg: &Config, p: usize) -> Result<(Config, Vec<Term>), String> {
    if p >= cfg.procs.len() {
        return Err(format!("unknown process {p}"));
    }
    let mut next = cfg.clone();
    if !next.honest(p) {
        return Ok((next, Vec::new()));
    }
    next.corrupted[p] = true;
    next.digest_cache[p] = None;
    let state = next.procs[p].to_term();
    let att = Arc::make_mut(&mut next.attacker);
    att.kb.add(state.clone());
    let mut stay = Vec::new();
    for ev in std::mem::take(&mut next.pool) {
        if ev.receiver == world.procs[p].addr {
            att.inbox.push(ev);
        } else {
            stay.push(ev);
        }
    }
    next.pool = stay;
    Arc::make_mut(&mut next.facts).push(Fact::Corrupted { process: p });
    Ok((next, vec![state]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Seeded,
    Guided,
    Exhaustive,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trace {
    pub scenario: String,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub initial_knowledge: Vec<Term>,
    pub corrupted: Vec<String>,
    pub steps: Vec<StepRecord>,
}

impl Trace {
    /// Line-delimited JSON: a header line, then one line per step.
    pub fn render_jsonl(&self) -> String {
        let header = serde_json::json!({
            "scenario": self.scenario,
            "mode": self.mode,
            "seed": self.seed,
            "initial_knowledge": self.initial_knowledge.len(),
            "corrupted": self.corrupted,
        });
        let mut out = header.to_string();
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            let what = match &s.action {
                Action::Deliver(_) => "deliver",
                Action::Trigger(_) => "trigger",
                Action::Attack(_) => "attack",
            };
            out.push_str(&format!("#{:<3} {:<8} {:<12}", s.index, what, s.actor));
            if let Action::Attack(m) = &s.action {
                out.push_str(&format!(" {}", m.describe()));
            }
            if s.stopped {
                out.push_str(" (stop)");
            }
            for c in &s.choices {
                out.push_str(&format!(" [{}={}]", c.label, c.name));
            }
            out.push('\n');
            for e in &s.emitted {
                let m = e.msg.render();
                let short: String = m.chars().take(160).collect();
                out.push_str(&format!("       {} -> {}: {}\n", e.sender, e.receiver, short));
            }
        }
        out
    }
}

/// Result of a scheduled run.
pub struct RunOutcome {
    pub trace: Trace,
    pub last: Config,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub max_steps: usize,
    pub track_digests: bool,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error(transparent)]
    Step(#[from] StepError),
}

/// Every action enabled in `cfg`.
pub fn enabled_actions(world: &World, cfg: &Config) -> Vec<Action> {
    let mut acts: Vec<Action> = (0..cfg.pool.len()).map(Action::Deliver).collect();
    for (p, proc) in cfg.procs.iter().enumerate() {
        if cfg.honest(p) && !proc.trigger_options().is_empty() {
            acts.push(Action::Trigger(p));
        }
    }
    acts.extend(attacker::moves(world, cfg).into_iter().map(Action::Attack));
    acts
}

pub fn empty_trace(name: &str, mode: Mode, seed: Option<u64>, init: &[Term], corrupted: Vec<String>) -> Trace {
    Trace { scenario: name.to_string(), mode, seed, initial_knowledge: init.to_vec(), corrupted, steps: Vec::new() }
}

/// Random scheduling: uniform over enabled actions, seeded choices.
pub fn run_seeded(world: &World, init: &Config, mut trace: Trace, seed: u64, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    if opts.max_steps == 0 {
        return Err(RunError::ZeroSteps);
    }
    let mut rng = RandomChooser::new(seed);
    let mut cfg = init.clone();
    for i in 0..opts.max_steps {
        let acts = enabled_actions(world, &cfg);
        if acts.is_empty() {
            break;
        }
        let a = &acts[rng.below(acts.len())];
        let (next, rec) = step(world, &cfg, a, i, &mut rng, opts.track_digests)?;
        trace.steps.push(rec);
        cfg = next;
    }
    Ok(RunOutcome { trace, last: cfg })
}

/// Priority scheduling: recipe moves, then pool FIFO, then browser
/// triggers; inner choices follow the preference lists.
pub fn run_guided(
    world: &World,
    init: &Config,
    mut trace: Trace,
    prefs: &BTreeMap<String, Vec<String>>,
    opts: &RunOptions,
) -> Result<RunOutcome, RunError> {
    if opts.max_steps == 0 {
        return Err(RunError::ZeroSteps);
    }
    let mut chooser = PreferChooser::new(prefs.clone());
    let mut cfg = init.clone();
    for i in 0..opts.max_steps {
        let action = if let Some(m) = attacker::recipe_moves(world, &cfg).into_iter().next() {
            Action::Attack(m)
        } else if !cfg.pool.is_empty() {
            Action::Deliver(0)
        } else if let Some(p) =
            (0..cfg.procs.len()).find(|&p| cfg.honest(p) && !cfg.procs[p].trigger_options().is_empty())
        {
            Action::Trigger(p)
        } else {
            break;
        };
        let (next, rec) = step(world, &cfg, &action, i, &mut chooser, opts.track_digests)?;
        trace.steps.push(rec);
        cfg = next;
    }
    Ok(RunOutcome { trace, last: cfg })
}

/// Re-executes a trace's actions and choice scripts; returns the digests.
pub fn replay(world: &World, init: &Config, trace: &Trace) -> Result<Vec<String>, StepError> {
    let mut cfg = init.clone();
    let mut out = Vec::new();
    for s in &trace.steps {
        let mut ch = choice::ScriptChooser::new(s.choice_script());
        let (next, mut rec) = step(world, &cfg, &s.action, s.index, &mut ch, true)?;
        out.push(rec.digest.take().unwrap_or_default());
        cfg = next;
    }
    Ok(out)
}
