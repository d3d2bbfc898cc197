//! Scenario files: schema, legality rules, construction of the initial
//! configuration, the packaged attacks and campaign runners.

use crate::attacker::{AttackerMode, AttackerSetup, AttackerState, Recipe};
use crate::authserver::{AuthServer, ClientInfo};
use crate::browser::Browser;
use crate::client::{Client, Registration};
use crate::https::{ServerCore, Url};
use crate::monitors::{check_trace, first_violation, Property, Verdict, Violation};
use crate::resourceserver::ResourceServer;
use crate::runtime::explore::{explore, ExploreOptions, ExploreReport};
use crate::runtime::{
    corrupt, empty_trace, run_guided, run_seeded, ClientType, Config, Fact, Fixes, Leaks, Mode, Proc, ProcInfo,
    ProcKind, Profile, RegInfo, RunError, RunOptions, StepError, Trace, World,
};
use crate::terms::{KnowledgeBase, Term};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const SCHEMA: &str = "fapi-sim/scenario@1";

pub const DEFAULT_MAX_STEPS: usize = 80;
pub const SEEDED_REPLAY_BUDGET: usize = 3;
pub const EXHAUSTIVE_REPLAY_BUDGET: usize = 1;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed scenario: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema {0:?}, expected {SCHEMA:?}")]
    Schema(String),
    #[error("illegal configuration [{rule}]: {detail}")]
    Illegal { rule: &'static str, detail: String },
    #[error("unknown bundled scenario {0:?}")]
    UnknownBundled(String),
}

fn illegal(rule: &'static str, detail: impl Into<String>) -> LoadError {
    LoadError::Illegal { rule, detail: detail.into() }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DnsPolicy {
    #[default]
    Honest,
    Attacker,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Binding {
    None,
    Mtls,
    Oautb,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrowserSpec {
    pub name: String,
    #[serde(default)]
    pub urlbar: Vec<String>,
    #[serde(default = "default_urlbar_budget")]
    pub urlbar_budget: u32,
}

fn default_urlbar_budget() -> u32 {
    2
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistrationSpec {
    /// Name of an authorization server, or one of the attacker's domains.
    pub issuer: String,
    pub client_id: String,
    pub profile: Profile,
    pub client_type: ClientType,
    #[serde(default)]
    pub is_app: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<Binding>,
    pub redirect_uris: Vec<String>,
    /// Resource server names.
    pub resource_servers: Vec<String>,
}

impl RegistrationSpec {
    fn binding(&self) -> Binding {
        self.binding.unwrap_or(match (self.profile, self.client_type) {
            (_, ClientType::ConfMtls) => Binding::Mtls,
            (_, ClientType::ConfOautb) | (Profile::Rw, ClientType::Pub) => Binding::Oautb,
            _ => Binding::None,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSpec {
    pub name: String,
    pub domain: String,
    pub registrations: Vec<RegistrationSpec>,
    /// Issuers whose signing keys are preconfigured.
    pub jwks_cache: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitySpec {
    pub name: String,
    /// Owning browser.
    pub owner: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthServerSpec {
    pub name: String,
    pub domain: String,
    #[serde(default)]
    pub identities: Vec<IdentitySpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceServerSpec {
    pub name: String,
    pub domain: String,
    pub auth_server: String,
    /// Identity names served; all identities of `auth_server` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerIdentitySpec {
    pub name: String,
    pub auth_server: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeSpec {
    pub id: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    #[serde(default)]
    pub mode: AttackerMode,
    #[serde(default)]
    pub domains: Vec<String>,
    #[serde(default)]
    pub identities: Vec<AttackerIdentitySpec>,
    /// Token endpoints offered to misconfigured clients.
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(default)]
    pub recipes: Vec<RecipeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generic_budget: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_node_limit")]
    pub node_limit: usize,
    /// Preferred option names per choice label, for guided runs.
    #[serde(default)]
    pub prefer: BTreeMap<String, Vec<String>>,
}

fn default_max_steps() -> usize {
    DEFAULT_MAX_STEPS
}
fn default_depth() -> usize {
    12
}
fn default_node_limit() -> usize {
    1_000_000
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        SchedulerSpec {
            mode: Mode::Seeded,
            seed: 0,
            max_steps: DEFAULT_MAX_STEPS,
            depth: default_depth(),
            node_limit: default_node_limit(),
            prefer: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default)]
    pub fixes: Fixes,
    #[serde(default)]
    pub leaks: Leaks,
    #[serde(default)]
    pub dns_policy: DnsPolicy,
    pub browsers: Vec<BrowserSpec>,
    pub clients: Vec<ClientSpec>,
    pub authservers: Vec<AuthServerSpec>,
    pub resourceservers: Vec<ResourceServerSpec>,
    #[serde(default)]
    pub attacker: AttackerSpec,
    /// Processes corrupted before the first step.
    #[serde(default)]
    pub corrupt: Vec<String>,
    #[serde(default)]
    pub scheduler: SchedulerSpec,
}

/// `https://host/path` → `Url`.
pub fn parse_url(s: &str) -> Result<Url, LoadError> {
    let rest = s.strip_prefix("https://").ok_or_else(|| illegal("url", format!("{s:?} is not an https URL")))?;
    let (host, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    if host.is_empty() {
        return Err(illegal("url", format!("{s:?} has no host")));
    }
    Ok(Url::https(host, path))
}

/// `name@domain` → `⟨name, domain⟩`.
pub fn identity(name: &str, domain: &str) -> Term {
    Term::pair(Term::atom(name), Term::dom(domain))
}

pub fn parse_identity(s: &str) -> Result<Term, LoadError> {
    match s.split_once('@') {
        Some((n, d)) if !n.is_empty() && !d.is_empty() => Ok(identity(n, d)),
        _ => Err(illegal("identity", format!("{s:?} is not of the form name@domain"))),
    }
}

/// A loaded scenario: static world plus initial configuration.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub world: World,
    pub init: Config,
    pub initial_knowledge: Vec<Term>,
    pub corrupted: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub steps: usize,
    pub verdicts: Vec<Verdict>,
    pub logged_in: usize,
    pub resources_obtained: usize,
    #[serde(skip)]
    pub trace: Trace,
}

impl RunReport {
    pub fn violation(&self) -> Option<&Violation> {
        first_violation(&self.verdicts)
    }

    pub fn holds(&self, p: Property) -> bool {
        self.verdicts.iter().find(|v| v.property == p).is_none_or(|v| v.holds)
    }
}

fn count_facts(trace: &Trace) -> (usize, usize) {
    let mut out = (0, 0);
    for f in trace.steps.iter().flat_map(|s| &s.facts) {
        match f {
            Fact::LoggedIn { .. } => out.0 += 1,
            Fact::ResourceObtained { .. } => out.1 += 1,
            _ => {}
        }
    }
    out
}

struct Builder {
    next_nonce: u64,
    key_mapping: HashMap<Term, Term>,
    dns: HashMap<Term, Term>,
    procs: Vec<ProcInfo>,
}

impl Builder {
    fn fresh(&mut self, label: &str) -> Term {
        let t = Term::nonce(self.next_nonce, label);
        self.next_nonce += 1;
        t
    }

    /// Draws a TLS key for `domain`; returns the private key.
    fn tls_key(&mut self, domain: &str, addr: &Term) -> Term {
        let k = self.fresh(&format!("tls:{domain}"));
        let d = Term::dom(domain);
        self.key_mapping.insert(d.clone(), Term::pub_key(k.clone()));
        self.dns.insert(d, addr.clone());
        k
    }

    fn add_proc(&mut self, name: &str, kind: ProcKind, domain: Option<&str>) -> Result<(usize, Term), LoadError> {
        if self.procs.iter().any(|p| p.name == name) {
            return Err(illegal("unique-names", format!("process name {name:?} is used twice")));
        }
        let addr = Term::addr(name);
        self.procs.push(ProcInfo {
            name: name.to_string(),
            kind,
            addr: addr.clone(),
            domains: domain.map(Term::dom).into_iter().collect(),
        });
        Ok((self.procs.len() - 1, addr))
    }
}

fn check_legality(f: &ScenarioFile) -> Result<(), LoadError> {
    if f.dns_policy != DnsPolicy::Honest {
        return Err(illegal("dns-policy", "only the honest DNS policy is supported"));
    }
    if f.scheduler.max_steps == 0 {
        return Err(illegal("max-steps", "max_steps must be at least 1"));
    }
    let as_names: HashSet<&str> = f.authservers.iter().map(|a| a.name.as_str()).collect();
    let att_domains: HashSet<&str> = f.attacker.domains.iter().map(String::as_str).collect();
    let rs_names: HashSet<&str> = f.resourceservers.iter().map(|r| r.name.as_str()).collect();
    let browsers: HashSet<&str> = f.browsers.iter().map(|b| b.name.as_str()).collect();
    let mut domains = HashSet::new();
    for d in f
        .clients
        .iter()
        .map(|c| &c.domain)
        .chain(f.authservers.iter().map(|a| &a.domain))
        .chain(f.resourceservers.iter().map(|r| &r.domain))
        .chain(f.attacker.domains.iter())
    {
        if !domains.insert(d.as_str()) {
            return Err(illegal("unique-domains", format!("domain {d:?} is assigned twice")));
        }
    }
    let mut uri_owner: HashMap<String, String> = HashMap::new();
    for c in &f.clients {
        for r in &c.registrations {
            let who = format!("client {} at {}", c.name, r.issuer);
            if !as_names.contains(r.issuer.as_str()) && !att_domains.contains(r.issuer.as_str()) {
                return Err(illegal("unknown-reference", format!("{who}: issuer is neither an AS nor an attacker domain")));
            }
            for rs in &r.resource_servers {
                if !rs_names.contains(rs.as_str()) {
                    return Err(illegal("unknown-reference", format!("{who}: unknown resource server {rs:?}")));
                }
            }
            if r.resource_servers.is_empty() || r.redirect_uris.is_empty() {
                return Err(illegal("registration", format!("{who}: needs a resource server and a redirect URI")));
            }
            let binding = r.binding();
            match (r.profile, r.client_type) {
                (Profile::R, ClientType::ConfOautb) => {
                    return Err(illegal("r-client-types", format!("{who}: r clients are pub, conf_JWS or conf_MTLS")))
                }
                (Profile::Rw, ClientType::Pub) if binding != Binding::Oautb => {
                    return Err(illegal("rw-pub-requires-oautb", format!("{who}: a public rw client must use OAUTB")))
                }
                (Profile::Rw, ClientType::Pub) if !r.is_app => {
                    return Err(illegal("rw-pub-requires-oautb", format!("{who}: a public rw client is an app using OAUTB")))
                }
                (Profile::Rw, ClientType::ConfJws) => {
                    return Err(illegal(
                        "rw-confidential-requires-oautb-or-mtls",
                        format!("{who}: confidential rw clients use conf_OAUTB or conf_MTLS"),
                    ))
                }
                _ => {}
            }
            let expected = match (r.profile, r.client_type) {
                (_, ClientType::ConfMtls) => Binding::Mtls,
                (_, ClientType::ConfOautb) | (Profile::Rw, ClientType::Pub) => Binding::Oautb,
                _ => Binding::None,
            };
            if binding != expected {
                return Err(illegal(
                    "binding-consistency",
                    format!("{who}: client type {} implies binding {expected:?}", r.client_type.as_str()),
                ));
            }
            for u in &r.redirect_uris {
                let url = parse_url(u)?;
                if url.host != Term::dom(&c.domain) {
                    return Err(illegal("redirect-uri-host", format!("{who}: {u} is not on {}", c.domain)));
                }
                if let Some(prev) = uri_owner.insert(u.clone(), r.issuer.clone()) {
                    if prev != r.issuer {
                        return Err(illegal(
                            "redirect-uri-disjointness",
                            format!("{u} is registered at both {prev} and {}", r.issuer),
                        ));
                    }
                }
            }
            if !c.jwks_cache.contains(&r.issuer) {
                return Err(illegal("jwks-cache", format!("{who}: no jwks_cache entry for the issuer")));
            }
        }
        for j in &c.jwks_cache {
            if !as_names.contains(j.as_str()) && !att_domains.contains(j.as_str()) {
                return Err(illegal("unknown-reference", format!("client {}: jwks_cache names unknown issuer {j:?}", c.name)));
            }
        }
    }
    for a in &f.authservers {
        for i in &a.identities {
            if !browsers.contains(i.owner.as_str()) {
                return Err(illegal("unknown-reference", format!("identity {}: unknown owner {:?}", i.name, i.owner)));
            }
        }
    }
    for r in &f.resourceservers {
        if !as_names.contains(r.auth_server.as_str()) {
            return Err(illegal("unknown-reference", format!("resource server {}: unknown AS {:?}", r.name, r.auth_server)));
        }
    }
    for i in &f.attacker.identities {
        if !as_names.contains(i.auth_server.as_str()) {
            return Err(illegal("unknown-reference", format!("attacker identity {}: unknown AS", i.name)));
        }
    }
    Ok(())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, LoadError> {
        let file: ScenarioFile = serde_json::from_str(text)?;
        Scenario::build(file)
    }

    pub fn load(path: &Path) -> Result<Scenario, LoadError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
        Scenario::from_json(&text)
    }

    pub fn bundled(name: &str) -> Result<Scenario, LoadError> {
        let text = bundled_text(name).ok_or_else(|| LoadError::UnknownBundled(name.to_string()))?;
        Scenario::from_json(text)
    }

    pub fn build(file: ScenarioFile) -> Result<Scenario, LoadError> {
        if file.schema != SCHEMA {
            return Err(LoadError::Schema(file.schema.clone()));
        }
        check_legality(&file)?;
        let f = &file;
        let mut b = Builder { next_nonce: 1, key_mapping: HashMap::new(), dns: HashMap::new(), procs: Vec::new() };

        let as_domain: HashMap<&str, &str> = f.authservers.iter().map(|a| (a.name.as_str(), a.domain.as_str())).collect();
        let rs_domain: HashMap<&str, &str> =
            f.resourceservers.iter().map(|r| (r.name.as_str(), r.domain.as_str())).collect();
        let issuer_domain = |issuer: &str| as_domain.get(issuer).copied().unwrap_or(issuer).to_string();

        // processes and addresses
        let mut browser_addrs = Vec::new();
        for br in &f.browsers {
            browser_addrs.push(b.add_proc(&br.name, ProcKind::Browser, None)?);
        }
        let mut client_keys = Vec::new();
        for c in &f.clients {
            let (_, addr) = b.add_proc(&c.name, ProcKind::Client, Some(&c.domain))?;
            let k = b.tls_key(&c.domain, &addr);
            client_keys.push((addr, k));
        }
        let mut as_keys = Vec::new();
        for a in &f.authservers {
            let (_, addr) = b.add_proc(&a.name, ProcKind::As, Some(&a.domain))?;
            let k = b.tls_key(&a.domain, &addr);
            as_keys.push((addr, k));
        }
        let mut rs_keys = Vec::new();
        for r in &f.resourceservers {
            let (_, addr) = b.add_proc(&r.name, ProcKind::Rs, Some(&r.domain))?;
            let k = b.tls_key(&r.domain, &addr);
            rs_keys.push((addr, k));
        }
        let attacker_addr = Term::addr("attacker");
        let mut att_tls = Vec::new();
        for d in &f.attacker.domains {
            let k = b.tls_key(d, &attacker_addr);
            att_tls.push((Term::dom(d), k));
        }
        let proc_index = |name: &str, procs: &[ProcInfo]| procs.iter().position(|p| p.name == name);

        // identities
        let mut identity_owner = HashMap::new();
        let mut browser_ids: Vec<Vec<(Term, Term)>> = vec![Vec::new(); f.browsers.len()];
        let mut as_ids: Vec<Vec<(Term, Term)>> = vec![Vec::new(); f.authservers.len()];
        for (ai, a) in f.authservers.iter().enumerate() {
            for i in &a.identities {
                let id = identity(&i.name, &a.domain);
                let pw = b.fresh(&format!("pw:{}", i.name));
                let owner = f.browsers.iter().position(|x| x.name == i.owner).expect("checked owner");
                identity_owner.insert(id.clone(), owner);
                browser_ids[owner].push((id.clone(), pw.clone()));
                as_ids[ai].push((id, pw));
            }
        }
        let mut att_ids = Vec::new();
        for i in &f.attacker.identities {
            let ai = f.authservers.iter().position(|a| a.name == i.auth_server).expect("checked AS");
            let id = identity(&i.name, &f.authservers[ai].domain);
            let pw = b.fresh(&format!("pw:{}", i.name));
            as_ids[ai].push((id.clone(), pw.clone()));
            att_ids.push((id, pw));
        }

        // signing keys and client credentials
        let as_jwk: Vec<Term> = f.authservers.iter().map(|a| b.fresh(&format!("jwk:{}", a.name))).collect();
        let att_sign = b.fresh("jwk:attacker");
        let mut jwks_of: HashMap<String, Term> = HashMap::new();
        for (a, k) in f.authservers.iter().zip(&as_jwk) {
            jwks_of.insert(a.name.clone(), Term::pub_key(k.clone()));
        }
        for d in &f.attacker.domains {
            jwks_of.insert(d.clone(), Term::pub_key(att_sign.clone()));
        }
        let req_sig: Vec<Term> = f.clients.iter().map(|c| b.fresh(&format!("reqsig:{}", c.name))).collect();

        let mut registrations = HashMap::new();
        let mut client_by_id = HashMap::new();
        let mut as_clients: Vec<Vec<ClientInfo>> = vec![Vec::new(); f.authservers.len()];
        let mut clients = Vec::new();
        for (ci, c) in f.clients.iter().enumerate() {
            let p = proc_index(&c.name, &b.procs).expect("client proc");
            let mut regs = Vec::new();
            for r in &c.registrations {
                let dom = issuer_domain(&r.issuer);
                let issuer = Term::dom(&dom);
                let secret = if r.client_type == ClientType::Pub { Term::empty() } else { b.fresh(&format!("secret:{}", r.client_id)) };
                let redirect_uris = r.redirect_uris.iter().map(|u| parse_url(u)).collect::<Result<Vec<_>, _>>()?;
                let client_id = Term::atom(&r.client_id);
                regs.push(Registration {
                    issuer: issuer.clone(),
                    client_id: client_id.clone(),
                    client_type: r.client_type,
                    profile: r.profile,
                    is_app: r.is_app,
                    client_secret: secret.clone(),
                    auth_ep: Url::https(&dom, "/auth"),
                    token_ep: Url::https(&dom, "/token"),
                    redirect_uris: redirect_uris.clone(),
                    resource_servers: r.resource_servers.iter().map(|n| Term::dom(rs_domain[n.as_str()])).collect(),
                });
                registrations.insert(
                    (p, issuer.clone()),
                    RegInfo { client_id: client_id.clone(), profile: r.profile, client_type: r.client_type, is_app: r.is_app },
                );
                client_by_id.insert((issuer.clone(), client_id.clone()), p);
                if let Some(ai) = f.authservers.iter().position(|a| a.name == r.issuer) {
                    let mtls_key = if r.client_type == ClientType::ConfMtls {
                        b.key_mapping[&Term::dom(&c.domain)].clone()
                    } else {
                        Term::empty()
                    };
                    as_clients[ai].push(ClientInfo {
                        client_id,
                        profile: r.profile,
                        client_type: r.client_type,
                        is_app: r.is_app,
                        client_secret: secret,
                        redirect_uris: redirect_uris.iter().map(Url::to_term).collect(),
                        jws_key: Term::pub_key(req_sig[ci].clone()),
                        mtls_key,
                    });
                }
            }
            let issuers: Vec<Term> = regs.iter().map(|r| r.issuer.clone()).collect();
            let mut issuer_cache = Vec::new();
            let known_ids = as_ids.iter().flatten().map(|(i, _)| i.clone()).chain(recipe_identities(f)?);
            for id in known_ids {
                if issuers.contains(&id.proj(2)) && !issuer_cache.iter().any(|(i, _)| *i == id) {
                    issuer_cache.push((id.clone(), id.proj(2)));
                }
            }
            let jwks_cache = c
                .jwks_cache
                .iter()
                .map(|j| (Term::dom(&issuer_domain(j)), jwks_of[j].clone()))
                .collect();
            let (addr, k) = client_keys[ci].clone();
            clients.push(Client {
                core: ServerCore::new(addr, vec![(Term::dom(&c.domain), k)]),
                sessions: Vec::new(),
                issuer_cache,
                registrations: regs,
                jwks_cache,
                oautb_ekm: Vec::new(),
                auth_req_sig_key: req_sig[ci].clone(),
                token_bindings: Vec::new(),
            });
        }

        let mut procs: Vec<Proc> = Vec::new();
        for (bi, br) in f.browsers.iter().enumerate() {
            let urlbar = br.urlbar.iter().map(|u| parse_url(u)).collect::<Result<Vec<_>, _>>()?;
            let ids = browser_ids[bi].iter().map(|(i, _)| i.clone()).collect();
            procs.push(Proc::Browser(Browser::new(
                browser_addrs[bi].1.clone(),
                ids,
                browser_ids[bi].clone(),
                urlbar,
                br.urlbar_budget,
            )));
        }
        procs.extend(clients.into_iter().map(Proc::Client));
        let mut as_by_domain = HashMap::new();
        for (ai, a) in f.authservers.iter().enumerate() {
            let (addr, k) = as_keys[ai].clone();
            as_by_domain.insert(Term::dom(&a.domain), proc_index(&a.name, &b.procs).expect("AS proc"));
            procs.push(Proc::As(AuthServer {
                core: ServerCore::new(addr, vec![(Term::dom(&a.domain), k)]),
                clients: std::mem::take(&mut as_clients[ai]),
                identities: as_ids[ai].clone(),
                records: Vec::new(),
                jwk: as_jwk[ai].clone(),
                oautb_ekm: Vec::new(),
                mtls_requests: Vec::new(),
                access_tokens: Vec::new(),
            }));
        }
        for (ri, r) in f.resourceservers.iter().enumerate() {
            let (addr, k) = rs_keys[ri].clone();
            let ai = f.authservers.iter().position(|a| a.name == r.auth_server).expect("checked AS");
            let ids = match &r.identities {
                Some(names) => names.iter().map(|n| identity(n, &f.authservers[ai].domain)).collect(),
                None => as_ids[ai].iter().map(|(i, _)| i.clone()).collect(),
            };
            procs.push(Proc::Rs(ResourceServer {
                core: ServerCore::new(addr, vec![(Term::dom(&r.domain), k)]),
                ids,
                auth_serv: Term::dom(&f.authservers[ai].domain),
                mtls_requests: Vec::new(),
                oautb_ekm: Vec::new(),
            }));
        }

        let recipes = f
            .attacker
            .recipes
            .iter()
            .map(|r| resolve_recipe(f, r, &b.procs))
            .collect::<Result<Vec<_>, _>>()?;
        let endpoints = f.attacker.endpoints.iter().map(|u| parse_url(u)).collect::<Result<Vec<_>, _>>()?;
        for e in &endpoints {
            if !att_tls.iter().any(|(d, _)| *d == e.host) {
                return Err(illegal("unknown-reference", "attacker endpoints must be on attacker domains"));
            }
        }
        let setup = AttackerSetup {
            mode: f.attacker.mode,
            domains: f.attacker.domains.iter().map(|d| Term::dom(d)).collect(),
            tls_keys: att_tls.clone(),
            signing_key: att_sign.clone(),
            identities: att_ids.clone(),
            recipes,
            generic_budget: f.attacker.generic_budget.unwrap_or(SEEDED_REPLAY_BUDGET),
        };

        let mut initial_knowledge: Vec<Term> = Vec::new();
        let mut pubs: Vec<(&Term, &Term)> = b.key_mapping.iter().collect();
        pubs.sort_by_key(|(d, _)| d.render());
        initial_knowledge.extend(pubs.into_iter().map(|(_, k)| k.clone()));
        let mut jw: Vec<&Term> = jwks_of.values().collect();
        jw.sort_by_key(|t| t.render());
        jw.dedup();
        initial_knowledge.extend(jw.into_iter().cloned());
        initial_knowledge.extend(req_sig.iter().map(|k| Term::pub_key(k.clone())));
        initial_knowledge.extend(att_tls.iter().map(|(_, k)| k.clone()));
        initial_knowledge.push(att_sign);
        for (i, p) in &att_ids {
            initial_knowledge.push(i.clone());
            initial_knowledge.push(p.clone());
        }

        let world = World {
            key_mapping: b.key_mapping.clone(),
            dns: b.dns.clone(),
            dns_addr: Term::addr("dns"),
            leak_addr: Term::addr("leak"),
            attacker_addr,
            honest_dns: true,
            fixes: f.fixes,
            leaks: f.leaks,
            procs: b.procs.clone(),
            addr_index: b.procs.iter().enumerate().map(|(i, p)| (p.addr.clone(), i)).collect(),
            identity_owner,
            as_by_domain,
            attacker_as_domains: f.attacker.domains.iter().map(|d| Term::dom(d)).collect(),
            registrations,
            client_by_id,
            attacker_endpoints: endpoints,
            attacker: setup,
        };
        let kb = KnowledgeBase::from_terms(initial_knowledge.iter().cloned());
        let state = AttackerState::new(kb, &world.attacker);
        let mut init = Config::new(procs, b.next_nonce, state);
        let mut corrupted = Vec::new();
        for name in &f.corrupt {
            let p = world
                .proc_named(name)
                .ok_or_else(|| illegal("unknown-reference", format!("cannot corrupt unknown process {name:?}")))?;
            let (next, learned) = corrupt(&world, &init, p).map_err(|e| illegal("corrupt", e))?;
            init = next;
            initial_knowledge.extend(learned);
            corrupted.push(name.clone());
        }
        Ok(Scenario { file, world, init, initial_knowledge, corrupted })
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn honest_flags(&self) -> Vec<bool> {
        (0..self.init.procs.len()).map(|p| self.init.honest(p)).collect()
    }

    /// The initial configuration with the replay budget for `mode`, unless
    /// the scenario pins one.
    pub fn init_for(&self, mode: Mode) -> Config {
        let mut cfg = self.init.clone();
        if self.file.attacker.generic_budget.is_none() {
            let budget = if mode == Mode::Exhaustive { EXHAUSTIVE_REPLAY_BUDGET } else { SEEDED_REPLAY_BUDGET };
            Arc::make_mut(&mut cfg.attacker).replay_budget = budget;
        }
        cfg
    }

    fn report(&self, mode: Mode, seed: Option<u64>, trace: Trace) -> RunReport {
        let verdicts = check_trace(&self.world, &trace, &self.honest_flags());
        let (logged_in, resources_obtained) = count_facts(&trace);
        RunReport {
            scenario: self.name().to_string(),
            mode,
            seed,
            steps: trace.steps.len(),
            verdicts,
            logged_in,
            resources_obtained,
            trace,
        }
    }

    fn trace(&self, mode: Mode, seed: Option<u64>) -> Trace {
        empty_trace(self.name(), mode, seed, &self.initial_knowledge, self.corrupted.clone())
    }

    pub fn run_seeded(&self, seed: u64, max_steps: usize) -> Result<RunReport, RunError> {
        let opts = RunOptions { max_steps, track_digests: true };
        let out = run_seeded(&self.world, &self.init_for(Mode::Seeded), self.trace(Mode::Seeded, Some(seed)), seed, &opts)?;
        Ok(self.report(Mode::Seeded, Some(seed), out.trace))
    }

    pub fn run_guided(&self, max_steps: usize) -> Result<RunReport, RunError> {
        let opts = RunOptions { max_steps, track_digests: true };
        let init = self.init_for(Mode::Guided);
        let out = run_guided(&self.world, &init, self.trace(Mode::Guided, None), &self.file.scheduler.prefer, &opts)?;
        Ok(self.report(Mode::Guided, None, out.trace))
    }

    /// Runs the scheduler named in the file.
    pub fn run_default(&self, seed: Option<u64>, max_steps: Option<usize>) -> Result<RunReport, RunError> {
        let steps = max_steps.unwrap_or(self.file.scheduler.max_steps);
        match self.file.scheduler.mode {
            Mode::Guided if seed.is_none() => self.run_guided(steps),
            _ => self.run_seeded(seed.unwrap_or(self.file.scheduler.seed), steps),
        }
    }

    pub fn explore(&self, depth: usize, node_limit: usize, watch: &[Property]) -> Result<ExploreReport, StepError> {
        let opts = ExploreOptions { depth, node_limit, watch: watch.to_vec() };
        explore(&self.world, &self.init_for(Mode::Exhaustive), &opts)
    }

    /// Re-executes an exploration witness and evaluates the monitors over it.
    pub fn witness_trace(&self, path: &[(crate::runtime::Action, Vec<usize>)]) -> Result<RunReport, StepError> {
        let init = self.init_for(Mode::Exhaustive);
        let mut cfg = init.clone();
        let mut trace = self.trace(Mode::Exhaustive, None);
        for (i, (a, script)) in path.iter().enumerate() {
            let mut ch = crate::runtime::choice::ScriptChooser::new(script.clone());
            let (next, rec) = crate::runtime::step(&self.world, &cfg, a, i, &mut ch, true)?;
            trace.steps.push(rec);
            cfg = next;
        }
        Ok(self.report(Mode::Exhaustive, None, trace))
    }
}

fn recipe_identities(f: &ScenarioFile) -> Result<Vec<Term>, LoadError> {
    let mut out = Vec::new();
    for r in &f.attacker.recipes {
        if let Some(i) = r.params.get("identity") {
            out.push(parse_identity(i)?);
        }
    }
    Ok(out)
}

fn resolve_recipe(f: &ScenarioFile, r: &RecipeSpec, procs: &[ProcInfo]) -> Result<Recipe, LoadError> {
    let param = |k: &str| {
        r.params.get(k).cloned().ok_or_else(|| illegal("recipe", format!("recipe {} needs parameter {k:?}", r.id)))
    };
    let client_proc = |name: &str| {
        procs
            .iter()
            .position(|p| p.name == name && p.kind == ProcKind::Client)
            .ok_or_else(|| illegal("unknown-reference", format!("recipe {}: unknown client {name:?}", r.id)))
    };
    let page = || -> Result<Term, LoadError> {
        let d = param("page")?;
        if !f.attacker.domains.contains(&d) {
            return Err(illegal("recipe", format!("recipe {}: page {d:?} is not an attacker domain", r.id)));
        }
        Ok(Term::dom(&d))
    };
    match r.id.as_str() {
        "cuckoo" => Ok(Recipe::Cuckoo { client: client_proc(&param("client")?)?, identity: parse_identity(&param("identity")?)? }),
        "idtoken-replay" => {
            Ok(Recipe::IdTokenReplay { client: client_proc(&param("client")?)?, identity: parse_identity(&param("identity")?)? })
        }
        "authreq-leak" => Ok(Recipe::AuthReqLeak {
            client: client_proc(&param("client")?)?,
            identity: parse_identity(&param("identity")?)?,
            page: page()?,
        }),
        "pkce-chosen-challenge" => {
            let cname = param("client")?;
            let asname = param("auth_server")?;
            let c = f
                .clients
                .iter()
                .find(|c| c.name == cname)
                .ok_or_else(|| illegal("unknown-reference", format!("recipe {}: unknown client {cname:?}", r.id)))?;
            let reg = c
                .registrations
                .iter()
                .find(|g| g.issuer == asname)
                .ok_or_else(|| illegal("unknown-reference", format!("recipe {}: {cname} is not registered at {asname}", r.id)))?;
            let a = f.authservers.iter().find(|a| a.name == asname).expect("checked issuer");
            let rs = match r.params.get("resource_server") {
                Some(n) => n.clone(),
                None => reg.resource_servers[0].clone(),
            };
            let rs = f
                .resourceservers
                .iter()
                .find(|x| x.name == rs)
                .ok_or_else(|| illegal("unknown-reference", format!("recipe {}: unknown resource server", r.id)))?;
            Ok(Recipe::PkceChosenChallenge {
                client_id: Term::atom(&reg.client_id),
                auth_server: Term::dom(&a.domain),
                redirect_uri: parse_url(&reg.redirect_uris[0])?.to_term(),
                resource_server: Term::dom(&rs.domain),
                page: page()?,
            })
        }
        other => Err(illegal("recipe", format!("unknown recipe {other:?}"))),
    }
}

macro_rules! bundle {
    ($($dir:literal / $name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../scenarios/", $dir, "/", $name, ".scenario")))),*]
    };
}

/// Scenario files shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = bundle!(
    "legal" / "honest-r-pub-app",
    "legal" / "honest-r-jws-web",
    "legal" / "honest-r-mtls-web",
    "legal" / "honest-rw-pub-app",
    "legal" / "honest-rw-mtls-app",
    "legal" / "honest-rw-mtls-web",
    "legal" / "honest-rw-oautb-app",
    "legal" / "honest-rw-oautb",
    "attacks" / "attack-cuckoo",
    "attacks" / "attack-idtoken-replay",
    "attacks" / "attack-pkce-chosen-challenge",
    "attacks" / "attack-authreq-leak",
    "attacks" / "attack-authreq-leak-oautb",
);

/// The eight legal configurations of the profile matrix.
pub const LEGAL_FIXTURES: [&str; 8] = [
    "honest-r-pub-app",
    "honest-r-jws-web",
    "honest-r-mtls-web",
    "honest-rw-pub-app",
    "honest-rw-mtls-app",
    "honest-rw-mtls-web",
    "honest-rw-oautb-app",
    "honest-rw-oautb",
];

pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// The packaged attacks: name, scenario, the fix that blocks it, and the
/// properties it breaks.
pub struct AttackSpec {
    pub name: &'static str,
    pub scenario: &'static str,
    pub fix: Option<&'static str>,
    pub targets: &'static [Property],
}

pub const SI_PROPERTIES: [Property; 4] = [
    Property::SessionIntegrityAuthn,
    Property::SessionIntegrityAuthz,
    Property::SessionIntegrityAuthnExt,
    Property::SessionIntegrityAuthzExt,
];

/// Properties expected to hold in every fixed configuration.
pub const CORE_PROPERTIES: [Property; 4] = [
    Property::Authorization,
    Property::Authentication,
    Property::SessionIntegrityAuthn,
    Property::SessionIntegrityAuthz,
];

pub const ATTACKS: [AttackSpec; 4] = [
    AttackSpec {
        name: "cuckoo",
        scenario: "attack-cuckoo",
        fix: Some("fixAtIss"),
        targets: &[Property::Authorization],
    },
    AttackSpec {
        name: "idtoken-replay",
        scenario: "attack-idtoken-replay",
        fix: Some("fixAtHash"),
        targets: &[Property::Authorization],
    },
    AttackSpec {
        name: "pkce-chosen-challenge",
        scenario: "attack-pkce-chosen-challenge",
        fix: Some("fixSignedRequestJws"),
        targets: &[Property::Authorization],
    },
    AttackSpec { name: "authreq-leak", scenario: "attack-authreq-leak", fix: None, targets: &SI_PROPERTIES },
];

pub fn attack(name: &str) -> Option<&'static AttackSpec> {
    ATTACKS.iter().find(|a| a.name == name)
}

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("unknown attack {0:?}")]
    Unknown(String),
    #[error("unknown fix {0:?}")]
    UnknownFix(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Run(#[from] RunError),
}

#[derive(Debug, Serialize)]
pub struct AttackReport {
    pub attack: String,
    pub fixes: Fixes,
    pub reproduced: bool,
    #[serde(flatten)]
    pub run: RunReport,
}

/// Loads the attack's scenario with fix overrides applied.
pub fn attack_scenario(name: &str, fixes: &[(String, bool)]) -> Result<Scenario, AttackError> {
    let spec = attack(name).ok_or_else(|| AttackError::Unknown(name.to_string()))?;
    let mut file: ScenarioFile = serde_json::from_str(bundled_text(spec.scenario).expect("bundled attack"))
        .map_err(LoadError::from)?;
    for (k, on) in fixes {
        if !file.fixes.set(k, *on) {
            return Err(AttackError::UnknownFix(k.clone()));
        }
    }
    Ok(Scenario::build(file)?)
}

/// Runs a packaged attack under the guided scheduler.
pub fn run_attack(name: &str, fixes: &[(String, bool)]) -> Result<AttackReport, AttackError> {
    let spec = attack(name).ok_or_else(|| AttackError::Unknown(name.to_string()))?;
    let sc = attack_scenario(name, fixes)?;
    let mut run = sc.run_guided(sc.file.scheduler.max_steps)?;
    let first = run
        .verdicts
        .iter()
        .filter(|v| spec.targets.contains(&v.property))
        .filter_map(|v| v.witness.as_ref().map(|w| w.step))
        .min();
    if let Some(step) = first {
        // keep only the prefix up to the first target violation
        let mut trace = run.trace;
        trace.steps.truncate(step + 1);
        run = sc.report(Mode::Guided, None, trace);
    }
    Ok(AttackReport { attack: name.to_string(), fixes: sc.world.fixes, reproduced: first.is_some(), run })
}

/// A legal fixture with the authorization request leak recipe attached to
/// its first client, for the configuration ablation.
pub fn with_authreq_leak(fixture: &str) -> Result<Scenario, LoadError> {
    let mut file = bundled_file(fixture)?;
    let client = file.clients.first().ok_or_else(|| illegal("recipe", "fixture has no client"))?.name.clone();
    let att = file.attacker.identities.first().ok_or_else(|| illegal("recipe", "fixture has no attacker identity"))?;
    let as_domain = file
        .authservers
        .iter()
        .find(|a| a.name == att.auth_server)
        .map(|a| a.domain.clone())
        .ok_or_else(|| illegal("recipe", "attacker identity AS missing"))?;
    let page = file.attacker.domains.first().ok_or_else(|| illegal("recipe", "fixture has no attacker domain"))?.clone();
    let honest = file
        .authservers
        .iter()
        .flat_map(|a| a.identities.iter().map(move |i| identity(&i.name, &a.domain)))
        .next()
        .ok_or_else(|| illegal("recipe", "fixture has no honest identity"))?;
    file.attacker.mode = AttackerMode::Active;
    file.attacker.recipes = vec![RecipeSpec {
        id: "authreq-leak".into(),
        params: BTreeMap::from([
            ("client".to_string(), client.clone()),
            ("identity".to_string(), format!("{}@{}", att.name, as_domain)),
            ("page".to_string(), page.clone()),
        ]),
    }];
    let client_dom = file.clients[0].domain.clone();
    file.scheduler.mode = Mode::Guided;
    file.scheduler.prefer = BTreeMap::from([
        (
            "browser.action".to_string(),
            vec![
                format!("urlbar:#{client_dom}/"),
                "script:script_client_index".to_string(),
                format!("urlbar:#{page}/"),
            ],
        ),
        ("identity".to_string(), vec![honest.render()]),
        ("response_type".to_string(), vec!["[JARM_code]".to_string()]),
        ("scope".to_string(), vec!["[openid]".to_string()]),
        ("use_access_token_now".to_string(), vec!["false".to_string()]),
        ("misconfigured_token_ep".to_string(), vec!["false".to_string()]),
    ]);
    file.name = format!("{}+authreq-leak", file.name);
    Scenario::build(file)
}

fn bundled_file(name: &str) -> Result<ScenarioFile, LoadError> {
    let text = bundled_text(name).ok_or_else(|| LoadError::UnknownBundled(name.to_string()))?;
    Ok(serde_json::from_str(text)?)
}

/// A bundled scenario whose attacker only records and forwards.
pub fn with_passive_attacker(fixture: &str) -> Result<Scenario, LoadError> {
    let mut file = bundled_file(fixture)?;
    file.attacker.mode = AttackerMode::Passive;
    file.attacker.recipes.clear();
    file.name = format!("{}+passive", file.name);
    Scenario::build(file)
}

#[derive(Debug, Default, Serialize)]
pub struct CampaignReport {
    pub scenarios: Vec<String>,
    pub seeds: u64,
    pub runs: usize,
    pub violations: Vec<CampaignViolation>,
    /// Runs in which each property had at least one occasion to fail.
    pub exercised: BTreeMap<String, usize>,
    pub logged_in_runs: usize,
    pub resource_runs: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct CampaignViolation {
    pub scenario: String,
    pub seed: u64,
    pub violation: Violation,
}

fn exercised(trace: &Trace) -> Vec<Property> {
    let mut out = Vec::new();
    for f in trace.steps.iter().flat_map(|s| &s.facts) {
        let ps: &[Property] = match f {
            Fact::ResourceIssued { .. } => &[Property::Authorization],
            Fact::LoggedIn { ssid: Some(_), .. } => {
                &[Property::Authentication, Property::SessionIntegrityAuthn, Property::SessionIntegrityAuthnExt]
            }
            Fact::LoggedIn { .. } => &[Property::SessionIntegrityAuthn, Property::SessionIntegrityAuthnExt],
            Fact::ResourceObtained { .. } => &[Property::SessionIntegrityAuthz, Property::SessionIntegrityAuthzExt],
            _ => &[],
        };
        for p in ps {
            if !out.contains(p) {
                out.push(*p);
            }
        }
    }
    out
}

/// Seeded runs `0..seeds` over every scenario, spread over the available
/// cores; results are merged in scenario and seed order.
pub fn campaign(scenarios: &[Scenario], seeds: u64, max_steps: Option<usize>) -> CampaignReport {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1) as u64;
    let mut report = CampaignReport {
        scenarios: scenarios.iter().map(|s| s.name().to_string()).collect(),
        seeds,
        ..CampaignReport::default()
    };
    for sc in scenarios {
        let steps = max_steps.unwrap_or(sc.file.scheduler.max_steps);
        let chunks: Vec<Vec<(u64, Result<RunReport, RunError>)>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    s.spawn(move || {
                        (0..seeds).filter(|seed| seed % threads == t).map(|seed| (seed, sc.run_seeded(seed, steps))).collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("campaign worker")).collect()
        });
        let mut results: Vec<(u64, Result<RunReport, RunError>)> = chunks.into_iter().flatten().collect();
        results.sort_by_key(|(seed, _)| *seed);
        for (seed, r) in results {
            report.runs += 1;
            match r {
                Ok(run) => {
                    for p in exercised(&run.trace) {
                        *report.exercised.entry(p.id().to_string()).or_default() += 1;
                    }
                    report.logged_in_runs += (run.logged_in > 0) as usize;
                    report.resource_runs += (run.resources_obtained > 0) as usize;
                    for v in run.verdicts.iter().filter_map(|v| v.witness.clone()) {
                        report.violations.push(CampaignViolation { scenario: sc.name().to_string(), seed, violation: v });
                    }
                }
                Err(e) => report.errors.push(format!("{} seed {seed}: {e}", sc.name())),
            }
        }
    }
    report
}
