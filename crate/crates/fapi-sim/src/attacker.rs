//! Network attacker: records every message, owns the leak address and its
//! own domains, and acts through scripted recipes and bounded replay.

use crate::client::{secure_name, SESSION_COOKIE};
use crate::https::{dict_union, ekm, reply, tb_message, Request, Response, Url, GET, HTTPS, POST};
use crate::runtime::{guard, nofail, Config, Ctx, Event, Flow, Halt, OrHalt, World};
use crate::terms::{dec_a, dec_s, KnowledgeBase, Term};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttackerMode {
    #[default]
    Active,
    Passive,
}

/// Scripted attack strategies, resolved against a loaded scenario.
#[derive(Clone, Debug)]
pub enum Recipe {
    /// Malicious AS returns a phished access token to an honest client.
    Cuckoo { client: usize, identity: Term },
    /// Phished access token plus a replayed id token at a misconfigured
    /// token endpoint.
    IdTokenReplay { client: usize, identity: Term },
    /// Attacker-chosen PKCE challenge injected through the honest browser.
    PkceChosenChallenge { client_id: Term, auth_server: Term, redirect_uri: Term, resource_server: Term, page: Term },
    /// Leaked authorization request completed with the attacker's identity.
    AuthReqLeak { client: usize, identity: Term, page: Term },
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Cuckoo { .. } => "cuckoo",
            Recipe::IdTokenReplay { .. } => "idtoken-replay",
            Recipe::PkceChosenChallenge { .. } => "pkce-chosen-challenge",
            Recipe::AuthReqLeak { .. } => "authreq-leak",
        }
    }

    fn rules(&self) -> &'static [&'static str] {
        match self {
            Recipe::Cuckoo { .. } => &["start", "redirect", "prepare", "token"],
            Recipe::IdTokenReplay { .. } => &["start", "login", "redirect", "prepare", "token"],
            Recipe::PkceChosenChallenge { .. } => &["page", "token", "resource"],
            Recipe::AuthReqLeak { .. } => &["tb_prepare", "login", "stash", "page"],
        }
    }
}

/// Rules that may fire once per inbox item instead of once per recipe.
fn repeatable(rule: &str) -> bool {
    rule == "prepare"
}

#[derive(Clone, Debug, Default)]
pub struct AttackerSetup {
    pub mode: AttackerMode,
    pub domains: Vec<Term>,
    pub tls_keys: Vec<(Term, Term)>,
    pub signing_key: Term,
    pub identities: Vec<(Term, Term)>,
    pub recipes: Vec<Recipe>,
    pub generic_budget: usize,
}

impl AttackerSetup {
    fn password(&self, identity: &Term) -> Result<Term, Halt> {
        self.identities.iter().find(|(i, _)| i == identity).map(|(_, p)| p.clone()).or_halt()
    }

    /// Decrypts a request addressed to one of the attacker's domains.
    pub fn open_request(&self, msg: &Term) -> Option<(Request, Term)> {
        self.tls_keys.iter().find_map(|(dom, k)| {
            let (req, key) = dec_a(msg, k).as_pair().map(|(a, b)| (a.clone(), b.clone()))?;
            let r = Request::from_term(&req)?;
            (r.host == *dom).then_some((r, key))
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct AttackerState {
    pub kb: KnowledgeBase,
    /// Events addressed to the attacker, the leak address, DNS or
    /// corrupted processes.
    pub inbox: Vec<Event>,
    /// Copies of events delivered through the network pool.
    pub observed: Vec<Event>,
    /// Nonces the attacker drew itself.
    pub learned: Vec<Term>,
    pub vars: Vec<BTreeMap<String, Term>>,
    pub fired: BTreeSet<(usize, String, Option<usize>)>,
    pub replays: usize,
    pub replay_budget: usize,
}

impl AttackerState {
    pub fn new(kb: KnowledgeBase, setup: &AttackerSetup) -> Self {
        AttackerState {
            kb,
            vars: vec![BTreeMap::new(); setup.recipes.len()],
            replay_budget: setup.generic_budget,
            ..AttackerState::default()
        }
    }

    /// Recipe progress and replay count, for configuration digests.
    pub fn progress_term(&self) -> Term {
        let vars = self
            .vars
            .iter()
            .map(|m| Term::seq(m.iter().map(|(k, v)| Term::pair(Term::atom(k), v.clone())).collect()))
            .collect();
        let fired = self
            .fired
            .iter()
            .map(|(r, rule, item)| {
                let item = item.map_or_else(Term::bot, |i| Term::atom(&i.to_string()));
                Term::seq(vec![Term::atom(&r.to_string()), Term::atom(rule), item])
            })
            .collect();
        Term::seq(vec![
            Term::seq(vars),
            Term::seq(fired),
            Term::seq(self.learned.clone()),
            Term::atom(&self.replays.to_string()),
        ])
    }

    fn var(&self, r: usize, name: &str) -> Option<&Term> {
        self.vars.get(r)?.get(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMove {
    Recipe { recipe: usize, rule: String, item: usize },
    Replay { observed: usize },
}

impl AttackMove {
    pub fn describe(&self) -> String {
        match self {
            AttackMove::Recipe { recipe, rule, item } => format!("recipe#{recipe}/{rule} on inbox#{item}"),
            AttackMove::Replay { observed } => format!("replay observed#{observed}"),
        }
    }
}

fn leak_parts<'a>(world: &World, ev: &'a Event) -> Option<&'a [Term]> {
    if ev.receiver != world.leak_addr {
        return None;
    }
    let parts = ev.msg.as_seq()?;
    (parts.first()?.as_atom() == Some("LEAK")).then_some(parts)
}

/// `⟨LEAK, client_id, access_token⟩`
fn token_leak(world: &World, ev: &Event) -> Option<Term> {
    match leak_parts(world, ev)? {
        [_, _, at] if at.as_pair().is_none_or(|(k, _)| k.as_atom() != Some("Location")) => Some(at.clone()),
        _ => None,
    }
}

/// `⟨LEAK, url⟩` from a client starting a login.
fn auth_request_leak(world: &World, ev: &Event) -> Option<Url> {
    match leak_parts(world, ev)? {
        [_, url] => Url::from_term(url),
        _ => None,
    }
}

/// `⟨LEAK, client_id, ⟨Location, url⟩⟩` from an app authorization response.
fn auth_response_leak(world: &World, ev: &Event) -> Option<Url> {
    match leak_parts(world, ev)? {
        [_, _, loc] => {
            let (k, v) = loc.as_pair()?;
            (k.as_atom() == Some("Location")).then(|| Url::from_term(v))?
        }
        _ => None,
    }
}

fn response_to(st: &AttackerState, r: usize, key_var: &str, ev: &Event) -> Option<Response> {
    let k = st.var(r, key_var)?;
    Response::from_term(&dec_s(&ev.msg, k))
}

fn client_id_at(world: &World, client: usize, issuer: &Term) -> Option<Term> {
    world.registrations.get(&(client, issuer.clone())).map(|r| r.client_id.clone())
}

/// Whether `rule` of recipe `r` can act on inbox item `ev`.
fn matches(world: &World, st: &AttackerState, r: usize, rule: &str, ev: &Event) -> bool {
    let setup = &world.attacker;
    let recipe = &setup.recipes[r];
    let request = || setup.open_request(&ev.msg);
    match (recipe, rule) {
        (Recipe::Cuckoo { .. } | Recipe::IdTokenReplay { .. }, "start") => token_leak(world, ev).is_some(),
        (Recipe::Cuckoo { .. }, "redirect") | (Recipe::IdTokenReplay { .. }, "login") => {
            st.var(r, "at").is_some() && response_to(st, r, "k_start", ev).is_some_and(|m| m.status_is(303))
        }
        (Recipe::IdTokenReplay { .. }, "redirect") => {
            response_to(st, r, "k_login", ev).is_some_and(|m| m.status_is(303))
        }
        (_, "prepare") => request().is_some_and(|(m, _)| matches!(m.path_str(), "/MTLS-prepare" | "/OAUTB-prepare")),
        (_, "token") if !matches!(recipe, Recipe::PkceChosenChallenge { .. }) => {
            st.var(r, "sid").is_some() && request().is_some_and(|(m, _)| m.is(POST) && m.body.has("code"))
        }
        (Recipe::PkceChosenChallenge { page, .. }, "page") => request().is_some_and(|(m, _)| m.host == *page),
        (Recipe::PkceChosenChallenge { .. }, "token") => {
            let state = st.var(r, "state");
            state.is_some() && auth_response_leak(world, ev).is_some_and(|u| u.params.get("state") == state)
        }
        (Recipe::PkceChosenChallenge { .. }, "resource") => {
            response_to(st, r, "k_token", ev).is_some_and(|m| m.body.has("access_token"))
        }
        (Recipe::AuthReqLeak { client, identity, .. }, "tb_prepare" | "login") => {
            let oautb = world
                .registrations
                .get(&(*client, identity.proj(2)))
                .is_some_and(|reg| reg.profile == crate::runtime::Profile::Rw && reg.oautb_web());
            let leak = || {
                let cid = client_id_at(world, *client, &identity.proj(2));
                auth_request_leak(world, ev).is_some_and(|u| cid.is_some() && u.params.get("client_id") == cid.as_ref())
            };
            match (rule, oautb) {
                ("tb_prepare", true) | ("login", false) => leak(),
                ("login", true) => response_to(st, r, "k_prep", ev).is_some_and(|m| m.body.has("tb_nonce")),
                _ => false,
            }
        }
        (Recipe::AuthReqLeak { .. }, "stash") => response_to(st, r, "k_login", ev).is_some_and(|m| m.status_is(303)),
        (Recipe::AuthReqLeak { page, .. }, "page") => {
            st.var(r, "redirect").is_some() && request().is_some_and(|(m, _)| m.host == *page)
        }
        _ => false,
    }
}

/// Recipe moves enabled in `cfg`, in recipe and rule order.
pub fn recipe_moves(world: &World, cfg: &Config) -> Vec<AttackMove> {
    let st = &cfg.attacker;
    if world.attacker.mode == AttackerMode::Passive {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (r, recipe) in world.attacker.recipes.iter().enumerate() {
        for rule in recipe.rules() {
            let rep = repeatable(rule);
            if !rep && st.fired.contains(&(r, rule.to_string(), None)) {
                continue;
            }
            for (i, ev) in st.inbox.iter().enumerate() {
                if rep && st.fired.contains(&(r, rule.to_string(), Some(i))) {
                    continue;
                }
                if matches(world, st, r, rule, ev) {
                    out.push(AttackMove::Recipe { recipe: r, rule: rule.to_string(), item: i });
                    if !rep {
                        break;
                    }
                }
            }
        }
    }
    out
}

/// All attacker moves: recipe moves, then replays while budget remains.
pub fn moves(world: &World, cfg: &Config) -> Vec<AttackMove> {
    if world.attacker.mode == AttackerMode::Passive {
        return Vec::new();
    }
    let mut out = recipe_moves(world, cfg);
    let st = &cfg.attacker;
    if st.replays < st.replay_budget {
        let mut seen = BTreeSet::new();
        for (i, ev) in st.observed.iter().enumerate() {
            if cfg.pool.contains(ev) || !seen.insert(ev.msg.hash_value()) {
                continue;
            }
            out.push(AttackMove::Replay { observed: i });
        }
    }
    out
}

/// Applies an attacker move. Emitted events are checked for derivability by
/// the caller.
pub fn execute(att: &mut AttackerState, m: &AttackMove, _cfg: &Config, ctx: &mut Ctx) -> Flow {
    match m {
        AttackMove::Replay { observed } => {
            guard(att.replays < att.replay_budget)?;
            let ev = att.observed.get(*observed).cloned().or_halt()?;
            att.replays += 1;
            ctx.emit(ev.receiver, ev.sender, ev.msg);
            Ok(())
        }
        AttackMove::Recipe { recipe, rule, item } => {
            let world = ctx.world;
            let ev = att.inbox.get(*item).cloned().or_halt()?;
            guard(matches(world, att, *recipe, rule, &ev))?;
            let key = (*recipe, rule.clone(), repeatable(rule).then_some(*item));
            guard(!att.fired.contains(&key))?;
            fire(att, *recipe, rule, &ev, ctx)?;
            att.fired.insert(key);
            Ok(())
        }
    }
}

/// Sends an HTTPS request to an honest server; returns the session key.
fn send(ctx: &mut Ctx, req: Request) -> Result<Term, Halt> {
    let k = ctx.fresh("k_att");
    let pk = ctx.world.key_of(&req.host).or_halt()?;
    let addr = ctx.world.resolve(&req.host).or_halt()?;
    let from = ctx.world.attacker_addr.clone();
    ctx.emit(addr, from, Term::enc_a(Term::pair(req.to_term(), k.clone()), pk));
    Ok(k)
}

fn cookie_header(sid: &Term) -> Term {
    Term::dict([("Cookie", Term::empty().with_t(secure_name(SESSION_COOKIE), sid.clone()))])
}

/// POST `/startLogin` at the client as if from a browser.
fn start_login(ctx: &mut Ctx, client: usize, identity: &Term) -> Result<Term, Halt> {
    let host = ctx.world.domain_of(client).or_halt()?.clone();
    let mut req = Request::new(ctx.fresh("req"), POST, host.clone(), "/startLogin");
    req.headers = Term::dict([("Origin", Term::pair(host, Term::atom(HTTPS)))]);
    req.body = identity.clone();
    send(ctx, req)
}

/// Delivers authorization response data to a client redirect endpoint.
fn deliver_redirect(ctx: &mut Ctx, redirect_uri: &Url, data: &Term, in_body: bool, sid: &Term) -> Result<Term, Halt> {
    let method = if in_body { POST } else { GET };
    let mut req = Request::new(ctx.fresh("req"), method, redirect_uri.host.clone(), "");
    req.path = redirect_uri.path.clone();
    req.headers = cookie_header(sid);
    if in_body {
        req.body = data.clone();
    } else {
        req.params = dict_union(&redirect_uri.params, data);
    }
    send(ctx, req)
}

fn login_request(ctx: &mut Ctx, url: &Url, identity: &Term, password: Term) -> Request {
    let mut req = Request::new(ctx.fresh("req"), POST, url.host.clone(), "/auth2");
    req.headers = Term::dict([("Origin", Term::pair(url.host.clone(), Term::atom(HTTPS)))]);
    req.body = url.params.with("identity", identity.clone()).with("password", password);
    req
}

fn is_hybrid(response_type: &Term) -> bool {
    response_type.contains_elem(&Term::atom("id_token"))
}

fn fire(att: &mut AttackerState, r: usize, rule: &str, ev: &Event, ctx: &mut Ctx) -> Flow {
    let world = ctx.world;
    let setup = &world.attacker;
    let recipe = setup.recipes[r].clone();
    let set = |att: &mut AttackerState, k: &str, v: Term| {
        att.vars[r].insert(k.to_string(), v);
    };
    let get = |att: &AttackerState, k: &str| att.var(r, k).cloned().or_halt();
    match (&recipe, rule) {
        (Recipe::Cuckoo { client, identity } | Recipe::IdTokenReplay { client, identity }, "start") => {
            let at = token_leak(world, ev).or_halt()?;
            set(att, "at", at);
            let k = start_login(ctx, *client, identity)?;
            set(att, "k_start", k);
        }
        (Recipe::Cuckoo { identity, .. }, "redirect") => {
            let resp = response_to(att, r, "k_start", ev).or_halt()?;
            let sid = resp.headers.at("Set-Cookie").at_t(&secure_name(SESSION_COOKIE)).proj(1);
            let sid = nofail(sid)?;
            let auth = Url::from_term(&resp.headers.at("Location")).or_halt()?;
            let p = &auth.params;
            let issuer = identity.proj(2);
            let code = ctx.fresh("code_att");
            let state = p.at("state");
            let cid = p.at("client_id");
            let hybrid = is_hybrid(&p.at("response_type"));
            let data = if hybrid {
                let claims = Term::dict([
                    ("iss", issuer.clone()),
                    ("sub", identity.clone()),
                    ("aud", cid.clone()),
                    ("nonce", p.at("nonce")),
                    ("c_hash", Term::hash(code.clone())),
                    ("s_hash", Term::hash(state.clone())),
                ]);
                let idt = Term::sig(claims, setup.signing_key.clone());
                Term::dict([("code", code.clone()), ("id_token", idt), ("state", state.clone())])
            } else {
                let claims = Term::dict([
                    ("iss", issuer.clone()),
                    ("aud", cid.clone()),
                    ("code", code.clone()),
                    ("at_hash", Term::hash(get(att, "at")?)),
                    ("state", state.clone()),
                ]);
                let jws = Term::sig(claims, setup.signing_key.clone());
                Term::dict([("code", code.clone()), ("responseJWS", jws), ("state", state.clone())])
            };
            let ru = Url::from_term(&p.at("redirect_uri")).or_halt()?;
            let k = deliver_redirect(ctx, &ru, &data, hybrid, &sid)?;
            for (name, v) in [("sid", sid), ("cid", cid), ("nonce", p.at("nonce")), ("k_redirect", k)] {
                set(att, name, v);
            }
        }
        (Recipe::IdTokenReplay { identity, .. }, "login") => {
            let resp = response_to(att, r, "k_start", ev).or_halt()?;
            let sid = nofail(resp.headers.at("Set-Cookie").at_t(&secure_name(SESSION_COOKIE)).proj(1))?;
            let auth = Url::from_term(&resp.headers.at("Location")).or_halt()?;
            let req = login_request(ctx, &auth, identity, setup.password(identity)?);
            let k = send(ctx, req)?;
            set(att, "sid", sid);
            set(att, "k_login", k);
        }
        (Recipe::IdTokenReplay { .. }, "redirect") => {
            let resp = response_to(att, r, "k_login", ev).or_halt()?;
            let back = Url::from_term(&resp.headers.at("Location")).or_halt()?;
            let sid = get(att, "sid")?;
            let hybrid = back.fragment.as_seq().is_some_and(|f| !f.is_empty());
            let (data, target) = if hybrid {
                (back.fragment.clone(), Url { fragment: Term::bot(), ..back.clone() })
            } else {
                (Term::empty(), back.clone())
            };
            if let Some(idt) = data.get("id_token") {
                set(att, "id_token", idt.clone());
            }
            let k = deliver_redirect(ctx, &target, &data, hybrid, &sid)?;
            set(att, "k_redirect", k);
        }
        (_, "prepare") => {
            let (m, key) = setup.open_request(&ev.msg).or_halt()?;
            let body = if m.path_str() == "/MTLS-prepare" {
                let client = *world.addr_index.get(&ev.sender).or_halt()?;
                let client_key = world.key_of(world.domain_of(client).or_halt()?).or_halt()?;
                let own = world.key_of(&m.host).or_halt()?;
                Term::enc_a(Term::pair(ctx.fresh("mtls_nonce_att"), own), client_key)
            } else {
                Term::dict([("tb_nonce", ctx.fresh("tb_nonce_att"))])
            };
            reply(ctx, &m, &key, &ev.receiver, &ev.sender, 200, Term::empty(), body);
        }
        (Recipe::Cuckoo { identity, .. }, "token") => {
            let (m, key) = setup.open_request(&ev.msg).or_halt()?;
            let at = get(att, "at")?;
            let claims = Term::dict([
                ("iss", identity.proj(2)),
                ("sub", identity.clone()),
                ("aud", get(att, "cid")?),
                ("nonce", get(att, "nonce")?),
                ("at_hash", Term::hash(at.clone())),
            ]);
            let body = Term::dict([("access_token", at), ("id_token", Term::sig(claims, setup.signing_key.clone()))]);
            reply(ctx, &m, &key, &ev.receiver, &ev.sender, 200, Term::empty(), body);
        }
        (Recipe::IdTokenReplay { .. }, "token") => {
            let (m, key) = setup.open_request(&ev.msg).or_halt()?;
            let mut body = Term::dict([("access_token", get(att, "at")?)]);
            if let Ok(idt) = get(att, "id_token") {
                body = body.with("id_token", idt);
            }
            reply(ctx, &m, &key, &ev.receiver, &ev.sender, 200, Term::empty(), body);
        }
        (Recipe::PkceChosenChallenge { client_id, auth_server, redirect_uri, .. }, "page") => {
            let (m, key) = setup.open_request(&ev.msg).or_halt()?;
            let verifier = ctx.fresh("pkce_verifier_att");
            let state = ctx.fresh("state_att");
            let mut url = Url::https(auth_server.as_dom().or_halt()?, "/auth");
            url.params = Term::dict([
                ("response_type", Term::seq(vec![Term::atom("code")])),
                ("redirect_uri", redirect_uri.clone()),
                ("client_id", client_id.clone()),
                ("scope", Term::empty()),
                ("nonce", Term::empty()),
                ("pkce_challenge", Term::hash(verifier.clone())),
                ("state", state.clone()),
            ]);
            reply(ctx, &m, &key, &ev.receiver, &ev.sender, 303, Term::dict([("Location", url.to_term())]), Term::empty());
            set(att, "verifier", verifier);
            set(att, "state", state);
        }
        (Recipe::PkceChosenChallenge { client_id, auth_server, redirect_uri, .. }, "token") => {
            let url = auth_response_leak(world, ev).or_halt()?;
            let mut req = Request::new(ctx.fresh("req"), POST, auth_server.clone(), "/token");
            req.body = Term::dict([
                ("grant_type", Term::atom("authorization_code")),
                ("code", url.params.at("code")),
                ("redirect_uri", redirect_uri.clone()),
                ("client_id", client_id.clone()),
                ("pkce_verifier", get(att, "verifier")?),
            ]);
            let k = send(ctx, req)?;
            set(att, "k_token", k);
        }
        (Recipe::PkceChosenChallenge { resource_server, .. }, "resource") => {
            let resp = response_to(att, r, "k_token", ev).or_halt()?;
            let at = resp.body.at("access_token");
            let mut req = Request::new(ctx.fresh("req"), GET, resource_server.clone(), "/resource-r");
            req.headers = Term::dict([("Authorization", Term::pair(Term::atom("Bearer"), at))]);
            let k = send(ctx, req)?;
            set(att, "k_resource", k);
        }
        (Recipe::AuthReqLeak { .. }, "tb_prepare") => {
            let url = auth_request_leak(world, ev).or_halt()?;
            let req = Request::new(ctx.fresh("req"), GET, url.host.clone(), "/OAUTB-prepare");
            set(att, "prep_nonce", req.nonce.clone());
            let k = send(ctx, req)?;
            set(att, "auth_url", url.to_term());
            set(att, "k_prep", k);
        }
        (Recipe::AuthReqLeak { identity, .. }, "login") => {
            let password = setup.password(identity)?;
            let req = match auth_request_leak(world, ev) {
                Some(url) => login_request(ctx, &url, identity, password),
                None => {
                    let resp = response_to(att, r, "k_prep", ev).or_halt()?;
                    let url = Url::from_term(&get(att, "auth_url")?).or_halt()?;
                    let server = world.key_of(&url.host).or_halt()?;
                    let e = ekm(&get(att, "prep_nonce")?, &resp.body.at("tb_nonce"), &server);
                    let (kp, kr) = (ctx.fresh("tb_key_att"), ctx.fresh("tb_key_att"));
                    let mut req = login_request(ctx, &url, identity, password);
                    let tb = Term::dict([("prov", tb_message(&kp, &e)), ("ref", tb_message(&kr, &e))]);
                    req.headers = req.headers.with("Sec-Token-Binding", tb);
                    req
                }
            };
            let k = send(ctx, req)?;
            set(att, "k_login", k);
        }
        (Recipe::AuthReqLeak { .. }, "stash") => {
            let resp = response_to(att, r, "k_login", ev).or_halt()?;
            let loc = resp.headers.get("Location").or_halt()?.clone();
            set(att, "redirect", loc);
        }
        (Recipe::AuthReqLeak { .. }, "page") => {
            let (m, key) = setup.open_request(&ev.msg).or_halt()?;
            let loc = get(att, "redirect")?;
            reply(ctx, &m, &key, &ev.receiver, &ev.sender, 303, Term::dict([("Location", loc)]), Term::empty());
        }
        _ => return Err(Halt),
    }
    Ok(())
}
