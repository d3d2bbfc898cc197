//! FAPI client (relying party) for every profile, client type and
//! app/web-server variant.

use crate::https::{dispatch, ekm, reply, tb_message, HttpsRole, Request, Response, ServerCore, Url, GET, HTTPS, POST};
use crate::runtime::{guard, nofail, ClientType, Ctx, Event, Fact, Flow, Halt, OrHalt, Profile};
use crate::terms::{check_sig, dec_a, extract_msg, Term};

pub const SESSION_COOKIE: &str = "sessionId";
pub const SERVICE_COOKIE: &str = "serviceSessionId";

pub fn secure_name(name: &str) -> Term {
    Term::pair(Term::atom("__Secure"), Term::atom(name))
}

/// Per-issuer configuration: the OIDC configuration and client credentials
/// caches merged into one record.
#[derive(Clone, Debug)]
pub struct Registration {
    pub issuer: Term,
    pub client_id: Term,
    pub client_type: ClientType,
    pub profile: Profile,
    pub is_app: bool,
    pub client_secret: Term,
    pub auth_ep: Url,
    pub token_ep: Url,
    pub redirect_uris: Vec<Url>,
    pub resource_servers: Vec<Term>,
}

impl Registration {
    fn to_term(&self) -> Term {
        Term::dict([
            ("issuer", self.issuer.clone()),
            ("client_id", self.client_id.clone()),
            ("client_type", Term::atom(self.client_type.as_str())),
            ("profile", Term::atom(self.profile.as_str())),
            ("is_app", Term::boolean(self.is_app)),
            ("client_secret", self.client_secret.clone()),
            ("auth_ep", self.auth_ep.to_term()),
            ("token_ep", self.token_ep.to_term()),
            ("redirect_uris", Term::seq(self.redirect_uris.iter().map(Url::to_term).collect())),
            ("resource_servers", Term::seq(self.resource_servers.clone())),
        ])
    }

    fn oautb_web(&self) -> bool {
        self.profile == Profile::Rw && self.client_type == ClientType::ConfOautb && !self.is_app
    }
}

#[derive(Clone, Debug)]
pub struct Client {
    pub core: ServerCore,
    pub sessions: Vec<(Term, Term)>,
    pub issuer_cache: Vec<(Term, Term)>,
    pub registrations: Vec<Registration>,
    pub jwks_cache: Vec<(Term, Term)>,
    pub oautb_ekm: Vec<Term>,
    pub auth_req_sig_key: Term,
    pub token_bindings: Vec<(Term, Term)>,
}

fn reference(to: &str, sid: &Term) -> Term {
    Term::dict([("responseTo", Term::atom(to)), ("session", sid.clone())])
}

fn lookup<'a>(v: &'a [(Term, Term)], k: &Term) -> Option<&'a Term> {
    v.iter().find(|(a, _)| a == k).map(|(_, b)| b)
}

impl Client {
    pub fn to_term(&self) -> Term {
        let pairs = |v: &[(Term, Term)]| Term::seq(v.iter().map(|(a, b)| Term::pair(a.clone(), b.clone())).collect());
        Term::dict([
            ("core", self.core.to_term()),
            ("sessions", pairs(&self.sessions)),
            ("issuerCache", pairs(&self.issuer_cache)),
            ("registrations", Term::seq(self.registrations.iter().map(Registration::to_term).collect())),
            ("jwksCache", pairs(&self.jwks_cache)),
            ("oautbEKM", Term::seq(self.oautb_ekm.clone())),
            ("authReqSigKey", self.auth_req_sig_key.clone()),
            ("tokenBindings", pairs(&self.token_bindings)),
        ])
    }

    pub fn session(&self, sid: &Term) -> Option<&Term> {
        lookup(&self.sessions, sid)
    }

    fn sess(&self, sid: &Term) -> Result<Term, Halt> {
        self.session(sid).cloned().or_halt()
    }

    fn set(&mut self, sid: &Term, key: &str, val: Term) {
        if let Some((_, s)) = self.sessions.iter_mut().find(|(k, _)| k == sid) {
            *s = s.with(key, val);
        }
    }

    fn issuer_of(&self, session: &Term) -> Result<Term, Halt> {
        lookup(&self.issuer_cache, &session.at("identity")).cloned().or_halt()
    }

    fn reg(&self, issuer: &Term) -> Result<&Registration, Halt> {
        self.registrations.iter().find(|r| r.issuer == *issuer).or_halt()
    }

    fn reg_for(&self, sid: &Term) -> Result<(Term, Term, Registration), Halt> {
        let session = self.sess(sid)?;
        let issuer = self.issuer_of(&session)?;
        let reg = self.reg(&issuer)?.clone();
        Ok((session, issuer, reg))
    }

    fn tb_key(&mut self, host: &Term, ctx: &mut Ctx) -> Term {
        if let Some(k) = lookup(&self.token_bindings, host) {
            return k.clone();
        }
        let k = ctx.fresh("tb_key");
        self.token_bindings.push((host.clone(), k.clone()));
        k
    }

    pub fn receive(&mut self, ev: &Event, ctx: &mut Ctx) -> Flow {
        dispatch(self, ev, ctx)
    }

    fn start_login_flow(&mut self, sid: &Term, ctx: &mut Ctx) -> Flow {
        let (session, issuer, reg) = self.reg_for(sid)?;
        let mut auth_ep = reg.auth_ep.clone();
        let rs = ctx.choose_term("resource_server", &reg.resource_servers)?;
        self.set(sid, "RS", rs);
        let mut headers = Term::dict([("ReferrerPolicy", Term::atom("origin"))]);
        let cookie = Term::pair(
            secure_name(SESSION_COOKIE),
            Term::seq(vec![sid.clone(), Term::top(), Term::top(), Term::top()]),
        );
        headers = headers.with("Set-Cookie", Term::seq(vec![cookie]));
        let response_type = match reg.profile {
            Profile::R => Term::seq(vec![Term::atom("code")]),
            Profile::Rw => {
                let opts = [Term::seq(vec![Term::atom("code"), Term::atom("id_token")]), Term::seq(vec![Term::atom("JARM_code")])];
                ctx.choose_term("response_type", &opts)?
            }
        };
        let redirect_terms: Vec<Term> = reg.redirect_uris.iter().map(Url::to_term).collect();
        let redirect_uri = ctx.choose_term("redirect_uri", &redirect_terms)?;
        self.set(sid, "redirect_uri", redirect_uri.clone());
        let scope = ctx.choose_term("scope", &[Term::empty(), Term::seq(vec![Term::atom("openid")])])?;
        let hybrid = response_type.as_seq().is_some_and(|s| s.len() == 2);
        let nonce = if !scope.is_empty_seq() || (reg.profile == Profile::Rw && hybrid) {
            ctx.fresh("nonce")
        } else {
            Term::empty()
        };
        let pkce_challenge = if reg.profile == Profile::R {
            let verifier = ctx.fresh("pkce_verifier");
            self.set(sid, "pkce_verifier", verifier.clone());
            Term::hash(verifier)
        } else if reg.client_type == ClientType::Pub || (reg.client_type == ClientType::ConfOautb && reg.is_app) {
            let k = self.tb_key(&auth_ep.host, ctx);
            Term::hash(Term::pub_key(k))
        } else if reg.client_type == ClientType::ConfOautb {
            headers = headers.with("Include-Referred-Token-Binding-ID", Term::top());
            Term::atom("referred_tb")
        } else {
            Term::empty()
        };
        let state = ctx.fresh("state");
        let mut data = Term::dict([
            ("response_type", response_type),
            ("redirect_uri", redirect_uri),
            ("client_id", reg.client_id.clone()),
            ("scope", scope),
            ("nonce", nonce),
            ("pkce_challenge", pkce_challenge),
            ("state", state.clone()),
        ]);
        let jwt = data.with("aud", auth_ep.host.clone());
        data = data.with("request_jws", Term::sig(jwt, self.auth_req_sig_key.clone()));
        for e in data.as_seq().unwrap_or_default() {
            if let Some((k, v)) = e.as_pair() {
                let key = k.as_atom().unwrap_or_default().to_string();
                self.set(sid, &key, v.clone());
            }
        }
        ctx.fact(Fact::SessionState { client: ctx.me, lsid: sid.clone(), state, issuer: issuer.clone() });
        auth_ep.params = data;
        headers = headers.with("Location", auth_ep.to_term());
        let start = session.at("startRequest");
        let req = Request::from_term(&start.at("message")).or_halt()?;
        ctx.fact(Fact::SessionCookie { client: ctx.me, lsid: sid.clone(), request: req.nonce.clone() });
        if ctx.world.leaks.auth_request {
            let leak = Term::pair(Term::atom("LEAK"), auth_ep.to_term());
            ctx.emit(ctx.world.leak_addr.clone(), start.at("receiver"), leak);
        }
        reply(ctx, &req, &start.at("key"), &start.at("receiver"), &start.at("sender"), 303, headers, Term::bot());
        Ok(())
    }

    fn prepare_token_request(&mut self, sid: &Term, code: &Term, ctx: &mut Ctx) -> Flow {
        let (_, _, reg) = self.reg_for(sid)?;
        let misconfigured = reg.profile == Profile::Rw
            && ctx.world.leaks.misconfigured_token_endpoint
            && !ctx.world.attacker_endpoints.is_empty()
            && ctx.choose_bool("misconfigured_token_ep")?;
        self.set(sid, "misconfiguredTEp", Term::boolean(misconfigured));
        let url = if misconfigured {
            let eps: Vec<Term> = ctx.world.attacker_endpoints.iter().map(Url::to_term).collect();
            let u = ctx.choose_term("token_ep", &eps)?;
            self.set(sid, "token_ep", u.clone());
            Url::from_term(&u).or_halt()?
        } else {
            reg.token_ep.clone()
        };
        self.set(sid, "code", code.clone());
        if reg.profile == Profile::R && matches!(reg.client_type, ClientType::Pub | ClientType::ConfJws) {
            return self.send_token_request(sid, code, &Term::empty(), ctx);
        }
        let (path, to) = if reg.client_type == ClientType::ConfMtls {
            ("/MTLS-prepare", "MTLS_AS")
        } else {
            ("/OAUTB-prepare", "OAUTB_AS")
        };
        let mut msg = Request::new(ctx.fresh("req"), GET, url.host.clone(), path);
        msg.params = url.params.clone();
        if reg.client_type == ClientType::ConfMtls {
            msg.body = Term::dict([("client_id", reg.client_id.clone())]);
        }
        self.core.simple_send(reference(to, sid), msg, ctx)
    }

    fn send_token_request(&mut self, sid: &Term, code: &Term, response_value: &Term, ctx: &mut Ctx) -> Flow {
        let (session, _, reg) = self.reg_for(sid)?;
        let url = if session.at("misconfiguredTEp").is_top() {
            Url::from_term(&session.at("token_ep")).or_halt()?
        } else {
            reg.token_ep.clone()
        };
        let mut body = Term::dict([
            ("grant_type", Term::atom("authorization_code")),
            ("code", code.clone()),
            ("redirect_uri", session.at("redirect_uri")),
            ("client_id", reg.client_id.clone()),
        ]);
        if reg.profile == Profile::R {
            body = body.with("pkce_verifier", session.at("pkce_verifier"));
        }
        let assertion = || {
            let jwt = Term::dict([("iss", reg.client_id.clone()), ("aud", url.host.clone())]);
            Term::mac(jwt, reg.client_secret.clone())
        };
        let mut msg = Request::new(ctx.fresh("req"), POST, url.host.clone(), "");
        msg.path = url.path.clone();
        msg.params = url.params.clone();
        match (reg.profile, reg.client_type) {
            (Profile::R, ClientType::Pub) => {}
            (Profile::R, ClientType::ConfJws) => body = body.with("assertion", assertion()),
            (_, ClientType::ConfMtls) => {
                guard(response_value.at("type").as_atom() == Some("MTLS"))?;
                body = body.with("TLS_AuthN", response_value.at("mtls_nonce"));
            }
            _ => {
                guard(response_value.at("type").as_atom() == Some("OAUTB"))?;
                let e = response_value.at("ekm");
                let tb_as = self.tb_key(&url.host, ctx);
                let tb_rs = self.tb_key(&session.at("RS"), ctx);
                msg.headers = Term::dict([(
                    "Sec-Token-Binding",
                    Term::dict([("prov", tb_message(&tb_as, &e)), ("ref", tb_message(&tb_rs, &e))]),
                )]);
                if reg.client_type == ClientType::ConfOautb {
                    body = body.with("assertion", assertion());
                }
                if !reg.is_app {
                    body = body.with("pkce_verifier", session.at("browserTBID"));
                }
            }
        }
        msg.body = body;
        self.core.simple_send(reference("TOKEN", sid), msg, ctx)
    }

    fn prepare_use_access_token(&mut self, sid: &Term, token: &Term, ctx: &mut Ctx) -> Flow {
        let (session, _, reg) = self.reg_for(sid)?;
        self.set(sid, "token", token.clone());
        let rs = session.at("RS");
        if reg.profile == Profile::R {
            return self.use_access_token(sid, token, &Term::empty(), ctx);
        }
        let (path, to) = if reg.client_type == ClientType::ConfMtls {
            ("/MTLS-prepare", "MTLS_RS")
        } else {
            ("/OAUTB-prepare", "OAUTB_RS")
        };
        let mut msg = Request::new(ctx.fresh("req"), GET, rs.clone(), path);
        if reg.client_type == ClientType::ConfMtls {
            let own = self.core.tls_keys.first().map(|(d, _)| d.clone()).or_halt()?;
            msg.body = Term::dict([("pub_key", ctx.world.key_of(&own).or_halt()?)]);
        }
        self.core.simple_send(reference(to, sid), msg, ctx)
    }

    fn use_access_token(&mut self, sid: &Term, token: &Term, response_value: &Term, ctx: &mut Ctx) -> Flow {
        let (session, _, reg) = self.reg_for(sid)?;
        let mut headers = Term::dict([("Authorization", Term::pair(Term::atom("Bearer"), token.clone()))]);
        let rs = session.at("RS");
        let mut msg = Request::new(ctx.fresh("req"), GET, rs.clone(), "/resource-r");
        if reg.profile == Profile::R {
            msg.headers = headers;
            return self.core.simple_send(reference("RESOURCE_USAGE", sid), msg, ctx);
        }
        let hybrid = session.at("response_type").as_seq().is_some_and(|s| s.len() == 2);
        let at_iss = if hybrid { session.at("idt2_iss") } else { session.at("JARM_iss") };
        let mut body = Term::dict([("at_iss", at_iss)]);
        if reg.client_type == ClientType::ConfMtls {
            guard(response_value.at("type").as_atom() == Some("MTLS"))?;
            body = body.with("MTLS_AuthN", response_value.at("mtls_nonce"));
        } else {
            guard(response_value.at("type").as_atom() == Some("OAUTB"))?;
            let k = self.tb_key(&rs, ctx);
            let prov = tb_message(&k, &response_value.at("ekm"));
            headers = headers.with("Sec-Token-Binding", Term::dict([("prov", prov)]));
        }
        msg.method = Term::atom(POST);
        msg.path = Term::atom("/resource-rw");
        msg.headers = headers;
        msg.body = body;
        self.core.simple_send(reference("RESOURCE_USAGE", sid), msg, ctx)
    }

    fn check_first_id_token(&mut self, sid: &Term, id_token: &Term, code: &Term, state: &Term, ctx: &mut Ctx) -> Flow {
        let (session, issuer, reg) = self.reg_for(sid)?;
        let jwks = lookup(&self.jwks_cache, &issuer).cloned().or_halt()?;
        let data = extract_msg(id_token);
        guard(data.at("s_hash") == Term::hash(state.clone()))?;
        guard(data.at("c_hash") == Term::hash(code.clone()))?;
        guard(data.at("iss") == issuer && data.at("aud") == reg.client_id)?;
        guard(check_sig(id_token, &jwks).is_top())?;
        guard(data.at("nonce") == session.at("nonce"))?;
        self.prepare_token_request(sid, code, ctx)
    }

    fn check_response_jws(&mut self, sid: &Term, jws: &Term, code: &Term, state: &Term, ctx: &mut Ctx) -> Flow {
        let (_, issuer, reg) = self.reg_for(sid)?;
        let jwks = lookup(&self.jwks_cache, &issuer).cloned().or_halt()?;
        let data = extract_msg(jws);
        guard(data.at("state") == *state)?;
        guard(data.at("code") == *code)?;
        guard(data.at("iss") == issuer && data.at("aud") == reg.client_id)?;
        guard(check_sig(jws, &jwks).is_top())?;
        self.set(sid, "JARM_iss", data.at("iss"));
        self.prepare_token_request(sid, code, ctx)
    }

    fn check_id_token(&mut self, sid: &Term, id_token: &Term, ctx: &mut Ctx) -> Flow {
        let (session, issuer, reg) = self.reg_for(sid)?;
        let jwks = lookup(&self.jwks_cache, &issuer).cloned().or_halt()?;
        let data = extract_msg(id_token);
        guard(data.at("iss") == issuer && data.at("aud") == reg.client_id)?;
        guard(check_sig(id_token, &jwks).is_top())?;
        guard(data.at("nonce") == session.at("nonce"))?;
        let sub = data.at("sub");
        self.set(sid, "loggedInAs", Term::pair(issuer.clone(), sub.clone()));
        if reg.is_app {
            ctx.fact(Fact::LoggedIn { client: ctx.me, lsid: sid.clone(), identity: sub, issuer, ssid: None, receiver: None });
            return Ok(());
        }
        let ssid = ctx.fresh("serviceSessionId");
        self.set(sid, "serviceSessionId", ssid.clone());
        let request = session.at("redirectEpRequest");
        let req = Request::from_term(&request.at("message")).or_halt()?;
        let cookie = Term::pair(
            secure_name(SERVICE_COOKIE),
            Term::seq(vec![ssid.clone(), Term::top(), Term::top(), Term::top()]),
        );
        let headers = Term::dict([("ReferrerPolicy", Term::atom("origin")), ("Set-Cookie", Term::seq(vec![cookie]))]);
        ctx.fact(Fact::LoggedIn {
            client: ctx.me,
            lsid: sid.clone(),
            identity: sub,
            issuer,
            ssid: Some(ssid),
            receiver: Some(request.at("sender")),
        });
        reply(ctx, &req, &request.at("key"), &request.at("receiver"), &request.at("sender"), 200, headers, Term::atom("ok"));
        Ok(())
    }

    fn redirect_ep(&mut self, m: &Request, k: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow {
        let sid = m.header("Cookie").at_t(&secure_name(SESSION_COOKIE));
        let session = self.sess(&sid)?;
        let expected = Url::from_term(&session.at("redirect_uri")).or_halt()?;
        let here = Url { protocol: Term::atom(HTTPS), host: m.host.clone(), path: m.path.clone(), params: Term::empty(), fragment: Term::bot() };
        guard(here.same_endpoint(&expected))?;
        let issuer = self.issuer_of(&session)?;
        let reg = self.reg(&issuer)?.clone();
        let response_type = session.at("response_type");
        let code_mode = response_type.as_seq().is_some_and(|s| s.len() == 1);
        let data = if code_mode {
            m.params.clone()
        } else if m.is(GET) {
            let headers = Term::dict([("ReferrerPolicy", Term::atom("origin"))]);
            let body = Term::pair(Term::atom(crate::browser::SCRIPT_C_GET_FRAGMENT), Term::bot());
            reply(ctx, m, k, a, f, 200, headers, body);
            return Ok(());
        } else {
            m.body.clone()
        };
        if reg.oautb_web() {
            let tb = m.headers.get("Sec-Token-Binding").or_halt()?;
            let prov = tb.at("prov");
            let (id, sig) = (prov.at("id"), prov.at("sig"));
            guard(check_sig(&sig, &id).is_top())?;
            let msg = extract_msg(&sig);
            let i = self.oautb_ekm.iter().position(|e| *e == msg).or_halt()?;
            self.oautb_ekm.remove(i);
            self.set(&sid, "browserTBID", id);
        }
        let state = data.at("state");
        guard(state == session.at("state"))?;
        guard(!state.is_bot())?;
        self.set(&sid, "state", Term::bot());
        let record = Term::dict([
            ("message", m.to_term()),
            ("key", k.clone()),
            ("receiver", a.clone()),
            ("sender", f.clone()),
            ("data", data.clone()),
        ]);
        self.set(&sid, "redirectEpRequest", record);
        if reg.profile == Profile::R {
            self.prepare_token_request(&sid, &data.at("code"), ctx)
        } else if !code_mode {
            self.check_first_id_token(&sid, &data.at("id_token"), &data.at("code"), &state, ctx)
        } else {
            self.check_response_jws(&sid, &data.at("responseJWS"), &data.at("code"), &state, ctx)
        }
    }

    /// Decrypts an mTLS prepare response and checks the sender's key.
    fn open_mtls(&self, body: &Term, request: &Request, ctx: &Ctx) -> Result<Term, Halt> {
        let dec = self
            .core
            .tls_keys
            .iter()
            .map(|(_, k)| dec_a(body, k))
            .find(|d| !d.is_fail())
            .or_halt()?;
        let (nonce, pub_key) = dec.as_pair().or_halt()?;
        guard(Some(pub_key.clone()) == ctx.world.key_of(&request.host))?;
        Ok(nonce.clone())
    }

    fn on_token_response(&mut self, sid: &Term, m: &Response, ctx: &mut Ctx) -> Flow {
        let (session, issuer, reg) = self.reg_for(sid)?;
        let body = &m.body;
        let access_token = body.at("access_token");
        let scope = session.at("scope");
        let hybrid = session.at("response_type").as_seq().is_some_and(|s| s.len() == 2);
        let use_now = match reg.profile {
            Profile::R if scope.is_empty_seq() => true,
            Profile::R => ctx.choose_bool("use_access_token_now")?,
            Profile::Rw if hybrid => {
                let first = extract_msg(&session.at("redirectEpRequest").at("data").at("id_token"));
                let second_token = body.at("id_token");
                let jwks = lookup(&self.jwks_cache, &issuer).cloned().or_halt()?;
                guard(check_sig(&second_token, &jwks).is_top())?;
                let second = extract_msg(&second_token);
                guard(second.at("sub") == first.at("sub"))?;
                guard(second.at("iss") == first.at("iss"))?;
                guard(second.at("iss") == issuer)?;
                if ctx.world.fixes.at_hash {
                    guard(second.at("at_hash") == Term::hash(access_token.clone()))?;
                }
                guard(second.at("aud") == reg.client_id)?;
                self.set(sid, "idt2_iss", second.at("iss"));
                ctx.choose_bool("use_access_token_now")?
            }
            Profile::Rw => {
                let jws = extract_msg(&session.at("redirectEpRequest").at("data").at("responseJWS"));
                if ctx.world.fixes.at_hash {
                    guard(jws.at("at_hash") == Term::hash(access_token.clone()))?;
                }
                scope.is_empty_seq() || ctx.choose_bool("use_access_token_now")?
            }
        };
        if use_now {
            return self.prepare_use_access_token(sid, &access_token, ctx);
        }
        self.check_id_token(sid, &body.at("id_token"), ctx)
    }
}

impl HttpsRole for Client {
    fn core(&mut self) -> &mut ServerCore {
        &mut self.core
    }

    fn on_request(&mut self, m: &Request, k: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow {
        match m.path_str() {
            "/" => {
                let headers = Term::dict([("ReferrerPolicy", Term::atom("origin"))]);
                let body = Term::pair(Term::atom(crate::browser::SCRIPT_CLIENT_INDEX), Term::empty());
                reply(ctx, m, k, a, f, 200, headers, body);
                Ok(())
            }
            "/startLogin" if m.is(POST) => {
                guard(m.header("Origin") == Term::pair(m.host.clone(), Term::atom(HTTPS)))?;
                let sid = ctx.fresh("sessionId");
                let start = Term::dict([
                    ("message", m.to_term()),
                    ("key", k.clone()),
                    ("receiver", a.clone()),
                    ("sender", f.clone()),
                ]);
                let record = Term::dict([("startRequest", start), ("identity", m.body.clone())]);
                self.sessions.push((sid.clone(), record));
                self.start_login_flow(&sid, ctx)
            }
            "/OAUTB-prepare" => {
                let tb_nonce = ctx.fresh("tb_nonce");
                let server = ctx.world.key_of(&m.host).or_halt()?;
                self.oautb_ekm.push(ekm(&m.nonce, &tb_nonce, &server));
                let headers = Term::dict([("ReferrerPolicy", Term::atom("origin"))]);
                reply(ctx, m, k, a, f, 200, headers, Term::dict([("tb_nonce", tb_nonce)]));
                Ok(())
            }
            _ => self.redirect_ep(m, k, a, f, ctx),
        }
    }

    fn on_response(&mut self, m: &Response, reference: &Term, request: &Request, _key: &Term, ctx: &mut Ctx) -> Flow {
        let sid = reference.at("session");
        let session = self.sess(&sid)?;
        match reference.at("responseTo").as_atom().or_halt()? {
            "TOKEN" => self.on_token_response(&sid, m, ctx),
            "MTLS_AS" => {
                let nonce = self.open_mtls(&m.body, request, ctx)?;
                let rv = Term::dict([("type", Term::atom("MTLS")), ("mtls_nonce", nonce)]);
                self.send_token_request(&sid, &session.at("code"), &rv, ctx)
            }
            "OAUTB_AS" => {
                let server = ctx.world.key_of(&request.host).or_halt()?;
                let e = ekm(&m.nonce, &m.body.at("tb_nonce"), &server);
                let rv = Term::dict([("type", Term::atom("OAUTB")), ("ekm", e)]);
                self.send_token_request(&sid, &session.at("code"), &rv, ctx)
            }
            "MTLS_RS" => {
                let nonce = self.open_mtls(&m.body, request, ctx)?;
                let rv = Term::dict([("type", Term::atom("MTLS")), ("mtls_nonce", nonce)]);
                self.use_access_token(&sid, &session.at("token"), &rv, ctx)
            }
            "OAUTB_RS" => {
                let server = ctx.world.key_of(&request.host).or_halt()?;
                let e = ekm(&m.nonce, &m.body.at("tb_nonce"), &server);
                let rv = Term::dict([("type", Term::atom("OAUTB")), ("ekm", e)]);
                self.use_access_token(&sid, &session.at("token"), &rv, ctx)
            }
            "RESOURCE_USAGE" => {
                let resource = nofail(m.body.at("resource"))?;
                guard(!resource.is_empty_seq())?;
                self.set(&sid, "resource", resource.clone());
                let issuer = self.issuer_of(&session)?;
                let reg = self.reg(&issuer)?.clone();
                let request = session.at("redirectEpRequest");
                ctx.fact(Fact::ResourceObtained {
                    client: ctx.me,
                    lsid: sid.clone(),
                    resource: resource.clone(),
                    rs: session.at("RS"),
                    issuer,
                    receiver: (!reg.is_app).then(|| request.at("sender")),
                });
                if reg.is_app {
                    return Ok(());
                }
                let req = Request::from_term(&request.at("message")).or_halt()?;
                let headers = Term::dict([("ReferrerPolicy", Term::atom("origin"))]);
                reply(ctx, &req, &request.at("key"), &request.at("receiver"), &request.at("sender"), 200, headers, resource);
                Ok(())
            }
            _ => Err(Halt),
        }
    }
}
