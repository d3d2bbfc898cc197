//! Honest authorization server: authorization, token and prepare endpoints.

use crate::https::{dict_union, dispatch, ekm, reply, HttpsRole, Request, Response, ServerCore, Url, POST};
use crate::runtime::{guard, ClientType, Ctx, Event, Fact, Flow, Halt, OrHalt, Profile};
use crate::terms::{check_mac, check_sig, extract_msg, Term};

#[derive(Clone, Debug)]
pub struct ClientInfo {
    pub client_id: Term,
    pub profile: Profile,
    pub client_type: ClientType,
    pub is_app: bool,
    pub client_secret: Term,
    pub redirect_uris: Vec<Term>,
    pub jws_key: Term,
    pub mtls_key: Term,
}

impl ClientInfo {
    fn to_term(&self) -> Term {
        Term::dict([
            ("client_id", self.client_id.clone()),
            ("profile", Term::atom(self.profile.as_str())),
            ("client_type", Term::atom(self.client_type.as_str())),
            ("is_app", Term::boolean(self.is_app)),
            ("client_secret", self.client_secret.clone()),
            ("redirect_uris", Term::seq(self.redirect_uris.clone())),
            ("jws_key", self.jws_key.clone()),
            ("mtls_key", self.mtls_key.clone()),
        ])
    }

    fn oautb_web(&self) -> bool {
        self.profile == Profile::Rw && self.client_type == ClientType::ConfOautb && !self.is_app
    }

    fn tb_pkce(&self) -> bool {
        self.profile == Profile::Rw
            && (self.client_type == ClientType::Pub || (self.client_type == ClientType::ConfOautb && self.is_app))
    }
}

#[derive(Clone, Debug)]
pub struct AuthServer {
    pub core: ServerCore,
    pub clients: Vec<ClientInfo>,
    /// Identity registry for the identities this server governs.
    pub identities: Vec<(Term, Term)>,
    pub records: Vec<Term>,
    pub jwk: Term,
    pub oautb_ekm: Vec<Term>,
    /// `(client_id, nonce, client key)`
    pub mtls_requests: Vec<(Term, Term, Term)>,
    pub access_tokens: Vec<Term>,
}

/// Checks a token binding message `[id, sig]` against the recorded ekms and
/// returns `(id, ekm)`.
fn verify_tb(msg: &Term, ekms: &[Term]) -> Result<(Term, Term), Halt> {
    let (id, sig) = (msg.at("id"), msg.at("sig"));
    guard(check_sig(&sig, &id).is_top())?;
    let e = extract_msg(&sig);
    guard(ekms.contains(&e))?;
    Ok((id, e))
}

fn remove_one(v: &mut Vec<Term>, t: &Term) {
    if let Some(i) = v.iter().position(|x| x == t) {
        v.remove(i);
    }
}

impl AuthServer {
    pub fn to_term(&self) -> Term {
        Term::dict([
            ("core", self.core.to_term()),
            ("clients", Term::seq(self.clients.iter().map(ClientInfo::to_term).collect())),
            (
                "identities",
                Term::seq(self.identities.iter().map(|(i, p)| Term::pair(i.clone(), p.clone())).collect()),
            ),
            ("records", Term::seq(self.records.clone())),
            ("jwk", self.jwk.clone()),
            ("oautbEKM", Term::seq(self.oautb_ekm.clone())),
            (
                "mtlsRequests",
                Term::seq(
                    self.mtls_requests
                        .iter()
                        .map(|(c, n, k)| Term::seq(vec![c.clone(), n.clone(), k.clone()]))
                        .collect(),
                ),
            ),
            ("accessTokens", Term::seq(self.access_tokens.clone())),
        ])
    }

    pub fn receive(&mut self, ev: &Event, ctx: &mut Ctx) -> Flow {
        dispatch(self, ev, ctx)
    }

    fn client(&self, cid: &Term) -> Result<ClientInfo, Halt> {
        self.clients.iter().find(|c| c.client_id == *cid).cloned().or_halt()
    }

    fn auth2(&mut self, m: &Request, k: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow {
        let identity = m.body.at("identity");
        let password = m.body.at("password");
        guard(self.core.owns(&identity.proj(2)))?;
        let known = self.identities.iter().find(|(i, _)| *i == identity).or_halt()?;
        guard(known.1 == password)?;
        let cid = m.body.at("client_id");
        let info = self.client(&cid)?;
        let data = match m.body.get("request_jws") {
            Some(jws) => {
                guard(check_sig(jws, &info.jws_key).is_top())?;
                let data = extract_msg(jws);
                guard(data.at("aud") == m.host)?;
                guard(data.at("client_id") == cid)?;
                data
            }
            None if !ctx.world.fixes.signed_request_jws => m.body.clone(),
            None => return Err(Halt),
        };
        let mut referred = Term::empty();
        if info.oautb_web() {
            let tb = m.headers.get("Sec-Token-Binding").or_halt()?;
            let (_, e) = verify_tb(&tb.at("prov"), &self.oautb_ekm)?;
            let (ref_id, e2) = verify_tb(&tb.at("ref"), &self.oautb_ekm)?;
            guard(e == e2)?;
            referred = ref_id;
            remove_one(&mut self.oautb_ekm, &e);
        }
        let response_type = data.at("response_type");
        let redirect_uri = data.at("redirect_uri");
        let state = data.at("state");
        guard(!state.is_empty_seq())?;
        guard(info.redirect_uris.contains(&redirect_uri))?;
        let code = ctx.fresh("code");
        let access_token = ctx.fresh("access_token");
        let mut record = Term::dict([
            ("client_id", cid.clone()),
            ("redirect_uri", redirect_uri.clone()),
            ("subject", identity.clone()),
            ("issuer", m.host.clone()),
            ("nonce", data.at("nonce")),
            ("scope", data.at("scope")),
            ("response_type", response_type.clone()),
            ("code", code.clone()),
            ("access_token", access_token.clone()),
        ]);
        if info.profile == Profile::R || info.tb_pkce() {
            record = record.with("pkce_challenge", data.at("pkce_challenge"));
        } else if info.oautb_web() {
            record = record.with("pkce_challenge", referred);
        }
        self.records.push(record);
        let hybrid = Term::seq(vec![Term::atom("code"), Term::atom("id_token")]);
        let jarm = Term::seq(vec![Term::atom("JARM_code")]);
        let plain = Term::seq(vec![Term::atom("code")]);
        match info.profile {
            Profile::Rw => guard(response_type == hybrid || response_type == jarm)?,
            Profile::R => guard(response_type == plain)?,
        }
        let mut response = Term::dict([("code", code.clone())]);
        if response_type == jarm {
            let jwt = Term::dict([
                ("iss", m.host.clone()),
                ("aud", cid.clone()),
                ("code", code.clone()),
                ("at_hash", Term::hash(access_token.clone())),
                ("state", state.clone()),
            ]);
            response = response.with("responseJWS", Term::sig(jwt, self.jwk.clone()));
        }
        if response_type.contains_elem(&Term::atom("id_token")) {
            let body = Term::dict([
                ("iss", m.host.clone()),
                ("sub", identity.clone()),
                ("aud", cid.clone()),
                ("nonce", data.at("nonce")),
                ("c_hash", Term::hash(code.clone())),
                ("s_hash", Term::hash(state.clone())),
            ]);
            response = response.with("id_token", Term::sig(body, self.jwk.clone()));
        }
        response = response.with("state", state);
        let mut url = Url::from_term(&redirect_uri).or_halt()?;
        if response_type == plain || response_type == jarm {
            url.params = dict_union(&url.params, &response);
        } else {
            url.fragment = dict_union(&url.fragment, &response);
        }
        if info.is_app && ctx.world.leaks.auth_response_app {
            let leak = Term::seq(vec![
                Term::atom("LEAK"),
                cid.clone(),
                Term::pair(Term::atom("Location"), url.to_term()),
            ]);
            ctx.emit(ctx.world.leak_addr.clone(), a.clone(), leak);
        }
        reply(ctx, m, k, a, f, 303, Term::dict([("Location", url.to_term())]), Term::empty());
        Ok(())
    }

    fn token(&mut self, m: &Request, k: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow {
        let cid = m.body.at("client_id");
        let code = m.body.at("code");
        guard(!code.is_bot())?;
        let ptr = self.records.iter().position(|r| r.at("code") == code).or_halt()?;
        let record = self.records[ptr].clone();
        guard(record.at("client_id") == cid)?;
        let info = self.client(&cid)?;
        let mut provided = Term::empty();
        let mut referred = Term::empty();
        if info.profile == Profile::Rw && matches!(info.client_type, ClientType::Pub | ClientType::ConfOautb) {
            let tb = m.headers.at("Sec-Token-Binding");
            let (p, e) = verify_tb(&tb.at("prov"), &self.oautb_ekm)?;
            let (r, e2) = verify_tb(&tb.at("ref"), &self.oautb_ekm)?;
            guard(e == e2)?;
            provided = p;
            referred = r;
            remove_one(&mut self.oautb_ekm, &e);
        }
        let mut mtls_key = Term::empty();
        match info.client_type {
            ClientType::ConfJws | ClientType::ConfOautb => {
                let assertion = m.body.at("assertion");
                guard(check_mac(&assertion, &info.client_secret).is_top())?;
                let claims = extract_msg(&assertion);
                guard(claims.at("aud") == m.host && claims.at("iss") == cid)?;
            }
            ClientType::ConfMtls => {
                let authn = m.body.at("TLS_AuthN");
                let i = self.mtls_requests.iter().position(|(c, n, _)| *c == cid && *n == authn).or_halt()?;
                mtls_key = self.mtls_requests.remove(i).2;
            }
            ClientType::Pub => {}
        }
        let challenge = record.at("pkce_challenge");
        if info.profile == Profile::R {
            guard(Term::hash(m.body.at("pkce_verifier")) == challenge)?;
        } else if info.oautb_web() {
            guard(m.body.at("pkce_verifier") == challenge)?;
        } else if info.tb_pkce() {
            guard(Term::hash(provided) == challenge)?;
        }
        let uri_ok = record.at("redirect_uri") == m.body.at("redirect_uri")
            || (info.redirect_uris.len() == 1 && !m.body.has("redirect_uri"));
        guard(uri_ok)?;
        self.records[ptr] = record.with("code", Term::bot());
        let access_token = record.at("access_token");
        let subject = record.at("subject");
        let entry = match (info.profile, info.client_type) {
            (Profile::Rw, ClientType::ConfMtls) => Term::seq(vec![
                Term::atom("MTLS"),
                subject.clone(),
                cid.clone(),
                access_token.clone(),
                mtls_key,
                Term::atom("rw"),
            ]),
            (Profile::Rw, _) => Term::seq(vec![
                Term::atom("OAUTB"),
                subject.clone(),
                cid.clone(),
                access_token.clone(),
                referred,
                Term::atom("rw"),
            ]),
            (Profile::R, _) => Term::seq(vec![subject.clone(), cid.clone(), access_token.clone(), Term::atom("r")]),
        };
        self.access_tokens.push(entry);
        ctx.fact(Fact::TokenIssued {
            auth_server: ctx.me,
            token: access_token.clone(),
            client_id: cid.clone(),
            identity: subject.clone(),
        });
        let hybrid = Term::seq(vec![Term::atom("code"), Term::atom("id_token")]);
        let mut body = Term::dict([("access_token", access_token.clone())]);
        if record.at("scope").contains_elem(&Term::atom("openid")) || record.at("response_type") == hybrid {
            let claims = Term::dict([
                ("iss", record.at("issuer")),
                ("sub", subject),
                ("aud", record.at("client_id")),
                ("nonce", record.at("nonce")),
                ("at_hash", Term::hash(access_token.clone())),
            ]);
            body = body.with("id_token", Term::sig(claims, self.jwk.clone()));
        }
        if info.profile == Profile::Rw && ctx.world.leaks.access_token_rw {
            let leak = Term::seq(vec![Term::atom("LEAK"), cid, access_token]);
            ctx.emit(ctx.world.leak_addr.clone(), a.clone(), leak);
        }
        reply(ctx, m, k, a, f, 200, Term::empty(), body);
        Ok(())
    }
}

impl HttpsRole for AuthServer {
    fn core(&mut self) -> &mut ServerCore {
        &mut self.core
    }

    fn on_request(&mut self, m: &Request, k: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow {
        match m.path_str() {
            "/auth" => {
                let data = if m.is(POST) { m.body.clone() } else { m.params.clone() };
                let headers = Term::dict([("ReferrerPolicy", Term::atom("origin"))]);
                let body = Term::pair(Term::atom(crate::browser::SCRIPT_AS_FORM), data);
                reply(ctx, m, k, a, f, 200, headers, body);
                Ok(())
            }
            "/auth2" if m.is(POST) && m.header("Origin") == Term::pair(m.host.clone(), Term::atom("S")) => {
                self.auth2(m, k, a, f, ctx)
            }
            "/token" if m.is(POST) => self.token(m, k, a, f, ctx),
            "/MTLS-prepare" => {
                let cid = m.body.at("client_id");
                let key = self.client(&cid)?.mtls_key;
                guard(!key.is_empty_seq())?;
                let nonce = ctx.fresh("mtls_nonce");
                self.mtls_requests.push((cid, nonce.clone(), key.clone()));
                let own = ctx.world.key_of(&m.host).or_halt()?;
                let body = Term::enc_a(Term::pair(nonce, own), key);
                reply(ctx, m, k, a, f, 200, Term::empty(), body);
                Ok(())
            }
            "/OAUTB-prepare" => {
                let tb_nonce = ctx.fresh("tb_nonce");
                let own = ctx.world.key_of(&m.host).or_halt()?;
                self.oautb_ekm.push(ekm(&m.nonce, &tb_nonce, &own));
                reply(ctx, m, k, a, f, 200, Term::empty(), Term::dict([("tb_nonce", tb_nonce)]));
                Ok(())
            }
            _ => Err(Halt),
        }
    }

    fn on_response(&mut self, _: &Response, _: &Term, _: &Request, _: &Term, _: &mut Ctx) -> Flow {
        Err(Halt)
    }
}
