//! Reduced web browser: cookies, redirects, the honest scripts, token
//! binding and user identities.

use crate::https::{dict_union, ekm, tb_message, Request, Response, Url, GET, HTTPS, POST};
use crate::runtime::{guard, Ctx, Event, Fact, Flow, Halt, OrHalt};
use crate::terms::{dec_s, extract_msg, Term};

pub const SCRIPT_CLIENT_INDEX: &str = "script_client_index";
pub const SCRIPT_C_GET_FRAGMENT: &str = "script_c_get_fragment";
pub const SCRIPT_AS_FORM: &str = "script_as_form";
pub const ATT_SCRIPT: &str = "att_script";

#[derive(Clone, Debug)]
pub struct Document {
    pub window: Term,
    pub location: Url,
    pub headers: Term,
    pub script: Term,
    pub scriptstate: Term,
    pub ran: bool,
}

#[derive(Clone, Debug)]
struct Pending {
    reference: Term,
    request: Request,
    url: Url,
    ref_tb: Option<Term>,
}

#[derive(Clone, Debug)]
struct Inflight {
    reference: Term,
    request: Request,
    url: Url,
    key: Option<Term>,
    addr: Term,
}

#[derive(Clone, Debug)]
pub struct Browser {
    pub addr: Term,
    pub ids: Vec<Term>,
    /// identity → password
    pub secrets: Vec<(Term, Term)>,
    /// host → cookie list
    pub cookies: Vec<(Term, Vec<Term>)>,
    pub sts: Vec<Term>,
    /// host → private token binding key
    pub token_bindings: Vec<(Term, Term)>,
    pub use_tb: Vec<Term>,
    /// host → host whose binding is referred in requests to it
    pub ref_tb_for: Vec<(Term, Term)>,
    tb_requests: Vec<(Term, Pending)>,
    pending_dns: Vec<(Term, Pending)>,
    pending_requests: Vec<Inflight>,
    pub documents: Vec<Document>,
    pub urlbar: Vec<Url>,
    pub urlbar_budget: u32,
}

/// `AddCookie`: `__Secure` cookies are only accepted over HTTPS; a cookie
/// replaces any earlier one with the same name.
pub fn add_cookie(jar: &[Term], c: &Term, protocol: &Term) -> Vec<Term> {
    let Some((name, _)) = c.as_pair() else { return jar.to_vec() };
    if name.proj(1).as_atom() == Some("__Secure") && protocol.as_atom() != Some(HTTPS) {
        return jar.to_vec();
    }
    let mut out: Vec<Term> = jar.iter().filter(|x| x.proj(1) != *name).cloned().collect();
    out.push(c.clone());
    out
}

fn cookie_value(c: &Term) -> Term {
    c.proj(2).proj(1)
}

fn cookie_secure(c: &Term) -> bool {
    c.proj(2).proj(2).is_top()
}

impl Browser {
    pub fn new(addr: Term, ids: Vec<Term>, secrets: Vec<(Term, Term)>, urlbar: Vec<Url>, urlbar_budget: u32) -> Self {
        Browser {
            addr,
            ids,
            secrets,
            cookies: Vec::new(),
            sts: Vec::new(),
            token_bindings: Vec::new(),
            use_tb: Vec::new(),
            ref_tb_for: Vec::new(),
            tb_requests: Vec::new(),
            pending_dns: Vec::new(),
            pending_requests: Vec::new(),
            documents: Vec::new(),
            urlbar,
            urlbar_budget,
        }
    }

    pub fn to_term(&self) -> Term {
        let pairs = |v: &[(Term, Term)]| Term::seq(v.iter().map(|(a, b)| Term::pair(a.clone(), b.clone())).collect());
        let pending = |p: &Pending| {
            Term::seq(vec![
                p.reference.clone(),
                p.request.to_term(),
                p.url.to_term(),
                p.ref_tb.clone().unwrap_or_else(Term::bot),
            ])
        };
        Term::dict([
            ("ids", Term::seq(self.ids.clone())),
            ("secrets", pairs(&self.secrets)),
            (
                "cookies",
                Term::seq(
                    self.cookies.iter().map(|(h, cs)| Term::pair(h.clone(), Term::seq(cs.clone()))).collect(),
                ),
            ),
            ("sts", Term::seq(self.sts.clone())),
            ("tokenBindings", pairs(&self.token_bindings)),
            ("useTB", Term::seq(self.use_tb.clone())),
            ("refTB", pairs(&self.ref_tb_for)),
            (
                "tokenBindingRequests",
                Term::seq(self.tb_requests.iter().map(|(n, p)| Term::pair(n.clone(), pending(p))).collect()),
            ),
            (
                "pendingDNS",
                Term::seq(self.pending_dns.iter().map(|(n, p)| Term::pair(n.clone(), pending(p))).collect()),
            ),
            (
                "pendingRequests",
                Term::seq(
                    self.pending_requests
                        .iter()
                        .map(|p| {
                            Term::seq(vec![
                                p.reference.clone(),
                                p.request.to_term(),
                                p.url.to_term(),
                                p.key.clone().unwrap_or_else(Term::bot),
                                p.addr.clone(),
                            ])
                        })
                        .collect(),
                ),
            ),
            (
                "documents",
                Term::seq(
                    self.documents
                        .iter()
                        .map(|d| {
                            Term::seq(vec![
                                d.window.clone(),
                                d.location.to_term(),
                                d.headers.clone(),
                                d.script.clone(),
                                d.scriptstate.clone(),
                                Term::boolean(d.ran),
                            ])
                        })
                        .collect(),
                ),
            ),
            ("urlbarBudget", Term::atom(&self.urlbar_budget.to_string())),
        ])
    }

    pub fn cookie_jar(&self, host: &Term) -> &[Term] {
        self.cookies.iter().find(|(h, _)| h == host).map(|(_, c)| c.as_slice()).unwrap_or(&[])
    }

    pub fn tb_key(&self, host: &Term) -> Option<&Term> {
        self.token_bindings.iter().find(|(h, _)| h == host).map(|(_, k)| k)
    }

    fn tb_key_or_new(&mut self, host: &Term, ctx: &mut Ctx) -> Term {
        if let Some(k) = self.tb_key(host) {
            return k.clone();
        }
        let k = ctx.fresh("tb_key");
        self.token_bindings.push((host.clone(), k.clone()));
        k
    }

    fn uses_tb(&self, host: &Term) -> bool {
        self.use_tb.contains(host)
    }

    fn mark_tb(&mut self, host: &Term) {
        if !self.uses_tb(host) {
            self.use_tb.push(host.clone());
        }
    }

    fn set_ref_tb(&mut self, host: &Term, referred: &Term) {
        self.ref_tb_for.retain(|(h, _)| h != host);
        self.ref_tb_for.push((host.clone(), referred.clone()));
    }

    fn ref_tb_of(&self, host: &Term) -> Option<Term> {
        self.ref_tb_for.iter().find(|(h, _)| h == host).map(|(_, r)| r.clone())
    }

    fn runnable(d: &Document) -> bool {
        !d.ran
            && matches!(
                d.script.as_atom(),
                Some(SCRIPT_CLIENT_INDEX | SCRIPT_C_GET_FRAGMENT | SCRIPT_AS_FORM | ATT_SCRIPT)
            )
    }

    /// Names of the user actions available on a trigger.
    pub fn trigger_options(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .documents
            .iter()
            .filter(|d| Self::runnable(d))
            .map(|d| format!("script:{}", d.script.as_atom().unwrap_or("")))
            .collect();
        if self.urlbar_budget > 0 {
            out.extend(self.urlbar.iter().map(|u| format!("urlbar:{}{}", u.host, u.path)));
        }
        out
    }

    pub fn receive(&mut self, ev: &Event, ctx: &mut Ctx) -> Flow {
        let m = &ev.msg;
        if m.as_atom() == Some("TRIGGER") {
            return self.on_trigger(ctx);
        }
        if let Some(i) = self.pending_requests.iter().position(|p| match &p.key {
            Some(k) => Response::from_term(&dec_s(m, k)).is_some(),
            None => false,
        }) {
            let p = self.pending_requests[i].clone();
            let resp = Response::from_term(&dec_s(m, p.key.as_ref().or_halt()?)).or_halt()?;
            guard(resp.nonce == p.request.nonce)?;
            self.pending_requests.remove(i);
            return self.process_response(&resp, &p.reference, &p.request, &p.url, p.key.as_ref(), &p.addr, ctx);
        }
        if let Some(resp) = Response::from_term(m) {
            let i = self
                .pending_requests
                .iter()
                .position(|p| p.key.is_none() && p.request.nonce == resp.nonce)
                .or_halt()?;
            let p = self.pending_requests.remove(i);
            return self.process_response(&resp, &p.reference, &p.request, &p.url, None, &p.addr, ctx);
        }
        if let Some([tag, domain, addr, nonce]) = m.as_seq() {
            if tag.as_atom() == Some("DNSResolved") {
                return self.on_dns(domain, addr, nonce, ctx);
            }
        }
        Err(Halt)
    }

    fn on_trigger(&mut self, ctx: &mut Ctx) -> Flow {
        let opts = self.trigger_options();
        let pick = ctx.choose("browser.action", opts.clone())?;
        let runnable: Vec<usize> = (0..self.documents.len()).filter(|&i| Self::runnable(&self.documents[i])).collect();
        if pick < runnable.len() {
            let d = runnable[pick];
            self.documents[d].ran = true;
            return self.run_script(d, ctx);
        }
        let url = self.urlbar[pick - runnable.len()].clone();
        self.urlbar_budget -= 1;
        let window = ctx.fresh("window");
        let mut req = Request::new(ctx.fresh("req"), GET, url.host.clone(), "/");
        req.path = url.path.clone();
        req.params = url.params.clone();
        self.http_send(window, req, url, None, None, None, None, ctx)
    }

    fn run_script(&mut self, d: usize, ctx: &mut Ctx) -> Flow {
        let doc = self.documents[d].clone();
        let host = doc.location.host.clone();
        let origin = Term::pair(host.clone(), doc.location.protocol.clone());
        let referrer = Some(doc.location.to_term());
        let policy = doc.headers.get("ReferrerPolicy").cloned();
        match doc.script.as_atom().or_halt()? {
            SCRIPT_CLIENT_INDEX => {
                let id = ctx.choose_term("identity", &self.ids)?;
                let url = Url::https(host.as_dom().or_halt()?, "/startLogin");
                let mut req = Request::new(ctx.fresh("req"), POST, host, "/startLogin");
                req.body = id;
                ctx.fact(Fact::StartLogin { browser: ctx.me, request: req.nonce.clone() });
                self.http_send(doc.window, req, url, Some(origin), referrer, policy, None, ctx)
            }
            SCRIPT_C_GET_FRAGMENT => {
                let mut url = doc.location.clone();
                url.protocol = Term::atom(HTTPS);
                url.params = Term::empty();
                url.fragment = Term::empty();
                let mut req = Request::new(ctx.fresh("req"), POST, host, "");
                req.path = url.path.clone();
                req.body = if doc.location.fragment.is_bot() { Term::empty() } else { doc.location.fragment.clone() };
                self.http_send(doc.window, req, url, Some(origin), referrer, policy, None, ctx)
            }
            SCRIPT_AS_FORM => {
                let governed: Vec<Term> = self.ids.iter().filter(|id| id.proj(2) == host).cloned().collect();
                let identity = ctx.choose_term("identity", &governed)?;
                let secret = self.secrets.iter().find(|(i, _)| *i == identity).map(|(_, s)| s.clone()).or_halt()?;
                let form = doc.scriptstate.with("identity", identity.clone()).with("password", secret);
                let state = match doc.scriptstate.get("request_jws") {
                    Some(jws) => extract_msg(jws).at("state"),
                    None => doc.scriptstate.at("state"),
                };
                ctx.fact(Fact::AuthFormSubmitted { browser: ctx.me, identity, host: host.clone(), state });
                let url = Url::https(host.as_dom().or_halt()?, "/auth2");
                let mut req = Request::new(ctx.fresh("req"), POST, host, "/auth2");
                req.body = form;
                self.http_send(doc.window, req, url, Some(origin), referrer, policy, None, ctx)
            }
            ATT_SCRIPT => {
                // scriptstate: list of commands ⟨HREF, url⟩ or ⟨FORM, url, method, data⟩
                let cmds = doc.scriptstate.as_seq().or_halt()?.to_vec();
                let cmd = ctx.choose_term("att_script", &cmds)?;
                let url = Url::from_term(&cmd.proj(2)).or_halt()?;
                let (method, body, form_origin) = match cmd.proj(1).as_atom() {
                    Some("HREF") => (GET, Term::empty(), None),
                    Some("FORM") => {
                        let m = if cmd.proj(3).as_atom() == Some(POST) { POST } else { GET };
                        (m, cmd.proj(4), Some(origin))
                    }
                    _ => return Err(Halt),
                };
                let mut req = Request::new(ctx.fresh("req"), method, url.host.clone(), "");
                req.path = url.path.clone();
                req.params = url.params.clone();
                req.body = body;
                self.http_send(doc.window, req, url, form_origin, referrer, policy, None, ctx)
            }
            _ => Err(Halt),
        }
    }

    /// `HTTP_SEND`: cookies, Origin and Referer headers, then DNS.
    #[allow(clippy::too_many_arguments)]
    fn http_send(
        &mut self,
        reference: Term,
        mut msg: Request,
        mut url: Url,
        origin: Option<Term>,
        referrer: Option<Term>,
        policy: Option<Term>,
        ref_tb: Option<Term>,
        ctx: &mut Ctx,
    ) -> Flow {
        if self.sts.contains(&msg.host) {
            url.protocol = Term::atom(HTTPS);
        }
        let https = url.protocol.as_atom() == Some(HTTPS);
        let cookies: Vec<Term> = self
            .cookie_jar(&msg.host)
            .iter()
            .filter(|c| !cookie_secure(c) || https)
            .map(|c| Term::pair(c.proj(1), cookie_value(c)))
            .collect();
        msg.headers = msg.headers.with("Cookie", Term::seq(cookies));
        if let Some(o) = origin {
            msg.headers = msg.headers.with("Origin", o);
        }
        let policy = policy.and_then(|p| p.as_atom().map(str::to_string));
        if let Some(r) = referrer.filter(|_| policy.as_deref() != Some("noreferrer")) {
            if let Some(mut ru) = Url::from_term(&r) {
                if policy.as_deref() == Some("origin") {
                    ru.path = Term::atom("/");
                    ru.params = Term::empty();
                }
                ru.fragment = Term::bot();
                msg.headers = msg.headers.with("Referer", ru.to_term());
            }
        }
        let nonce = ctx.fresh("dns");
        let host = msg.host.clone();
        self.pending_dns.push((nonce.clone(), Pending { reference, request: msg, url, ref_tb }));
        let q = crate::https::dns_request(&host, &nonce);
        let dns = ctx.world.dns_addr.clone();
        ctx.emit(dns, self.addr.clone(), q);
        Ok(())
    }

    fn on_dns(&mut self, domain: &Term, addr: &Term, nonce: &Term, ctx: &mut Ctx) -> Flow {
        let i = self.pending_dns.iter().position(|(n, _)| n == nonce).or_halt()?;
        guard(addr.as_addr().is_some() && self.pending_dns[i].1.request.host == *domain)?;
        let (_, p) = self.pending_dns.remove(i);
        let https = p.url.protocol.as_atom() == Some(HTTPS);
        let out = if https && self.uses_tb(&p.url.host) {
            let mut tb_req = Request::new(ctx.fresh("req"), GET, p.url.host.clone(), "/OAUTB-prepare");
            tb_req.params = p.url.params.clone();
            let key = ctx.fresh("k_tls");
            let server = ctx.world.key_of(&p.request.host).or_halt()?;
            let msg = Term::enc_a(Term::pair(tb_req.to_term(), key.clone()), server);
            let mut saved = p.clone();
            if saved.ref_tb.is_none() {
                saved.ref_tb = self.ref_tb_of(&p.url.host);
            }
            self.tb_requests.push((tb_req.nonce.clone(), saved));
            self.pending_requests.push(Inflight {
                reference: p.reference,
                request: tb_req,
                url: p.url,
                key: Some(key),
                addr: addr.clone(),
            });
            msg
        } else if https {
            let key = ctx.fresh("k_tls");
            let server = ctx.world.key_of(&p.request.host).or_halt()?;
            let msg = Term::enc_a(Term::pair(p.request.to_term(), key.clone()), server);
            self.pending_requests.push(Inflight {
                reference: p.reference,
                request: p.request,
                url: p.url,
                key: Some(key),
                addr: addr.clone(),
            });
            msg
        } else {
            let msg = p.request.to_term();
            self.pending_requests.push(Inflight {
                reference: p.reference,
                request: p.request,
                url: p.url,
                key: None,
                addr: addr.clone(),
            });
            msg
        };
        ctx.emit(addr.clone(), self.addr.clone(), out);
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn process_response(
        &mut self,
        resp: &Response,
        reference: &Term,
        request: &Request,
        request_url: &Url,
        key: Option<&Term>,
        addr: &Term,
        ctx: &mut Ctx,
    ) -> Flow {
        if let Some(tb_nonce) = resp.body.get("tb_nonce") {
            let i = self.tb_requests.iter().position(|(n, _)| *n == request.nonce).or_halt()?;
            let (_, orig) = self.tb_requests.remove(i);
            let server = ctx.world.key_of(&request.host).or_halt()?;
            let e = ekm(&request.nonce, tb_nonce, &server);
            let prov_key = self.tb_key_or_new(&orig.url.host, ctx);
            let prov = tb_message(&prov_key, &e);
            let refd = match &orig.ref_tb {
                Some(h) => {
                    let k = self.tb_key_or_new(h, ctx);
                    tb_message(&k, &e)
                }
                None => Term::empty(),
            };
            let mut msg = orig.request.clone();
            msg.headers = msg.headers.with("Sec-Token-Binding", Term::dict([("prov", prov), ("ref", refd)]));
            // continuation on the same connection: reuse the session key
            let key = key.or_halt()?.clone();
            let server = ctx.world.key_of(&msg.host).or_halt()?;
            let out = Term::enc_a(Term::pair(msg.to_term(), key.clone()), server);
            self.pending_requests.push(Inflight {
                reference: orig.reference,
                request: msg,
                url: orig.url,
                key: Some(key),
                addr: addr.clone(),
            });
            ctx.emit(addr.clone(), self.addr.clone(), out);
            return Ok(());
        }
        if let Some(sc) = resp.headers.get("Set-Cookie") {
            for c in sc.as_seq().unwrap_or_default() {
                let jar = self.cookie_jar(&request.host).to_vec();
                let jar = add_cookie(&jar, c, &request_url.protocol);
                self.cookies.retain(|(h, _)| *h != request.host);
                self.cookies.push((request.host.clone(), jar));
            }
        }
        if resp.headers.has("Strict-Transport-Security") && request_url.is_https() && !self.sts.contains(&request.host)
        {
            self.sts.push(request.host.clone());
        }
        let is_window = self.documents.iter().any(|d| d.window == *reference) || reference.nonce_label() == Some("window");
        if (resp.status_is(303) || resp.status_is(307)) && resp.headers.has("Location") {
            let mut url = Url::from_term(&resp.headers.at("Location")).or_halt()?;
            if url.fragment.is_bot() {
                url.fragment = request_url.fragment.clone();
            }
            let referred = resp.headers.at("Include-Referred-Token-Binding-ID").is_top();
            if referred {
                self.mark_tb(&request.host);
                self.mark_tb(&url.host);
                self.set_ref_tb(&url.host, &request.host);
            }
            let (mut method, mut body) = (request.method.clone(), request.body.clone());
            let origin = request
                .headers
                .get("Origin")
                .map(|o| Term::pair(o.clone(), Term::pair(request.host.clone(), url.protocol.clone())));
            if resp.status_is(303) && !request.is(GET) && !request.is("HEAD") {
                method = Term::atom(GET);
                body = Term::empty();
            }
            if is_window {
                let mut req = Request::new(ctx.fresh("req"), GET, url.host.clone(), "");
                req.method = method;
                req.path = url.path.clone();
                req.params = url.params.clone();
                req.body = body;
                let referrer = request.headers.get("Referer").cloned();
                let policy = resp.headers.get("ReferrerPolicy").cloned();
                let ref_tb = referred.then(|| request.host.clone());
                return self.http_send(reference.clone(), req, url, origin, referrer, policy, ref_tb, ctx);
            }
        }
        if !is_window {
            return Err(Halt);
        }
        let (script, scriptstate) = resp.body.as_pair().or_halt()?;
        let doc = Document {
            window: reference.clone(),
            location: request_url.clone(),
            headers: resp.headers.clone(),
            script: script.clone(),
            scriptstate: scriptstate.clone(),
            ran: false,
        };
        self.documents.retain(|d| d.window != *reference);
        self.documents.push(doc);
        Ok(())
    }
}

/// Commands understood by `att_script`.
pub fn form_command(url: &Url, data: &Term) -> Term {
    Term::seq(vec![Term::atom("FORM"), url.to_term(), Term::atom(POST), dict_union(&Term::empty(), data)])
}

pub fn href_command(url: &Url) -> Term {
    Term::seq(vec![Term::atom("HREF"), url.to_term()])
}
