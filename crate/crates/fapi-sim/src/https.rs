//! HTTP(S) message shapes and the generic HTTPS server skeleton shared by
//! client, authorization server and resource server.

use crate::runtime::{Ctx, Event, Flow, Halt};
use crate::terms::{dec_a, dec_s, Term};

pub const GET: &str = "GET";
pub const POST: &str = "POST";
pub const HTTPS: &str = "S";
pub const HTTP: &str = "P";

#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub nonce: Term,
    pub method: Term,
    pub host: Term,
    pub path: Term,
    pub params: Term,
    pub headers: Term,
    pub body: Term,
}

impl Request {
    pub fn new(nonce: Term, method: &str, host: Term, path: &str) -> Self {
        Request {
            nonce,
            method: Term::atom(method),
            host,
            path: Term::atom(path),
            params: Term::empty(),
            headers: Term::empty(),
            body: Term::empty(),
        }
    }

    pub fn to_term(&self) -> Term {
        Term::seq(vec![
            Term::atom("HTTPReq"),
            self.nonce.clone(),
            self.method.clone(),
            self.host.clone(),
            self.path.clone(),
            self.params.clone(),
            self.headers.clone(),
            self.body.clone(),
        ])
    }

    pub fn from_term(t: &Term) -> Option<Request> {
        match t.as_seq()? {
            [tag, nonce, method, host, path, params, headers, body] if tag.as_atom() == Some("HTTPReq") => {
                Some(Request {
                    nonce: nonce.clone(),
                    method: method.clone(),
                    host: host.clone(),
                    path: path.clone(),
                    params: params.clone(),
                    headers: headers.clone(),
                    body: body.clone(),
                })
            }
            _ => None,
        }
    }

    pub fn is(&self, method: &str) -> bool {
        self.method.as_atom() == Some(method)
    }

    pub fn path_str(&self) -> &str {
        self.path.as_atom().unwrap_or("")
    }

    pub fn header(&self, name: &str) -> Term {
        self.headers.at(name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub nonce: Term,
    pub status: Term,
    pub headers: Term,
    pub body: Term,
}

impl Response {
    pub fn new(nonce: Term, status: u16, headers: Term, body: Term) -> Self {
        Response { nonce, status: Term::atom(&status.to_string()), headers, body }
    }

    pub fn to_term(&self) -> Term {
        Term::seq(vec![
            Term::atom("HTTPResp"),
            self.nonce.clone(),
            self.status.clone(),
            self.headers.clone(),
            self.body.clone(),
        ])
    }

    pub fn from_term(t: &Term) -> Option<Response> {
        match t.as_seq()? {
            [tag, nonce, status, headers, body] if tag.as_atom() == Some("HTTPResp") => Some(Response {
                nonce: nonce.clone(),
                status: status.clone(),
                headers: headers.clone(),
                body: body.clone(),
            }),
            _ => None,
        }
    }

    pub fn status_is(&self, code: u16) -> bool {
        self.status.as_atom() == Some(code.to_string().as_str())
    }
}

/// `⟨URL, protocol, host, path, parameters, fragment⟩`
#[derive(Clone, Debug, PartialEq)]
pub struct Url {
    pub protocol: Term,
    pub host: Term,
    pub path: Term,
    pub params: Term,
    pub fragment: Term,
}

impl Url {
    pub fn https(host: &str, path: &str) -> Url {
        Url {
            protocol: Term::atom(HTTPS),
            host: Term::dom(host),
            path: Term::atom(path),
            params: Term::empty(),
            fragment: Term::bot(),
        }
    }

    pub fn to_term(&self) -> Term {
        Term::seq(vec![
            Term::atom("URL"),
            self.protocol.clone(),
            self.host.clone(),
            self.path.clone(),
            self.params.clone(),
            self.fragment.clone(),
        ])
    }

    pub fn from_term(t: &Term) -> Option<Url> {
        match t.as_seq()? {
            [tag, protocol, host, path, params, fragment] if tag.as_atom() == Some("URL") => Some(Url {
                protocol: protocol.clone(),
                host: host.clone(),
                path: path.clone(),
                params: params.clone(),
                fragment: fragment.clone(),
            }),
            _ => None,
        }
    }

    pub fn is_https(&self) -> bool {
        self.protocol.as_atom() == Some(HTTPS)
    }

    /// Same protocol, host and path.
    pub fn same_endpoint(&self, other: &Url) -> bool {
        self.protocol == other.protocol && self.host == other.host && self.path == other.path
    }
}

/// Merges dictionary `extra` into `base`; `⊥` counts as empty.
pub fn dict_union(base: &Term, extra: &Term) -> Term {
    let mut out = if base.as_seq().is_some() { base.clone() } else { Term::empty() };
    for e in extra.as_seq().unwrap_or_default() {
        if let Some((k, v)) = e.as_pair() {
            out = out.with_t(k.clone(), v.clone());
        }
    }
    out
}

pub fn origin_of(host: &Term) -> Term {
    Term::pair(host.clone(), Term::atom(HTTPS))
}

/// A token binding message `[id: pub(k), sig: sig(ekm, k)]`.
pub fn tb_message(key: &Term, ekm: &Term) -> Term {
    Term::dict([("id", Term::pub_key(key.clone())), ("sig", Term::sig(ekm.clone(), key.clone()))])
}

/// `hash(⟨nonce, tb_nonce, server public key⟩)`
pub fn ekm(request_nonce: &Term, tb_nonce: &Term, server_pub: &Term) -> Term {
    Term::hash(Term::seq(vec![request_nonce.clone(), tb_nonce.clone(), server_pub.clone()]))
}

pub fn dns_request(host: &Term, nonce: &Term) -> Term {
    Term::seq(vec![Term::atom("DNSResolve"), host.clone(), nonce.clone()])
}

pub fn dns_response(domain: &Term, addr: &Term, nonce: &Term) -> Term {
    Term::seq(vec![Term::atom("DNSResolved"), domain.clone(), addr.clone(), nonce.clone()])
}

#[derive(Clone, Debug)]
pub struct PendingDns {
    pub nonce: Term,
    pub reference: Term,
    pub request: Request,
}

#[derive(Clone, Debug)]
pub struct PendingRequest {
    pub reference: Term,
    pub request: Request,
    pub key: Term,
    pub addr: Term,
}

/// State components common to every HTTPS server.
#[derive(Clone, Debug)]
pub struct ServerCore {
    pub addr: Term,
    pub tls_keys: Vec<(Term, Term)>,
    pub pending_dns: Vec<PendingDns>,
    pub pending_requests: Vec<PendingRequest>,
}

impl ServerCore {
    pub fn new(addr: Term, tls_keys: Vec<(Term, Term)>) -> Self {
        ServerCore { addr, tls_keys, pending_dns: Vec::new(), pending_requests: Vec::new() }
    }

    pub fn owns(&self, host: &Term) -> bool {
        self.tls_keys.iter().any(|(d, _)| d == host)
    }

    pub fn to_term(&self) -> Term {
        Term::dict([
            ("tlskeys", Term::seq(self.tls_keys.iter().map(|(d, k)| Term::pair(d.clone(), k.clone())).collect())),
            (
                "pendingDNS",
                Term::seq(
                    self.pending_dns
                        .iter()
                        .map(|p| Term::pair(p.nonce.clone(), Term::pair(p.reference.clone(), p.request.to_term())))
                        .collect(),
                ),
            ),
            (
                "pendingRequests",
                Term::seq(
                    self.pending_requests
                        .iter()
                        .map(|p| {
                            Term::seq(vec![p.reference.clone(), p.request.to_term(), p.key.clone(), p.addr.clone()])
                        })
                        .collect(),
                ),
            ),
        ])
    }

    /// Stores the request under a fresh DNS nonce and asks for resolution.
    pub fn simple_send(&mut self, reference: Term, request: Request, ctx: &mut Ctx) -> Flow {
        let nonce = ctx.fresh("dns");
        let query = dns_request(&request.host, &nonce);
        self.pending_dns.push(PendingDns { nonce, reference, request });
        let dns = ctx.world.dns_addr.clone();
        ctx.emit(dns, self.addr.clone(), query);
        Ok(())
    }

    /// Decrypts `enc_a(⟨request, key⟩, pub(k))` for an own TLS key whose
    /// domain matches the request host.
    pub fn open_request(&self, msg: &Term) -> Option<(Request, Term)> {
        for (dom, k) in &self.tls_keys {
            let inner = dec_a(msg, k);
            if let Some((req, key)) = inner.as_pair() {
                if let Some(r) = Request::from_term(req) {
                    if r.host == *dom {
                        return Some((r, key.clone()));
                    }
                }
            }
        }
        None
    }

    fn on_dns_response(&mut self, msg: &Term, ctx: &mut Ctx) -> Flow {
        let Some([_, domain, addr, nonce]) = msg.as_seq() else { return Err(Halt) };
        let i = self.pending_dns.iter().position(|p| p.nonce == *nonce).ok_or(Halt)?;
        if self.pending_dns[i].request.host != *domain {
            return Err(Halt);
        }
        let p = self.pending_dns.remove(i);
        let key = ctx.fresh("k_tls");
        let server_pub = ctx.world.key_of(&p.request.host).ok_or(Halt)?;
        let out = Term::enc_a(Term::pair(p.request.to_term(), key.clone()), server_pub);
        self.pending_requests.push(PendingRequest {
            reference: p.reference,
            request: p.request,
            key,
            addr: addr.clone(),
        });
        ctx.emit(addr.clone(), self.addr.clone(), out);
        Ok(())
    }

    fn take_response(&mut self, msg: &Term) -> Option<(PendingRequest, Response)> {
        let i = self.pending_requests.iter().position(|p| {
            Response::from_term(&dec_s(msg, &p.key)).is_some_and(|r| r.nonce == p.request.nonce)
        })?;
        let p = self.pending_requests.remove(i);
        let resp = Response::from_term(&dec_s(msg, &p.key))?;
        Some((p, resp))
    }
}

/// Role hooks invoked by [`dispatch`].
pub trait HttpsRole {
    fn core(&mut self) -> &mut ServerCore;

    /// `a` is the address the request was sent to, `f` its sender.
    fn on_request(&mut self, req: &Request, key: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow;

    fn on_response(
        &mut self,
        resp: &Response,
        reference: &Term,
        request: &Request,
        key: &Term,
        ctx: &mut Ctx,
    ) -> Flow;
}

pub fn is_dns_response(msg: &Term) -> bool {
    matches!(msg.as_seq(), Some([tag, _, _, _]) if tag.as_atom() == Some("DNSResolved"))
}

/// Main relation of a generic HTTPS server.
pub fn dispatch<R: HttpsRole>(role: &mut R, ev: &Event, ctx: &mut Ctx) -> Flow {
    if let Some((req, key)) = role.core().open_request(&ev.msg) {
        return role.on_request(&req, &key, &ev.receiver, &ev.sender, ctx);
    }
    if is_dns_response(&ev.msg) {
        return role.core().on_dns_response(&ev.msg, ctx);
    }
    if let Some((p, resp)) = role.core().take_response(&ev.msg) {
        return role.on_response(&resp, &p.reference, &p.request, &p.key, ctx);
    }
    Err(Halt)
}

/// Encrypts a response for the requester and emits it.
#[allow(clippy::too_many_arguments)]
pub fn reply(ctx: &mut Ctx, req: &Request, key: &Term, a: &Term, f: &Term, status: u16, headers: Term, body: Term) {
    let m = Term::enc_s(Response::new(req.nonce.clone(), status, headers, body).to_term(), key.clone());
    ctx.emit(f.clone(), a.clone(), m);
}
