//! Resource server with read and read-write endpoints.

use crate::https::{dispatch, ekm, reply, HttpsRole, Request, Response, ServerCore, POST};
use crate::runtime::{guard, nofail, Ctx, Event, Fact, Flow, Halt, OrHalt};
use crate::terms::{check_sig, extract_msg, Term};

#[derive(Clone, Debug)]
pub struct ResourceServer {
    pub core: ServerCore,
    pub ids: Vec<Term>,
    pub auth_serv: Term,
    /// `(nonce, client key)`
    pub mtls_requests: Vec<(Term, Term)>,
    pub oautb_ekm: Vec<Term>,
}

impl ResourceServer {
    pub fn to_term(&self) -> Term {
        Term::dict([
            ("core", self.core.to_term()),
            ("ids", Term::seq(self.ids.clone())),
            ("authServ", self.auth_serv.clone()),
            (
                "mtlsRequests",
                Term::seq(self.mtls_requests.iter().map(|(n, k)| Term::pair(n.clone(), k.clone())).collect()),
            ),
            ("oautbEKM", Term::seq(self.oautb_ekm.clone())),
        ])
    }

    pub fn receive(&mut self, ev: &Event, ctx: &mut Ctx) -> Flow {
        dispatch(self, ev, ctx)
    }

    /// Access token entries of the trusted authorization server.
    fn entries<'c>(&self, ctx: &'c Ctx) -> &'c [Term] {
        ctx.world
            .as_by_domain
            .get(&self.auth_serv)
            .and_then(|&p| ctx.proc(p).as_auth_server())
            .map(|a| a.access_tokens.as_slice())
            .unwrap_or(&[])
    }

    /// The identity whose entry matches `shape`, if any.
    fn find_id(&self, ctx: &Ctx, shape: impl Fn(&Term, &[Term]) -> bool) -> Result<Term, Halt> {
        let entries = self.entries(ctx);
        self.ids.iter().find(|id| entries.iter().any(|e| e.as_seq().is_some_and(|s| shape(id, s)))).cloned().or_halt()
    }

    #[allow(clippy::too_many_arguments)]
    fn issue(&self, m: &Request, k: &Term, a: &Term, f: &Term, id: Term, token: Term, write: bool, ctx: &mut Ctx) {
        let label = format!("{}[{}]", if write { "wNonce" } else { "rNonce" }, id.render());
        let resource = ctx.fresh(&label);
        ctx.fact(Fact::ResourceIssued { rs: ctx.me, resource: resource.clone(), identity: id, token });
        reply(ctx, m, k, a, f, 200, Term::empty(), Term::dict([("resource", resource)]));
    }

    fn resource_rw(&mut self, m: &Request, k: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow {
        if ctx.world.fixes.at_iss {
            let at_iss = m.body.get("at_iss").or_halt()?;
            guard(*at_iss == self.auth_serv)?;
        }
        let token = nofail(m.header("Authorization").proj(2))?;
        let id = if m.body.has("MTLS_AuthN") {
            let authn = m.body.at("MTLS_AuthN");
            let i = self.mtls_requests.iter().position(|(n, _)| *n == authn).or_halt()?;
            let (_, key) = self.mtls_requests.remove(i);
            self.find_id(ctx, |id, s| {
                matches!(s, [tag, u, _, t, kk, rw]
                    if tag.as_atom() == Some("MTLS") && u == id && *t == token && *kk == key && rw.as_atom() == Some("rw"))
            })?
        } else {
            let prov = m.header("Sec-Token-Binding").at("prov");
            let (tb_id, sig) = (prov.at("id"), prov.at("sig"));
            guard(check_sig(&sig, &tb_id).is_top())?;
            let e = extract_msg(&sig);
            let i = self.oautb_ekm.iter().position(|x| *x == e).or_halt()?;
            let id = self.find_id(ctx, |id, s| {
                matches!(s, [tag, u, _, t, kk, rw]
                    if tag.as_atom() == Some("OAUTB") && u == id && *t == token && *kk == tb_id && rw.as_atom() == Some("rw"))
            })?;
            self.oautb_ekm.remove(i);
            id
        };
        let read = ctx.choose_bool("read")?;
        self.issue(m, k, a, f, id, token, !read, ctx);
        Ok(())
    }
}

impl HttpsRole for ResourceServer {
    fn core(&mut self) -> &mut ServerCore {
        &mut self.core
    }

    fn on_request(&mut self, m: &Request, k: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow {
        match m.path_str() {
            "/MTLS-prepare" => {
                let nonce = ctx.fresh("mtls_nonce");
                let key = m.body.at("pub_key");
                self.mtls_requests.push((nonce.clone(), key.clone()));
                let own = ctx.world.key_of(&m.host).or_halt()?;
                reply(ctx, m, k, a, f, 200, Term::empty(), Term::enc_a(Term::pair(nonce, own), key));
                Ok(())
            }
            "/OAUTB-prepare" => {
                let tb_nonce = ctx.fresh("tb_nonce");
                let own = ctx.world.key_of(&m.host).or_halt()?;
                self.oautb_ekm.push(ekm(&m.nonce, &tb_nonce, &own));
                reply(ctx, m, k, a, f, 200, Term::empty(), Term::dict([("tb_nonce", tb_nonce)]));
                Ok(())
            }
            "/resource-r" => {
                let token = nofail(m.header("Authorization").proj(2))?;
                let id = self.find_id(ctx, |id, s| {
                    matches!(s, [u, _, t, r] if u == id && *t == token && r.as_atom() == Some("r"))
                })?;
                self.issue(m, k, a, f, id, token, false, ctx);
                Ok(())
            }
            "/resource-rw" if m.is(POST) => self.resource_rw(m, k, a, f, ctx),
            _ => Err(Halt),
        }
    }

    fn on_response(&mut self, _: &Response, _: &Term, _: &Request, _: &Term, _: &mut Ctx) -> Flow {
        Err(Halt)
    }
}
