use fapi_sim::https::{dispatch, dns_response, reply, HttpsRole, Request, Response, ServerCore, Url};
use fapi_sim::runtime::choice::RandomChooser;
use fapi_sim::runtime::{Ctx, Event, Flow, Mode, Proc, World};
use fapi_sim::scenario::Scenario;
use fapi_sim::terms::Term;
use std::sync::Arc;

struct Echo {
    core: ServerCore,
    got: Option<Term>,
}

impl HttpsRole for Echo {
    fn core(&mut self) -> &mut ServerCore {
        &mut self.core
    }

    fn on_request(&mut self, req: &Request, key: &Term, a: &Term, f: &Term, ctx: &mut Ctx) -> Flow {
        reply(ctx, req, key, a, f, 200, Term::empty(), req.body.clone());
        Ok(())
    }

    fn on_response(&mut self, resp: &Response, _: &Term, _: &Request, _: &Term, _: &mut Ctx) -> Flow {
        self.got = Some(resp.body.clone());
        Ok(())
    }
}

struct Rig {
    world: World,
    procs: Vec<Arc<Proc>>,
    nonce: u64,
}

impl Rig {
    fn new() -> (Rig, Echo, Echo) {
        let sc = Scenario::bundled("honest-rw-mtls-web").unwrap();
        let init = sc.init_for(Mode::Seeded);
        let core = |name: &str| {
            let p = sc.world.proc_named(name).unwrap();
            match &*init.procs[p] {
                Proc::Client(c) => c.core.clone(),
                Proc::Rs(r) => r.core.clone(),
                _ => unreachable!(),
            }
        };
        let (a, b) = (core("c1"), core("rs1"));
        let rig = Rig { world: sc.world.clone(), procs: init.procs.clone(), nonce: 10_000 };
        (rig, Echo { core: a, got: None }, Echo { core: b, got: None })
    }

    /// Runs `f` with a fresh context and returns what it emitted.
    fn run(&mut self, f: impl FnOnce(&mut Ctx) -> Flow) -> (Flow, Vec<Event>) {
        let mut ch = RandomChooser::new(0);
        let mut ctx = Ctx::new(&self.world, &self.procs, 0, self.nonce, &mut ch);
        let flow = f(&mut ctx);
        let out = ctx.emitted().to_vec();
        self.nonce += 100;
        (flow, out)
    }
}

fn request(body: &str) -> Request {
    let mut r = Request::new(Term::nonce(1, "req"), "POST", Term::dom("rs.example"), "/echo");
    r.body = Term::atom(body);
    r
}

#[test]
fn echo_round_trip_preserves_body() {
    let (mut rig, mut client, mut server) = Rig::new();
    let (_, out) = rig.run(|ctx| client.core.simple_send(Term::atom("ref"), request("hello"), ctx));
    let dns_nonce = out[0].msg.as_seq().unwrap()[2].clone();
    let answer = Event {
        receiver: client.core.addr.clone(),
        sender: rig.world.dns_addr.clone(),
        msg: dns_response(&Term::dom("rs.example"), &server.core.addr, &dns_nonce),
    };
    let (flow, out) = rig.run(|ctx| dispatch(&mut client, &answer, ctx));
    assert!(flow.is_ok());
    assert_eq!(out[0].receiver, server.core.addr);
    let (flow, back) = rig.run(|ctx| dispatch(&mut server, &out[0], ctx));
    assert!(flow.is_ok());
    let (flow, _) = rig.run(|ctx| dispatch(&mut client, &back[0], ctx));
    assert!(flow.is_ok());
    assert_eq!(client.got, Some(Term::atom("hello")));
    assert!(client.core.pending_requests.is_empty());
    // the same response cannot be consumed twice
    let (flow, _) = rig.run(|ctx| dispatch(&mut client, &back[0], ctx));
    assert!(flow.is_err());
}

#[test]
fn dns_answer_with_wrong_nonce_is_dropped() {
    let (mut rig, mut client, server) = Rig::new();
    assert!(rig.run(|ctx| client.core.simple_send(Term::atom("ref"), request("x"), ctx)).0.is_ok());
    let forged = Event {
        receiver: client.core.addr.clone(),
        sender: rig.world.dns_addr.clone(),
        msg: dns_response(&Term::dom("rs.example"), &server.core.addr, &Term::nonce(424_242, "dns")),
    };
    let (flow, out) = rig.run(|ctx| dispatch(&mut client, &forged, ctx));
    assert!(flow.is_err() && out.is_empty());
    assert_eq!(client.core.pending_dns.len(), 1);
}

#[test]
fn response_under_wrong_key_is_dropped() {
    let (mut rig, mut client, server) = Rig::new();
    let (_, out) = rig.run(|ctx| client.core.simple_send(Term::atom("ref"), request("x"), ctx));
    let dns_nonce = out[0].msg.as_seq().unwrap()[2].clone();
    let answer = Event {
        receiver: client.core.addr.clone(),
        sender: rig.world.dns_addr.clone(),
        msg: dns_response(&Term::dom("rs.example"), &server.core.addr, &dns_nonce),
    };
    assert!(rig.run(|ctx| dispatch(&mut client, &answer, ctx)).0.is_ok());
    let req_nonce = client.core.pending_requests[0].request.nonce.clone();
    let fake = Term::enc_s(Response::new(req_nonce, 200, Term::empty(), Term::atom("evil")).to_term(), Term::nonce(7, "k"));
    let ev = Event { receiver: client.core.addr.clone(), sender: server.core.addr.clone(), msg: fake };
    let (flow, _) = rig.run(|ctx| dispatch(&mut client, &ev, ctx));
    assert!(flow.is_err());
    assert_eq!(client.core.pending_requests.len(), 1);
    assert!(client.got.is_none());
}

#[test]
fn message_shapes_round_trip() {
    let mut r = request("b");
    r.headers = Term::dict([("Origin", Term::atom("o"))]);
    assert_eq!(Request::from_term(&r.to_term()), Some(r.clone()));
    assert_eq!(r.header("Origin"), Term::atom("o"));
    let resp = Response::new(Term::nonce(3, "req"), 303, Term::empty(), Term::empty());
    assert!(Response::from_term(&resp.to_term()).unwrap().status_is(303));
    let u = Url::https("client.example", "/redirect");
    assert_eq!(Url::from_term(&u.to_term()), Some(u.clone()));
    assert!(u.is_https());
    assert!(Request::from_term(&Term::atom("junk")).is_none());
}
