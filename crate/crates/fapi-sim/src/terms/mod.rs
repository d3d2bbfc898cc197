//! Symbolic message terms, destructor evaluation and attacker knowledge.
//!
//! Terms are immutable and reference counted. Equality is structural, with a
//! cached hash as a fast reject. Nonces compare by id only; the label is a
//! debugging aid and never affects equality.

mod kb;

pub use kb::KnowledgeBase;

use serde::{Serialize, Serializer};
use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, LazyLock};

/// Constructor symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Fun {
    EncA,
    EncS,
    Sig,
    Mac,
    Hash,
    Pub,
}

impl Fun {
    pub const ALL: [Fun; 6] = [Fun::EncA, Fun::EncS, Fun::Sig, Fun::Mac, Fun::Hash, Fun::Pub];

    pub fn name(self) -> &'static str {
        match self {
            Fun::EncA => "enc_a",
            Fun::EncS => "enc_s",
            Fun::Sig => "sig",
            Fun::Mac => "mac",
            Fun::Hash => "hash",
            Fun::Pub => "pub",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Fun::Hash | Fun::Pub => 1,
            _ => 2,
        }
    }
}

#[derive(Debug)]
enum Node {
    Atom(Arc<str>),
    Nonce { id: u64, label: Arc<str> },
    Addr(Arc<str>),
    Dom(Arc<str>),
    Seq(Vec<Term>),
    App(Fun, Vec<Term>),
}

#[derive(Debug)]
struct Inner {
    hash: u64,
    /// No nonce occurs anywhere below.
    nonce_free: bool,
    node: Node,
}

/// A ground term.
#[derive(Clone)]
pub struct Term(Arc<Inner>);

/// Borrowed view used for pattern matching.
#[derive(Clone, Copy, Debug)]
pub enum View<'a> {
    Atom(&'a str),
    Nonce(u64, &'a str),
    Addr(&'a str),
    Dom(&'a str),
    Seq(&'a [Term]),
    App(Fun, &'a [Term]),
}

const SEED: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(SEED).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_str(tag: u64, s: &str) -> u64 {
    let mut h = mix(tag, s.len() as u64);
    for chunk in s.as_bytes().chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        h = mix(h, u64::from_le_bytes(buf));
    }
    h
}

fn node_hash(node: &Node) -> u64 {
    match node {
        Node::Atom(s) => hash_str(1, s),
        Node::Nonce { id, .. } => mix(2, *id),
        Node::Addr(s) => hash_str(3, s),
        Node::Dom(s) => hash_str(4, s),
        Node::Seq(xs) => xs.iter().fold(mix(5, xs.len() as u64), |h, x| mix(h, x.0.hash)),
        Node::App(f, xs) => xs.iter().fold(mix(6, *f as u64), |h, x| mix(h, x.0.hash)),
    }
}

static TOP: LazyLock<Term> = LazyLock::new(|| Term::atom("⊤"));
static BOT: LazyLock<Term> = LazyLock::new(|| Term::atom("⊥"));
static FAIL: LazyLock<Term> = LazyLock::new(|| Term::atom("FAIL"));
static EMPTY: LazyLock<Term> = LazyLock::new(|| Term::seq(Vec::new()));

impl Term {
    fn make(node: Node) -> Term {
        let hash = node_hash(&node);
        let nonce_free = match &node {
            Node::Nonce { .. } => false,
            Node::Seq(xs) | Node::App(_, xs) => xs.iter().all(|x| x.0.nonce_free),
            _ => true,
        };
        Term(Arc::new(Inner { hash, nonce_free, node }))
    }

    pub fn atom(s: &str) -> Term {
        Term::make(Node::Atom(Arc::from(s)))
    }

    pub fn nonce(id: u64, label: &str) -> Term {
        Term::make(Node::Nonce { id, label: Arc::from(label) })
    }

    pub fn addr(s: &str) -> Term {
        Term::make(Node::Addr(Arc::from(s)))
    }

    pub fn dom(s: &str) -> Term {
        Term::make(Node::Dom(Arc::from(s)))
    }

    pub fn seq(xs: Vec<Term>) -> Term {
        Term::make(Node::Seq(xs))
    }

    pub fn pair(a: Term, b: Term) -> Term {
        Term::seq(vec![a, b])
    }

    /// Applies a constructor. `hash` of a two element sequence is stored in
    /// its canonical form `mac(x, y)`.
    pub fn app(f: Fun, args: Vec<Term>) -> Term {
        assert_eq!(args.len(), f.arity(), "arity mismatch for {}", f.name());
        if f == Fun::Hash {
            if let Node::Seq(xs) = &args[0].0.node {
                if xs.len() == 2 {
                    return Term::make(Node::App(Fun::Mac, xs.clone()));
                }
            }
        }
        Term::make(Node::App(f, args))
    }

    pub fn enc_a(x: Term, k: Term) -> Term {
        Term::app(Fun::EncA, vec![x, k])
    }
    pub fn enc_s(x: Term, k: Term) -> Term {
        Term::app(Fun::EncS, vec![x, k])
    }
    pub fn sig(x: Term, k: Term) -> Term {
        Term::app(Fun::Sig, vec![x, k])
    }
    pub fn mac(x: Term, k: Term) -> Term {
        Term::app(Fun::Mac, vec![x, k])
    }
    pub fn hash(x: Term) -> Term {
        Term::app(Fun::Hash, vec![x])
    }
    pub fn pub_key(k: Term) -> Term {
        Term::app(Fun::Pub, vec![k])
    }

    pub fn top() -> Term {
        TOP.clone()
    }
    pub fn bot() -> Term {
        BOT.clone()
    }
    pub fn fail() -> Term {
        FAIL.clone()
    }
    pub fn empty() -> Term {
        EMPTY.clone()
    }
    pub fn boolean(b: bool) -> Term {
        if b {
            Term::top()
        } else {
            Term::bot()
        }
    }

    pub fn view(&self) -> View<'_> {
        match &self.0.node {
            Node::Atom(s) => View::Atom(s),
            Node::Nonce { id, label } => View::Nonce(*id, label),
            Node::Addr(s) => View::Addr(s),
            Node::Dom(s) => View::Dom(s),
            Node::Seq(xs) => View::Seq(xs),
            Node::App(f, xs) => View::App(*f, xs),
        }
    }

    pub fn hash_value(&self) -> u64 {
        self.0.hash
    }

    pub fn ptr_eq(&self, other: &Term) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn is_fail(&self) -> bool {
        *self == *FAIL
    }
    pub fn is_top(&self) -> bool {
        *self == *TOP
    }
    pub fn is_bot(&self) -> bool {
        *self == *BOT
    }
    pub fn is_empty_seq(&self) -> bool {
        matches!(&self.0.node, Node::Seq(xs) if xs.is_empty())
    }

    pub fn as_atom(&self) -> Option<&str> {
        match &self.0.node {
            Node::Atom(s) => Some(s),
            _ => None,
        }
    }
    pub fn as_dom(&self) -> Option<&str> {
        match &self.0.node {
            Node::Dom(s) => Some(s),
            _ => None,
        }
    }
    pub fn as_addr(&self) -> Option<&str> {
        match &self.0.node {
            Node::Addr(s) => Some(s),
            _ => None,
        }
    }
    pub fn nonce_id(&self) -> Option<u64> {
        match &self.0.node {
            Node::Nonce { id, .. } => Some(*id),
            _ => None,
        }
    }
    pub fn nonce_label(&self) -> Option<&str> {
        match &self.0.node {
            Node::Nonce { label, .. } => Some(label),
            _ => None,
        }
    }
    pub fn as_seq(&self) -> Option<&[Term]> {
        match &self.0.node {
            Node::Seq(xs) => Some(xs),
            _ => None,
        }
    }
    pub fn as_app(&self, f: Fun) -> Option<&[Term]> {
        match &self.0.node {
            Node::App(g, xs) if *g == f => Some(xs),
            _ => None,
        }
    }
    pub fn as_pair(&self) -> Option<(&Term, &Term)> {
        match self.as_seq() {
            Some([a, b]) => Some((a, b)),
            _ => None,
        }
    }

    /// Direct children, in order.
    pub fn children(&self) -> &[Term] {
        match &self.0.node {
            Node::Seq(xs) | Node::App(_, xs) => xs,
            _ => &[],
        }
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(Term::depth).max().unwrap_or(0)
    }

    pub fn size(&self) -> usize {
        1 + self.children().iter().map(Term::size).sum::<usize>()
    }

    /// Calls `f` on every subterm, including `self`, pre-order.
    pub fn visit(&self, f: &mut impl FnMut(&Term)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// 1-based projection of a sequence, `FAIL` if out of range.
    pub fn proj(&self, i: usize) -> Term {
        match self.as_seq() {
            Some(xs) if i >= 1 && i <= xs.len() => xs[i - 1].clone(),
            _ => Term::fail(),
        }
    }

    // Dictionaries are sequences of key/value pairs.

    pub fn dict<K: Into<Term>>(items: impl IntoIterator<Item = (K, Term)>) -> Term {
        Term::seq(items.into_iter().map(|(k, v)| Term::pair(k.into(), v)).collect())
    }

    pub fn get_t(&self, key: &Term) -> Option<&Term> {
        self.as_seq()?.iter().find_map(|e| match e.as_pair() {
            Some((k, v)) if k == key => Some(v),
            _ => None,
        })
    }

    pub fn get(&self, key: &str) -> Option<&Term> {
        self.as_seq()?.iter().find_map(|e| match e.as_pair() {
            Some((k, v)) if k.as_atom() == Some(key) => Some(v),
            _ => None,
        })
    }

    /// Dictionary access with the empty sequence for missing keys.
    pub fn at(&self, key: &str) -> Term {
        self.get(key).cloned().unwrap_or_else(Term::empty)
    }

    pub fn at_t(&self, key: &Term) -> Term {
        self.get_t(key).cloned().unwrap_or_else(Term::empty)
    }

    pub fn has(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    /// Returns a copy with `key` set to `val`, replacing an existing entry.
    pub fn with_t(&self, key: Term, val: Term) -> Term {
        let mut items: Vec<Term> = self.as_seq().map(<[Term]>::to_vec).unwrap_or_default();
        let entry = Term::pair(key.clone(), val);
        match items.iter().position(|e| e.as_pair().is_some_and(|(k, _)| *k == key)) {
            Some(i) => items[i] = entry,
            None => items.push(entry),
        }
        Term::seq(items)
    }

    pub fn with(&self, key: &str, val: Term) -> Term {
        self.with_t(Term::atom(key), val)
    }

    pub fn without(&self, key: &str) -> Term {
        let items = self.as_seq().unwrap_or_default();
        Term::seq(
            items
                .iter()
                .filter(|e| !e.as_pair().is_some_and(|(k, _)| k.as_atom() == Some(key)))
                .cloned()
                .collect(),
        )
    }

    /// Dictionary values in insertion order.
    pub fn values(&self) -> Vec<Term> {
        self.as_seq()
            .unwrap_or_default()
            .iter()
            .filter_map(|e| e.as_pair().map(|(_, v)| v.clone()))
            .collect()
    }

    pub fn contains_elem(&self, x: &Term) -> bool {
        self.as_seq().is_some_and(|xs| xs.contains(x))
    }

    pub fn push(&self, x: Term) -> Term {
        let mut items = self.as_seq().map(<[Term]>::to_vec).unwrap_or_default();
        items.push(x);
        Term::seq(items)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        self.render_into(&mut s);
        s
    }

    pub fn render_into(&self, out: &mut String) {
        match &self.0.node {
            Node::Atom(s) => render_atom(s, out),
            Node::Nonce { id, label } => {
                out.push('ν');
                out.push_str(&id.to_string());
                out.push(':');
                out.push_str(label);
            }
            Node::Addr(s) => {
                out.push('@');
                out.push_str(s);
            }
            Node::Dom(s) => {
                out.push('#');
                out.push_str(s);
            }
            Node::Seq(xs) => {
                out.push('[');
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    x.render_into(out);
                }
                out.push(']');
            }
            Node::App(f, xs) => {
                out.push('(');
                out.push_str(f.name());
                for x in xs {
                    out.push(' ');
                    x.render_into(out);
                }
                out.push(')');
            }
        }
    }

    /// Feeds a structural encoding to `h` with nonces renamed through `rename`.
    pub fn canonical_hash(&self, rename: &mut impl FnMut(u64) -> u64, h: &mut impl Hasher) {
        if self.0.nonce_free {
            h.write_u64(self.0.hash);
            return;
        }
        match &self.0.node {
            Node::Atom(s) => {
                h.write_u8(1);
                h.write(s.as_bytes());
                h.write_u8(0xff);
            }
            Node::Nonce { id, .. } => {
                h.write_u8(2);
                h.write_u64(rename(*id));
            }
            Node::Addr(s) => {
                h.write_u8(3);
                h.write(s.as_bytes());
                h.write_u8(0xff);
            }
            Node::Dom(s) => {
                h.write_u8(4);
                h.write(s.as_bytes());
                h.write_u8(0xff);
            }
            Node::Seq(xs) => {
                h.write_u8(5);
                h.write_usize(xs.len());
                for x in xs {
                    x.canonical_hash(rename, h);
                }
            }
            Node::App(f, xs) => {
                h.write_u8(6);
                h.write_u8(*f as u8);
                for x in xs {
                    x.canonical_hash(rename, h);
                }
            }
        }
    }
}

fn render_atom(s: &str, out: &mut String) {
    let plain = !s.is_empty()
        && !s.starts_with(['@', '#', 'ν', '('])
        && !s.chars().any(|c| c.is_whitespace() || matches!(c, '(' | ')' | '[' | ']' | '"' | '\\'));
    if plain {
        out.push_str(s);
    } else {
        out.push_str(&serde_json::to_string(s).expect("string serialization"));
    }
}

/// The empty sequence `⟨⟩`.
impl Default for Term {
    fn default() -> Self {
        Term::empty()
    }
}

impl From<&str> for Term {
    fn from(s: &str) -> Term {
        Term::atom(s)
    }
}

impl PartialEq for Term {
    fn eq(&self, other: &Term) -> bool {
        if Arc::ptr_eq(&self.0, &other.0) {
            return true;
        }
        if self.0.hash != other.0.hash {
            return false;
        }
        match (&self.0.node, &other.0.node) {
            (Node::Atom(a), Node::Atom(b)) => a == b,
            (Node::Nonce { id: a, .. }, Node::Nonce { id: b, .. }) => a == b,
            (Node::Addr(a), Node::Addr(b)) => a == b,
            (Node::Dom(a), Node::Dom(b)) => a == b,
            (Node::Seq(a), Node::Seq(b)) => a == b,
            (Node::App(f, a), Node::App(g, b)) => f == g && a == b,
            _ => false,
        }
    }
}

impl Eq for Term {}

impl Hash for Term {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

fn rank(n: &Node) -> u8 {
    match n {
        Node::Atom(_) => 0,
        Node::Nonce { .. } => 1,
        Node::Addr(_) => 2,
        Node::Dom(_) => 3,
        Node::Seq(_) => 4,
        Node::App(..) => 5,
    }
}

impl Ord for Term {
    fn cmp(&self, other: &Term) -> Ordering {
        if Arc::ptr_eq(&self.0, &other.0) {
            return Ordering::Equal;
        }
        match (&self.0.node, &other.0.node) {
            (Node::Atom(a), Node::Atom(b)) => a.cmp(b),
            (Node::Nonce { id: a, .. }, Node::Nonce { id: b, .. }) => a.cmp(b),
            (Node::Addr(a), Node::Addr(b)) => a.cmp(b),
            (Node::Dom(a), Node::Dom(b)) => a.cmp(b),
            (Node::Seq(a), Node::Seq(b)) => a.cmp(b),
            (Node::App(f, a), Node::App(g, b)) => f.cmp(g).then_with(|| a.cmp(b)),
            (a, b) => rank(a).cmp(&rank(b)),
        }
    }
}

impl PartialOrd for Term {
    fn partial_cmp(&self, other: &Term) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl Serialize for Term {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.render())
    }
}

/// Destructor symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Des {
    DecA,
    DecS,
    CheckSig,
    CheckMac,
    ExtractMsg,
    /// 1-based projection.
    Proj(usize),
    Lookup,
}

impl Des {
    pub fn arity(self) -> usize {
        match self {
            Des::ExtractMsg | Des::Proj(_) => 1,
            _ => 2,
        }
    }
}

/// Terms extended with destructor applications.
#[derive(Clone, Debug)]
pub enum Expr {
    Term(Term),
    Seq(Vec<Expr>),
    App(Fun, Vec<Expr>),
    Des(Des, Vec<Expr>),
}

pub fn dec_a(c: &Term, k: &Term) -> Term {
    match c.as_app(Fun::EncA) {
        Some([x, p]) if p.as_app(Fun::Pub).is_some_and(|y| y[0] == *k) => x.clone(),
        _ => Term::fail(),
    }
}

pub fn dec_s(c: &Term, k: &Term) -> Term {
    match c.as_app(Fun::EncS) {
        Some([x, k2]) if k2 == k => x.clone(),
        _ => Term::fail(),
    }
}

pub fn check_sig(s: &Term, pk: &Term) -> Term {
    match s.as_app(Fun::Sig) {
        Some([_, k]) if pk.as_app(Fun::Pub).is_some_and(|y| y[0] == *k) => Term::top(),
        _ => Term::fail(),
    }
}

pub fn check_mac(m: &Term, k: &Term) -> Term {
    match m.as_app(Fun::Mac) {
        Some([_, k2]) if k2 == k => Term::top(),
        _ => Term::fail(),
    }
}

pub fn extract_msg(t: &Term) -> Term {
    match t.as_app(Fun::Sig).or_else(|| t.as_app(Fun::Mac)) {
        Some([x, _]) => x.clone(),
        _ => Term::fail(),
    }
}

pub fn lookup(dict: &Term, key: &Term) -> Term {
    dict.get_t(key).cloned().unwrap_or_else(Term::fail)
}

fn apply_des(d: Des, args: &[Term]) -> Term {
    match (d, args) {
        (Des::DecA, [c, k]) => dec_a(c, k),
        (Des::DecS, [c, k]) => dec_s(c, k),
        (Des::CheckSig, [s, k]) => check_sig(s, k),
        (Des::CheckMac, [m, k]) => check_mac(m, k),
        (Des::ExtractMsg, [t]) => extract_msg(t),
        (Des::Proj(i), [t]) => t.proj(i),
        (Des::Lookup, [d, k]) => lookup(d, k),
        _ => Term::fail(),
    }
}

/// Evaluates an expression to a ground term. Destructors applied to
/// non-matching arguments yield `FAIL`, which then propagates as a value.
pub fn normalize(e: &Expr) -> Term {
    match e {
        Expr::Term(t) => t.clone(),
        Expr::Seq(xs) => Term::seq(xs.iter().map(normalize).collect()),
        Expr::App(f, xs) if xs.len() == f.arity() => Term::app(*f, xs.iter().map(normalize).collect()),
        Expr::App(..) => Term::fail(),
        Expr::Des(d, xs) => {
            let args: Vec<Term> = xs.iter().map(normalize).collect();
            apply_des(*d, &args)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(n: u64) -> Term {
        Term::nonce(n, "k")
    }

    #[test]
    fn nonce_equality_ignores_label() {
        assert_eq!(Term::nonce(3, "a"), Term::nonce(3, "b"));
        assert_ne!(Term::nonce(3, "a"), Term::nonce(4, "a"));
    }

    #[test]
    fn hash_of_pair_is_mac() {
        let x = Term::atom("x");
        let y = k(1);
        assert_eq!(Term::hash(Term::pair(x.clone(), y.clone())), Term::mac(x, y));
        let three = Term::seq(vec!["a".into(), "b".into(), "c".into()]);
        assert!(Term::hash(three).as_app(Fun::Hash).is_some());
    }

    #[test]
    fn destructors() {
        let m = Term::atom("m");
        assert_eq!(dec_a(&Term::enc_a(m.clone(), Term::pub_key(k(1))), &k(1)), m);
        assert!(dec_a(&Term::enc_a(m.clone(), Term::pub_key(k(1))), &k(2)).is_fail());
        assert_eq!(dec_s(&Term::enc_s(m.clone(), k(1)), &k(1)), m);
        assert!(check_sig(&Term::sig(m.clone(), k(1)), &Term::pub_key(k(1))).is_top());
        assert!(check_sig(&Term::sig(m.clone(), k(1)), &k(1)).is_fail());
        assert!(check_mac(&Term::mac(m.clone(), k(1)), &k(1)).is_top());
        assert_eq!(extract_msg(&Term::sig(m.clone(), k(1))), m);
        assert!(extract_msg(&m).is_fail());
        let d = Term::dict([("a", Term::atom("1"))]);
        assert_eq!(lookup(&d, &"a".into()), Term::atom("1"));
        assert!(lookup(&d, &"b".into()).is_fail());
        assert!(d.at("b").is_empty_seq());
    }

    #[test]
    fn normalize_nested() {
        let m = Term::atom("m");
        let e = Expr::Des(
            Des::Proj(2),
            vec![Expr::Des(
                Des::DecS,
                vec![
                    Expr::Term(Term::enc_s(Term::pair("a".into(), m.clone()), k(7))),
                    Expr::Term(k(7)),
                ],
            )],
        );
        assert_eq!(normalize(&e), m);
        let bad = Expr::Des(Des::Proj(1), vec![Expr::Term(Term::fail())]);
        assert!(normalize(&bad).is_fail());
    }

    #[test]
    fn rendering() {
        let t = Term::seq(vec![
            Term::atom("HTTPReq"),
            Term::nonce(4, "n"),
            Term::dom("as.example"),
            Term::addr("as"),
            Term::enc_s(Term::atom("hello world"), k(2)),
        ]);
        assert_eq!(t.render(), "[HTTPReq ν4:n #as.example @as (enc_s \"hello world\" ν2:k)]");
    }

    #[test]
    fn dict_update() {
        let d = Term::dict([("a", Term::atom("1")), ("b", Term::atom("2"))]);
        let d2 = d.with("a", Term::atom("3"));
        assert_eq!(d2.at("a"), Term::atom("3"));
        assert_eq!(d2.values().len(), 2);
        assert!(!d2.without("a").has("a"));
    }
}
