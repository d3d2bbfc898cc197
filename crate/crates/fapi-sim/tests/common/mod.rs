//! Helpers shared by the integration tests.
#![allow(dead_code)]

use fapi_sim::terms::{Fun, Term, View};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Forward closure over the finite universe of subterms of `kb` and `t`.
///
/// Decomposition and composition rules are applied until nothing changes.
/// Composition never needs to leave the universe: any key or payload needed
/// to reach a subterm is itself a subterm.
pub fn closure_derivable(kb: &[Term], t: &Term) -> bool {
    let mut universe: Vec<Term> = Vec::new();
    let mut seen = HashSet::new();
    for root in kb.iter().chain(std::iter::once(t)) {
        root.visit(&mut |s| {
            if seen.insert(s.clone()) {
                universe.push(s.clone());
            }
        });
    }
    let mut have: HashSet<Term> = kb.iter().cloned().collect();
    for u in &universe {
        if matches!(u.view(), View::Atom(_) | View::Addr(_) | View::Dom(_)) {
            have.insert(u.clone());
        }
    }
    loop {
        let mut add: Vec<Term> = Vec::new();
        for u in &have {
            match u.view() {
                View::Seq(xs) => add.extend(xs.iter().cloned()),
                View::App(Fun::Sig | Fun::Mac, xs) => add.push(xs[0].clone()),
                View::App(Fun::EncS, [x, k]) if have.contains(k) => add.push(x.clone()),
                View::App(Fun::EncA, [x, p]) => {
                    if let View::App(Fun::Pub, [y]) = p.view() {
                        if have.contains(y) {
                            add.push(x.clone());
                        }
                    }
                }
                _ => {}
            }
        }
        for u in &universe {
            if let View::Seq(xs) | View::App(_, xs) = u.view() {
                if !have.contains(u) && xs.iter().all(|x| have.contains(x)) {
                    add.push(u.clone());
                }
            }
        }
        let before = have.len();
        have.extend(add);
        if have.len() == before {
            return have.contains(t);
        }
    }
}

pub fn leaves() -> Vec<Term> {
    vec![
        Term::nonce(1, "n"),
        Term::nonce(2, "n"),
        Term::nonce(3, "n"),
        Term::nonce(4, "k"),
        Term::nonce(5, "k"),
        Term::atom("a"),
        Term::dom("d.example"),
    ]
}

pub fn random_term(rng: &mut ChaCha8Rng, leaves: &[Term], depth: usize) -> Term {
    if depth == 0 || rng.gen_bool(0.3) {
        return leaves[rng.gen_range(0..leaves.len())].clone();
    }
    let sub = |rng: &mut ChaCha8Rng| random_term(rng, leaves, depth - 1);
    match rng.gen_range(0..7) {
        0 => {
            let n = rng.gen_range(1..=3);
            Term::seq((0..n).map(|_| sub(rng)).collect())
        }
        1 => {
            let x = sub(rng);
            let k = leaves[rng.gen_range(0..leaves.len())].clone();
            Term::enc_a(x, Term::pub_key(k))
        }
        2 => Term::enc_s(sub(rng), sub(rng)),
        3 => Term::sig(sub(rng), sub(rng)),
        4 => Term::mac(sub(rng), sub(rng)),
        5 => Term::hash(sub(rng)),
        _ => Term::pub_key(sub(rng)),
    }
}

pub fn subterms(kb: &[Term]) -> Vec<Term> {
    let mut out = Vec::new();
    for t in kb {
        t.visit(&mut |s| out.push(s.clone()));
    }
    out
}

/// One generated instance: a knowledge base of at most six terms and a
/// target of depth at most three.
pub fn instance(seed: u64) -> (Vec<Term>, Term) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool = leaves();
    let n = rng.gen_range(1..=6);
    let kb: Vec<Term> = (0..n).map(|_| random_term(&mut rng, &pool, 3)).collect();
    let subs = subterms(&kb);
    let target = match rng.gen_range(0..4) {
        0 => subs[rng.gen_range(0..subs.len())].clone(),
        1 => {
            let a = subs[rng.gen_range(0..subs.len())].clone();
            let b = subs[rng.gen_range(0..subs.len())].clone();
            match rng.gen_range(0..3) {
                0 => Term::pair(a, b),
                1 => Term::enc_s(a, b),
                _ => Term::sig(a, b),
            }
        }
        _ => random_term(&mut rng, &pool, 3),
    };
    (kb, target)
}
