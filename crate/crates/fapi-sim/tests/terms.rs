mod common;

use common::{closure_derivable, instance, leaves, random_term};
use fapi_sim::terms::{check_mac, normalize, Des, Expr, Fun, KnowledgeBase, Term};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn k(n: u64) -> Term {
    Term::nonce(n, "k")
}

fn n(id: u64) -> Term {
    Term::nonce(id, "n")
}

#[test]
fn asymmetric_decryption_roundtrip() {
    let e = Expr::Des(Des::DecA, vec![Expr::Term(Term::enc_a(n(1), Term::pub_key(k(9)))), Expr::Term(k(9))]);
    assert_eq!(normalize(&e), n(1));
}

#[test]
fn mac_check_over_pair() {
    let m = Term::mac(Term::pair(Term::atom("iss"), Term::atom("aud")), k(3));
    assert!(check_mac(&m, &k(3)).is_top());
}

#[test]
fn derivable_examples() {
    let kb = KnowledgeBase::from_terms([k(1), Term::enc_a(n(2), Term::pub_key(k(1)))]);
    assert!(kb.derivable(&n(2)));
    let kb = KnowledgeBase::from_terms([Term::enc_a(n(2), Term::pub_key(k(1)))]);
    assert!(!kb.derivable(&n(2)));
    let kb = KnowledgeBase::from_terms([n(1), n(2)]);
    assert!(kb.derivable(&Term::mac(n(1), n(2))));
    assert!(closure_derivable(&[n(1), n(2)], &Term::mac(n(1), n(2))));
}

#[test]
fn analysis_examples() {
    let kb = KnowledgeBase::from_terms([Term::pair(n(1), n(2))]);
    assert!(kb.contains(&n(1)) && kb.contains(&n(2)));
    let kb = KnowledgeBase::from_terms([Term::enc_s(n(1), k(2)), k(2)]);
    assert!(kb.contains(&n(1)));
    let kb = KnowledgeBase::from_terms([Term::sig(n(1), k(2))]);
    assert!(kb.contains(&n(1)));
    assert!(!kb.derivable(&k(2)));
}

#[test]
fn late_key_opens_pending_ciphertext() {
    let mut kb = KnowledgeBase::from_terms([Term::enc_s(Term::enc_a(n(1), Term::pub_key(k(2))), k(3))]);
    assert!(!kb.derivable(&n(1)));
    kb.add(Term::pair(k(3), Term::atom("x")));
    assert!(!kb.derivable(&n(1)));
    kb.add(k(2));
    assert!(kb.derivable(&n(1)));
}

#[test]
fn oracle_agreement_sweep() {
    let mut positives = 0;
    for seed in 0..2_000 {
        let (kb, t) = instance(seed);
        let want = closure_derivable(&kb, &t);
        let got = KnowledgeBase::from_terms(kb.iter().cloned()).derivable(&t);
        assert_eq!(got, want, "seed {seed}: kb {:?} target {}", kb.iter().map(Term::render).collect::<Vec<_>>(), t.render());
        positives += want as usize;
    }
    assert!(positives > 200 && positives < 1_800, "unbalanced sample: {positives} positives");
}

fn expr_strategy() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (1u64..5).prop_map(|i| Expr::Term(Term::nonce(i, "x"))),
        Just(Expr::Term(Term::atom("a"))),
        Just(Expr::Term(Term::fail())),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..3).prop_map(Expr::Seq),
            (prop::sample::select(Fun::ALL.to_vec()), prop::collection::vec(inner.clone(), 1..3))
                .prop_map(|(f, xs)| Expr::App(f, xs)),
            (
                prop::sample::select(vec![Des::DecA, Des::DecS, Des::CheckSig, Des::CheckMac, Des::Lookup]),
                inner.clone(),
                inner.clone()
            )
                .prop_map(|(d, a, b)| Expr::Des(d, vec![a, b])),
            (prop::sample::select(vec![Des::ExtractMsg, Des::Proj(1), Des::Proj(2)]), inner)
                .prop_map(|(d, a)| Expr::Des(d, vec![a])),
        ]
    })
}

proptest! {
    #[test]
    fn normalize_is_idempotent(e in expr_strategy()) {
        let t = normalize(&e);
        prop_assert_eq!(normalize(&Expr::Term(t.clone())), t);
    }

    #[test]
    fn derivable_matches_closure(seed in any::<u64>()) {
        let (kb, t) = instance(seed);
        prop_assert_eq!(KnowledgeBase::from_terms(kb.iter().cloned()).derivable(&t), closure_derivable(&kb, &t));
    }

    #[test]
    fn derivable_is_monotone(seed in any::<u64>(), extra in any::<u64>()) {
        let (kb, t) = instance(seed);
        let small = KnowledgeBase::from_terms(kb.iter().cloned());
        let mut rng = ChaCha8Rng::seed_from_u64(extra);
        let more = random_term(&mut rng, &leaves(), 3);
        let big = KnowledgeBase::from_terms(kb.iter().cloned().chain([more]));
        prop_assert!(!small.derivable(&t) || big.derivable(&t));
    }

    #[test]
    fn unseen_nonce_is_never_derivable(seed in any::<u64>()) {
        let (kb, _) = instance(seed);
        let fresh = Term::nonce(999, "fresh");
        let kb = KnowledgeBase::from_terms(kb);
        prop_assert!(!kb.derivable(&fresh));
        prop_assert!(!kb.derivable(&Term::pair(Term::atom("a"), fresh)));
    }
}
