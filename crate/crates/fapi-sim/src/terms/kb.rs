use super::{Fun, Term, View};
use indexmap::IndexSet;

/// A set of terms closed under analysis.
///
/// `known` holds every term obtained by decomposition. Encryptions whose key
/// is not yet derivable wait in `pending` and are re-examined whenever new
/// terms arrive. Derivability of a target is then a recursive synthesis check
/// against the analysed set.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeBase {
    known: IndexSet<Term>,
    pending: Vec<Term>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_terms(terms: impl IntoIterator<Item = Term>) -> Self {
        let mut kb = Self::new();
        for t in terms {
            kb.add(t);
        }
        kb
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    /// Analysed terms in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.known.iter()
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.known.contains(t)
    }

    /// Adds a term and saturates. Returns the number of newly analysed terms.
    pub fn add(&mut self, t: Term) -> usize {
        let before = self.known.len();
        let mut work = vec![t];
        loop {
            while let Some(t) = work.pop() {
                if self.known.contains(&t) {
                    continue;
                }
                self.known.insert(t.clone());
                match t.view() {
                    View::Seq(xs) => work.extend(xs.iter().cloned()),
                    View::App(Fun::Sig | Fun::Mac, xs) => work.push(xs[0].clone()),
                    View::App(Fun::EncA | Fun::EncS, _) => self.pending.push(t),
                    _ => {}
                }
            }
            let mut opened = false;
            let mut i = 0;
            while i < self.pending.len() {
                if let Some(x) = self.openable(&self.pending[i]) {
                    self.pending.swap_remove(i);
                    work.push(x);
                    opened = true;
                } else {
                    i += 1;
                }
            }
            if !opened {
                break;
            }
        }
        self.known.len() - before
    }

    fn openable(&self, c: &Term) -> Option<Term> {
        match c.view() {
            View::App(Fun::EncA, [x, p]) => match p.as_app(Fun::Pub) {
                Some([y]) if self.derivable(y) => Some(x.clone()),
                _ => None,
            },
            View::App(Fun::EncS, [x, key]) if self.derivable(key) => Some(x.clone()),
            _ => None,
        }
    }

    /// Whether `t` can be built from analysed terms and public constants.
    pub fn derivable(&self, t: &Term) -> bool {
        match t.view() {
            View::Atom(_) | View::Addr(_) | View::Dom(_) => true,
            _ if self.known.contains(t) => true,
            View::Seq(xs) | View::App(_, xs) => xs.iter().all(|x| self.derivable(x)),
            View::Nonce(..) => false,
        }
    }
}
