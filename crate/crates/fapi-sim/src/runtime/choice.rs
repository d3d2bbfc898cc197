use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Resolves nondeterministic choice points. `options` is never empty.
pub trait Chooser {
    fn choose(&mut self, label: &str, options: &[String]) -> usize;
}

pub struct RandomChooser {
    rng: ChaCha8Rng,
}

impl RandomChooser {
    pub fn new(seed: u64) -> Self {
        RandomChooser { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

impl Chooser for RandomChooser {
    fn choose(&mut self, _label: &str, options: &[String]) -> usize {
        self.rng.gen_range(0..options.len())
    }
}

/// Replays a fixed index sequence; picks 0 once the script runs out.
/// Records the arity of every choice point it answered so callers can
/// enumerate the full choice tree odometer-style.
#[derive(Default)]
pub struct ScriptChooser {
    pub script: Vec<usize>,
    pub pos: usize,
    pub arities: Vec<usize>,
}

impl ScriptChooser {
    pub fn new(script: Vec<usize>) -> Self {
        ScriptChooser { script, pos: 0, arities: Vec::new() }
    }

    /// The next script in lexicographic order after a run, or `None` when
    /// the tree is exhausted.
    pub fn successor(&self) -> Option<Vec<usize>> {
        let mut picks: Vec<usize> =
            (0..self.arities.len()).map(|i| self.script.get(i).copied().unwrap_or(0)).collect();
        while let Some(last) = picks.len().checked_sub(1) {
            if picks[last] + 1 < self.arities[last] {
                picks[last] += 1;
                return Some(picks);
            }
            picks.pop();
        }
        None
    }
}

impl Chooser for ScriptChooser {
    fn choose(&mut self, _label: &str, options: &[String]) -> usize {
        let pick = self.script.get(self.pos).copied().unwrap_or(0).min(options.len() - 1);
        self.pos += 1;
        self.arities.push(options.len());
        pick
    }
}

/// Picks options by name from per-label preference lists, consuming each
/// preference when it is used. Falls back to the first option.
#[derive(Clone, Debug, Default)]
pub struct PreferChooser {
    prefs: BTreeMap<String, Vec<String>>,
}

impl PreferChooser {
    pub fn new(prefs: BTreeMap<String, Vec<String>>) -> Self {
        PreferChooser { prefs }
    }
}

impl Chooser for PreferChooser {
    fn choose(&mut self, label: &str, options: &[String]) -> usize {
        if let Some(list) = self.prefs.get_mut(label) {
            for (pi, want) in list.iter().enumerate() {
                if let Some(i) = options.iter().position(|o| o == want) {
                    list.remove(pi);
                    return i;
                }
            }
        }
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    #[test]
    fn odometer_enumerates_tree() {
        // two choice points with 2 and 3 options -> 6 leaves
        let mut script = Some(vec![]);
        let mut leaves = Vec::new();
        while let Some(s) = script {
            let mut c = ScriptChooser::new(s);
            let a = c.choose("a", &opts(2));
            let b = c.choose("b", &opts(3));
            leaves.push((a, b));
            script = c.successor();
        }
        assert_eq!(leaves.len(), 6);
        assert_eq!(leaves[5], (1, 2));
    }

    #[test]
    fn prefer_consumes_entries() {
        let mut prefs = BTreeMap::new();
        prefs.insert("x".to_string(), vec!["2".to_string(), "1".to_string()]);
        let mut c = PreferChooser::new(prefs);
        assert_eq!(c.choose("x", &opts(3)), 2);
        assert_eq!(c.choose("x", &opts(3)), 1);
        assert_eq!(c.choose("x", &opts(3)), 0);
        assert_eq!(c.choose("y", &opts(3)), 0);
    }
}
