use alloc::collections::BTreeMap;
use alloc::vec::Vec;

/// Dense index over an enumerated, duplicate-free set of states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateIndex<S: Ord> {
    states: Vec<S>,
    lookup: BTreeMap<S, usize>,
}

impl<S: Ord + Copy> StateIndex<S> {
    /// Build an index; later duplicates are dropped so positions stay unique.
    pub fn new(states: impl IntoIterator<Item = S>) -> Self {
        let mut lookup = BTreeMap::new();
        let mut out = Vec::new();
        for s in states {
            if let alloc::collections::btree_map::Entry::Vacant(e) = lookup.entry(s) {
                e.insert(out.len());
                out.push(s);
            }
        }
        StateIndex { states: out, lookup }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn get(&self, s: &S) -> Option<usize> {
        self.lookup.get(s).copied()
    }

    pub fn state(&self, i: usize) -> S {
        self.states[i]
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn contains(&self, s: &S) -> bool {
        self.lookup.contains_key(s)
    }
}
