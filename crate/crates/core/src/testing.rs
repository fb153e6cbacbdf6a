//! Small hand-built MDPs for unit tests.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::env::{Action, Environment, Step, Transition, Variant};
use crate::error::Result;

/// Deterministic tabular MDP; `table[s][a] = (next, reward, done)`.
#[derive(Debug, Clone)]
pub struct TableMdp {
    pub table: Vec<Vec<(usize, f64, bool)>>,
    pub horizon: usize,
}

const NAMES: &[&str] = &["a0", "a1", "a2", "a3"];

impl TableMdp {
    pub fn single_state_reward(r: f64) -> Self {
        TableMdp { table: vec![vec![(0, r, false)]], horizon: 100 }
    }

    /// Three states in a row; moving right off the end pays 1 and ends the
    /// episode, dawdling left at the start pays 0.05.
    pub fn chain() -> Self {
        TableMdp {
            table: vec![
                vec![(0, 0.05, false), (1, 0.0, false)],
                vec![(0, 0.0, false), (2, 0.0, false)],
                vec![(1, 0.0, false), (2, 1.0, true)],
            ],
            horizon: 30,
        }
    }
}

impl Environment for TableMdp {
    type Real = usize;
    type Sim = usize;

    fn name(&self) -> &'static str {
        "table"
    }
    fn variant(&self) -> Variant {
        Variant::Target
    }
    fn action_names(&self) -> &'static [&'static str] {
        &NAMES[..self.table[0].len()]
    }
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn observe(&self, s: &usize) -> usize {
        *s
    }
    fn reset(&self, rng: &mut dyn RngCore) -> usize {
        rng.gen_range(0..self.table.len())
    }
    fn step(&self, s: &usize, a: Action, _rng: &mut dyn RngCore) -> Result<Step<usize>> {
        self.check_action(a)?;
        let (next, reward, done) = self.table[*s][a];
        Ok(Step { next, reward, done })
    }
    fn transitions(&self, s: &usize, a: Action) -> Result<Vec<Transition<usize>>> {
        self.check_action(a)?;
        let (next, reward, done) = self.table[*s][a];
        Ok(vec![Transition { prob: 1.0, next, reward, done }])
    }
    fn is_terminal(&self, _s: &usize) -> bool {
        false
    }
    fn real_states(&self) -> Result<Vec<usize>> {
        Ok((0..self.table.len()).collect())
    }
    fn sim_states(&self) -> Result<Vec<usize>> {
        self.real_states()
    }
    fn real_fields(&self) -> &'static [&'static str] {
        &["s"]
    }
    fn sim_fields(&self) -> &'static [&'static str] {
        &["s"]
    }
    fn real_values(&self, s: &usize) -> Vec<i64> {
        vec![*s as i64]
    }
    fn sim_values(&self, s: &usize) -> Vec<i64> {
        vec![*s as i64]
    }
    fn real_from_values(&self, v: &[i64]) -> Result<usize> {
        Ok(v[0] as usize)
    }
    fn sim_from_values(&self, v: &[i64]) -> Result<usize> {
        Ok(v[0] as usize)
    }
}
