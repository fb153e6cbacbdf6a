//! Tabular action values: Q-learning, value iteration and greedy policies.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::env::{Action, Environment};
use crate::error::{Error, Result};
use crate::index::StateIndex;
use crate::seed;

/// Two action values closer than this (relative to `max(1, |max|)`) are tied.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// How a table was produced.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainingMeta {
    QLearning(QLearningParams),
    ValueIteration { gamma: f64, tol: f64, sweeps: usize },
    Loaded,
}

/// Action-value table over an enumerated key space.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<K: Ord> {
    index: StateIndex<K>,
    num_actions: usize,
    values: Vec<f64>,
    pub meta: TrainingMeta,
}

impl<K: Ord + Copy> QTable<K> {
    /// Zero-initialised table.
    pub fn zeros(states: impl IntoIterator<Item = K>, num_actions: usize) -> Self {
        let index = StateIndex::new(states);
        let values = vec![0.0; index.len() * num_actions];
        QTable { index, num_actions, values, meta: TrainingMeta::Loaded }
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn states(&self) -> &[K] {
        self.index.states()
    }

    pub fn index(&self) -> &StateIndex<K> {
        &self.index
    }

    pub fn row(&self, s: &K) -> Option<&[f64]> {
        let i = self.index.get(s)?;
        Some(self.row_at(i))
    }

    pub fn row_at(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_actions..(i + 1) * self.num_actions]
    }

    fn row_at_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.num_actions..(i + 1) * self.num_actions]
    }

    pub fn get(&self, s: &K, a: Action) -> Option<f64> {
        self.row(s).and_then(|r| r.get(a).copied())
    }

    pub fn set(&mut self, s: &K, a: Action, value: f64) -> Result<()>
    where
        K: core::fmt::Debug,
    {
        let i = self.index.get(s).ok_or_else(|| Error::UnknownState(format!("{s:?}")))?;
        if a >= self.num_actions {
            return Err(Error::InvalidAction { action: a, num_actions: self.num_actions });
        }
        self.row_at_mut(i)[a] = value;
        Ok(())
    }

    /// Multiply every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Index of the greedy action: lowest index among actions tied with the maximum.
pub fn argmax(row: &[f64]) -> Action {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOLERANCE * best.abs().max(1.0);
    row.iter().position(|&v| v >= best - tol).unwrap_or(0)
}

pub fn max_value(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Deterministic greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<K: Ord> {
    index: StateIndex<K>,
    actions: Vec<Action>,
}

impl<K: Ord + Copy> Policy<K> {
    /// Identifier of the tie-break rule used by [`greedy_policy`].
    pub const TIE_BREAK: &'static str = "lowest-index";

    pub fn from_actions(states: impl IntoIterator<Item = K>, actions: Vec<Action>) -> Result<Self> {
        let index = StateIndex::new(states);
        if index.len() != actions.len() {
            return Err(Error::Config("policy needs one action per state".into()));
        }
        Ok(Policy { index, actions })
    }

    pub fn action(&self, s: &K) -> Option<Action> {
        self.index.get(s).map(|i| self.actions[i])
    }

    /// Like [`Policy::action`] but reports a missing state as an error.
    pub fn act(&self, s: &K) -> Result<Action>
    where
        K: core::fmt::Debug,
    {
        self.action(s).ok_or_else(|| Error::UnknownState(format!("{s:?}")))
    }

    pub fn states(&self) -> &[K] {
        self.index.states()
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

pub fn greedy_policy<K: Ord + Copy>(q: &QTable<K>) -> Policy<K> {
    let actions = (0..q.len()).map(|i| argmax(q.row_at(i))).collect();
    Policy { index: q.index.clone(), actions }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearningParams {
    pub episodes: usize,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub seed: u64,
}

impl Default for QLearningParams {
    fn default() -> Self {
        QLearningParams {
            episodes: 20_000,
            gamma: 0.95,
            learning_rate: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            seed: 0,
        }
    }
}

impl QLearningParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config("learning rate must lie in (0, 1]".into()));
        }
        for eps in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::Config("exploration rate must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn epsilon(&self, episode: usize) -> f64 {
        if self.episodes <= 1 {
            return self.epsilon_start;
        }
        let frac = episode as f64 / (self.episodes - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }
}

/// Q-learning with linearly decaying epsilon-greedy exploration.
///
/// `key` maps the environment's real state onto the table's key space and
/// `keys` enumerates that space; unvisited entries stay at zero.
pub fn train_q<E, K>(
    env: &E,
    keys: impl IntoIterator<Item = K>,
    key: impl Fn(&E::Real) -> K,
    params: &QLearningParams,
) -> Result<QTable<K>>
where
    E: Environment,
    K: Ord + Copy + core::fmt::Debug,
{
    params.validate()?;
    let mut q = QTable::zeros(keys, env.num_actions());
    let mut rng = seed::rng(params.seed);
    let n_actions = env.num_actions();
    for episode in 0..params.episodes {
        let eps = params.epsilon(episode);
        let mut s = env.reset(&mut rng);
        for _ in 0..env.horizon() {
            if env.is_terminal(&s) {
                break;
            }
            let k = key(&s);
            let i = q.index.get(&k).ok_or_else(|| Error::UnknownState(format!("{k:?}")))?;
            let a = if rng.gen::<f64>() < eps {
                rng.gen_range(0..n_actions)
            } else {
                argmax(q.row_at(i))
            };
            let st = env.step(&s, a, &mut rng as &mut dyn RngCore)?;
            let bootstrap = if st.done {
                0.0
            } else {
                let k2 = key(&st.next);
                let j = q.index.get(&k2).ok_or_else(|| Error::UnknownState(format!("{k2:?}")))?;
                max_value(q.row_at(j))
            };
            let target = st.reward + params.gamma * bootstrap;
            let cell = &mut q.row_at_mut(i)[a];
            *cell += params.learning_rate * (target - *cell);
            if !cell.is_finite() {
                return Err(Error::NonFinite(format!(
                    "Q({k:?}, {a}) after episode {episode} (target {target})"
                )));
            }
            if st.done {
                break;
            }
            s = st.next;
        }
    }
    q.meta = TrainingMeta::QLearning(params.clone());
    Ok(q)
}

/// Q-learning over the agent's representation (use with the source variant).
pub fn train_q_sim<E: Environment>(env: &E, params: &QLearningParams) -> Result<QTable<E::Sim>> {
    train_q(env, env.sim_states()?, |s| env.observe(s), params)
}

/// Q-learning over the full real state space (use with the target variant).
pub fn train_q_real<E: Environment>(env: &E, params: &QLearningParams) -> Result<QTable<E::Real>> {
    train_q(env, env.real_states()?, |s| *s, params)
}

struct Branch {
    prob: f64,
    next: usize,
    reward: f64,
    done: bool,
}

/// Gauss-Seidel value iteration over the real state space of `env`.
///
/// Stops once a sweep changes no entry by more than `tol * (1 - gamma)`, which
/// bounds the Bellman residual of the returned table by `tol`.
pub fn value_iteration<E: Environment>(
    env: &E,
    gamma: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<QTable<E::Real>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Config("gamma must lie in [0, 1)".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Config("value iteration tolerance must be positive".into()));
    }
    let mut q = QTable::zeros(env.real_states()?, env.num_actions());
    let n_actions = env.num_actions();
    let n = q.len();
    let mut model: Vec<Vec<Branch>> = Vec::with_capacity(n * n_actions);
    let mut terminal = vec![false; n];
    for i in 0..n {
        let s = q.index.state(i);
        terminal[i] = env.is_terminal(&s);
        for a in 0..n_actions {
            let mut branches = Vec::new();
            if !terminal[i] {
                for t in env.transitions(&s, a)? {
                    // terminal successors need not be enumerated
                    let next = if t.done {
                        0
                    } else {
                        q.index.get(&t.next).ok_or_else(|| Error::UnknownState(format!("{:?}", t.next)))?
                    };
                    branches.push(Branch { prob: t.prob, next, reward: t.reward, done: t.done });
                }
            }
            model.push(branches);
        }
    }
    let mut v = vec![0.0; n];
    let stop = tol * (1.0 - gamma);
    for sweep in 1..=max_sweeps {
        let mut change: f64 = 0.0;
        for i in 0..n {
            if terminal[i] {
                continue;
            }
            for a in 0..n_actions {
                let value: f64 = model[i * n_actions + a]
                    .iter()
                    .map(|b| b.prob * (b.reward + if b.done { 0.0 } else { gamma * v[b.next] }))
                    .sum();
                let cell = &mut q.values[i * n_actions + a];
                change = change.max((value - *cell).abs());
                *cell = value;
            }
            v[i] = max_value(q.row_at(i));
        }
        if !change.is_finite() {
            return Err(Error::NonFinite(format!("value iteration diverged at sweep {sweep}")));
        }
        if change <= stop {
            q.meta = TrainingMeta::ValueIteration { gamma, tol, sweeps: sweep };
            return Ok(q);
        }
        if sweep == max_sweeps {
            return Err(Error::NoConvergence { iterations: sweep, residual: change });
        }
    }
    Err(Error::NoConvergence { iterations: 0, residual: f64::INFINITY })
}

/// Largest absolute Bellman optimality residual of `q` on `env`.
pub fn bellman_residual<E: Environment>(env: &E, q: &QTable<E::Real>, gamma: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, s) in q.states().iter().enumerate() {
        if env.is_terminal(s) {
            worst = q.row_at(i).iter().fold(worst, |w, v| w.max(v.abs()));
            continue;
        }
        for a in 0..env.num_actions() {
            let mut backup = 0.0;
            for t in env.transitions(s, a)? {
                let next = if t.done {
                    0.0
                } else {
                    max_value(q.row(&t.next).ok_or_else(|| Error::UnknownState(format!("{:?}", t.next)))?)
                };
                backup += t.prob * (t.reward + gamma * next);
            }
            worst = worst.max((backup - q.row_at(i)[a]).abs());
        }
    }
    Ok(worst)
}

/// Re-key a table trained on a source variant by the agent's representation.
///
/// Fails if two real states share a projection, since their values could then
/// disagree.
pub fn project_to_sim<E: Environment>(env: &E, q: &QTable<E::Real>) -> Result<QTable<E::Sim>> {
    let sims = env.sim_states()?;
    let mut out = QTable::zeros(sims, q.num_actions());
    let mut seen = vec![false; out.len()];
    for (i, s) in q.states().iter().enumerate() {
        let sim = env.observe(s);
        let j = out.index.get(&sim).ok_or_else(|| Error::UnknownState(format!("{sim:?}")))?;
        if seen[j] {
            return Err(Error::Config(format!("observation {sim:?} has several real preimages")));
        }
        seen[j] = true;
        out.row_at_mut(j).copy_from_slice(q.row_at(i));
    }
    out.meta = q.meta.clone();
    Ok(out)
}
