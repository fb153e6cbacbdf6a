//! Scoring: importance-weighted F1 over seen and unseen sim states, and
//! oracle-in-the-loop execution.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::feedback::FeedbackDataset;
use crate::model::BlindSpotModel;
use crate::oracle::{BlindSpotTruth, Oracle};
use crate::rl::Policy;
use crate::seed;

/// Visitation frequency of every sim state under `policy` in `env`, with one
/// pseudo-visit per state, normalised to sum to one.
pub fn visitation_weights<E: Environment>(
    env: &E,
    policy: &Policy<E::Sim>,
    episodes: usize,
    seed: u64,
) -> Result<BTreeMap<E::Sim, f64>> {
    let mut counts: BTreeMap<E::Sim, f64> = env.sim_states()?.into_iter().map(|s| (s, 1.0)).collect();
    for ep in 0..episodes {
        let mut rng = seed::rng(seed::derive(seed, ep as u64));
        let mut s = env.reset(&mut rng);
        for _ in 0..env.horizon() {
            if env.is_terminal(&s) {
                break;
            }
            let o = env.observe(&s);
            *counts.get_mut(&o).ok_or_else(|| Error::UnknownState(alloc::format!("{o:?}")))? += 1.0;
            let st = env.step(&s, policy.act(&o)?, &mut rng as &mut dyn RngCore)?;
            if st.done {
                break;
            }
            s = st.next;
        }
    }
    let total: f64 = counts.values().sum();
    counts.values_mut().for_each(|w| *w /= total);
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplit<S: Ord> {
    pub seen: Vec<S>,
    pub unseen: Vec<S>,
    pub weights: BTreeMap<S, f64>,
}

/// Seen = sim states with at least one feedback label, unseen = the rest.
pub fn make_split<E: Environment>(
    feedback: &FeedbackDataset<E::Real, E::Sim>,
    env: &E,
    policy: &Policy<E::Sim>,
    rollouts: usize,
    seed: u64,
) -> Result<EvalSplit<E::Sim>> {
    let weights = visitation_weights(env, policy, rollouts, seed)?;
    let seen_set: BTreeSet<E::Sim> = feedback.seen_states().copied().collect();
    if let Some(s) = seen_set.iter().find(|s| !weights.contains_key(s)) {
        return Err(Error::UnknownState(alloc::format!("{s:?}")));
    }
    let (seen, unseen) = weights.keys().copied().partition(|s| seen_set.contains(s));
    Ok(EvalSplit { seen, unseen, weights })
}

/// Weighted F1 on the positive class; zero division gives 0.
/// Items are (predicted, actual, weight).
pub fn weighted_f1(items: impl IntoIterator<Item = (bool, bool, f64)>) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (p, t, w) in items {
        match (p, t) {
            (true, true) => tp += w,
            (true, false) => fp += w,
            (false, true) => fn_ += w,
            _ => {}
        }
    }
    if tp <= 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Weighted F1 of `predict` over `states` against the ground truth.
pub fn split_f1<S: Ord + Copy + fmt::Debug, R: Copy>(
    states: &[S],
    weights: &BTreeMap<S, f64>,
    truth: &BlindSpotTruth<S, R>,
    mut predict: impl FnMut(&S) -> Result<bool>,
) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut items = Vec::with_capacity(states.len());
    for s in states {
        let w = *weights.get(s).ok_or_else(|| Error::UnknownState(alloc::format!("{s:?}")))?;
        let t = truth.is_blind_spot(s).ok_or_else(|| Error::UnknownState(alloc::format!("{s:?}")))?;
        items.push((predict(s)?, t, w));
    }
    Ok(weighted_f1(items))
}

/// Model weighted F1 over one side of a split.
pub fn model_f1<E: Environment>(
    env: &E,
    model: &BlindSpotModel,
    states: &[E::Sim],
    weights: &BTreeMap<E::Sim, f64>,
    truth: &BlindSpotTruth<E::Sim, E::Real>,
) -> Result<f64> {
    split_f1(states, weights, truth, |s| Ok(model.predict_state(env, s)?.blind_spot))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Model,
    NeverQuery,
    AlwaysQuery,
}

impl Condition {
    pub fn code(self) -> &'static str {
        match self {
            Condition::Model => "model",
            Condition::NeverQuery => "never-query",
            Condition::AlwaysQuery => "always-query",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// When the agent hands control to the oracle.
pub enum QueryRule<'a, S> {
    Never,
    Always,
    Model(&'a dyn Fn(&S) -> Result<bool>),
}

impl<S> QueryRule<'_, S> {
    pub fn condition(&self) -> Condition {
        match self {
            QueryRule::Never => Condition::NeverQuery,
            QueryRule::Always => Condition::AlwaysQuery,
            QueryRule::Model(_) => Condition::Model,
        }
    }

    fn query(&self, s: &S) -> Result<bool> {
        match self {
            QueryRule::Never => Ok(false),
            QueryRule::Always => Ok(true),
            QueryRule::Model(f) => f(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OilResult {
    pub condition: Condition,
    pub mean_reward: f64,
    /// Population standard deviation of episode returns.
    pub reward_std: f64,
    pub query_rate: f64,
    pub episodes: usize,
    pub steps: usize,
    pub queries: usize,
    pub seed: u64,
    pub episode_rewards: Vec<f64>,
}

/// Execute in `env`, querying per step: queried steps take the oracle's
/// action, the rest follow `policy`. Episode `i` uses `seed::derive(seed, i)`.
pub fn oil_run<E: Environment>(
    env: &E,
    policy: &Policy<E::Sim>,
    oracle: &Oracle<E::Real>,
    rule: &QueryRule<'_, E::Sim>,
    episodes: usize,
    seed: u64,
) -> Result<OilResult> {
    if episodes == 0 {
        return Err(Error::Config("oracle-in-the-loop needs at least one episode".into()));
    }
    let (mut steps, mut queries) = (0usize, 0usize);
    let mut rewards = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let mut rng = seed::rng(seed::derive(seed, ep as u64));
        let mut s = env.reset(&mut rng);
        let mut total = 0.0;
        for _ in 0..env.horizon() {
            if env.is_terminal(&s) {
                break;
            }
            let o = env.observe(&s);
            let a = if rule.query(&o)? {
                queries += 1;
                oracle.policy_action(&s)?
            } else {
                policy.act(&o)?
            };
            steps += 1;
            let st = env.step(&s, a, &mut rng as &mut dyn RngCore)?;
            total += st.reward;
            if st.done {
                break;
            }
            s = st.next;
        }
        rewards.push(total);
    }
    let n = episodes as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(OilResult {
        condition: rule.condition(),
        mean_reward: mean,
        reward_std: libm::sqrt(var),
        query_rate: if steps == 0 { 0.0 } else { queries as f64 / steps as f64 },
        episodes,
        steps,
        queries,
        seed,
        episode_rewards: rewards,
    })
}

/// Label events per sim state.
pub fn bias_heatmap<R: Copy, S: Ord + Copy>(feedback: &FeedbackDataset<R, S>) -> BTreeMap<S, usize> {
    let mut out = BTreeMap::new();
    for e in feedback.events() {
        *out.entry(e.sim).or_insert(0) += 1;
    }
    out
}
