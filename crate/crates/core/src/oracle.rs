//! The simulated oracle: an acceptable function over the target's optimal
//! action values plus the target-optimal policy, and exhaustive ground truth.
//!
//! `A(s, a)` compares `dQ = Q_real(s, a*) - Q_real(s, a)` against a cutoff
//! `delta` taken at percentile `p` of all deltas pooled over every decision
//! state and action. The strict oracle accepts only the optimal action itself.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::env::{Action, Environment};
use crate::error::{Error, Result};
use crate::rl::{greedy_policy, max_value, Policy, QTable, TIE_TOLERANCE};

/// Feedback label: 0 means acceptable / safe, 1 unacceptable / blind spot.
pub type Label = u8;
pub const SAFE: Label = 0;
pub const BLIND_SPOT: Label = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMode {
    /// Only the optimal action (greedy, lowest index among ties) is acceptable.
    Strict,
    /// Actions with `dQ < delta(percentile)` are acceptable as well.
    Lenient { percentile: f64 },
}

impl OracleMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OracleMode::Strict => Ok(()),
            OracleMode::Lenient { percentile } if percentile > 0.0 && percentile < 1.0 => Ok(()),
            OracleMode::Lenient { percentile } => {
                Err(Error::Config(format!("oracle percentile {percentile} outside (0, 1)")))
            }
        }
    }
}

/// Percentile of ascending `sorted` data by linear interpolation between order
/// statistics at rank `(n - 1) * p`.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Empty("percentile sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("percentile {p} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Which deltas enter the percentile pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeltaPool {
    /// Keep the zero deltas of optimal (and tied) actions.
    pub include_zero: bool,
}

impl Default for DeltaPool {
    fn default() -> Self {
        DeltaPool { include_zero: true }
    }
}

/// `A(s, a)` built from the target action values.
#[derive(Debug, Clone)]
pub struct AcceptableFunction<R: Ord> {
    q: QTable<R>,
    optimal: Policy<R>,
    mode: OracleMode,
    delta: Option<f64>,
}

impl<R: Ord + Copy + core::fmt::Debug> AcceptableFunction<R> {
    /// Build over `q_real`, pooling deltas over `pool_states` (all states when
    /// `None`).
    pub fn build(q_real: QTable<R>, mode: OracleMode, pool: DeltaPool, pool_states: Option<&[R]>) -> Result<Self> {
        mode.validate()?;
        let optimal = greedy_policy(&q_real);
        let delta = match mode {
            OracleMode::Strict => None,
            OracleMode::Lenient { percentile: p } => {
                let mut deltas = Vec::new();
                let mut push_row = |row: &[f64]| {
                    let best = max_value(row);
                    let tol = TIE_TOLERANCE * best.abs().max(1.0);
                    for &v in row {
                        let d = best - v;
                        if pool.include_zero || d > tol {
                            deltas.push(d);
                        }
                    }
                };
                match pool_states {
                    Some(states) => {
                        for s in states {
                            push_row(q_real.row(s).ok_or_else(|| Error::UnknownState(format!("{s:?}")))?);
                        }
                    }
                    None => (0..q_real.len()).for_each(|i| push_row(q_real.row_at(i))),
                }
                deltas.sort_by(f64::total_cmp);
                Some(percentile(&deltas, p)?)
            }
        };
        Ok(AcceptableFunction { q: q_real, optimal, mode, delta })
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    /// Cutoff `delta`; `None` for the strict oracle.
    pub fn delta(&self) -> Option<f64> {
        self.delta
    }

    pub fn q_real(&self) -> &QTable<R> {
        &self.q
    }

    pub fn optimal_action(&self, s: &R) -> Result<Action> {
        self.optimal.act(s)
    }

    /// `Q_real(s, a*) - Q_real(s, a)`.
    pub fn delta_q(&self, s: &R, a: Action) -> Result<f64> {
        let row = self.q.row(s).ok_or_else(|| Error::UnknownState(format!("{s:?}")))?;
        let v = row.get(a).ok_or(Error::InvalidAction { action: a, num_actions: row.len() })?;
        Ok(max_value(row) - v)
    }

    /// 0 if `a` is acceptable in `s`, 1 otherwise.
    pub fn is_acceptable(&self, s: &R, a: Action) -> Result<Label> {
        let dq = self.delta_q(s, a)?;
        if a == self.optimal_action(s)? {
            return Ok(SAFE);
        }
        Ok(match self.delta {
            Some(delta) if dq < delta => SAFE,
            _ => BLIND_SPOT,
        })
    }

    pub fn acceptable_actions(&self, s: &R) -> Result<Vec<Action>> {
        let mut out = Vec::new();
        for a in 0..self.q.num_actions() {
            if self.is_acceptable(s, a)? == SAFE {
                out.push(a);
            }
        }
        Ok(out)
    }
}

/// `O = {A(s, a), pi_real}`.
#[derive(Debug, Clone)]
pub struct Oracle<R: Ord> {
    acceptable: AcceptableFunction<R>,
}

impl<R: Ord + Copy + core::fmt::Debug> Oracle<R> {
    pub fn new(acceptable: AcceptableFunction<R>) -> Self {
        Oracle { acceptable }
    }

    /// Oracle over a target environment, pooling deltas over its decision states.
    pub fn for_env<E>(env: &E, q_real: QTable<R>, mode: OracleMode, pool: DeltaPool) -> Result<Self>
    where
        E: Environment<Real = R>,
    {
        let decisions = env.decision_states()?;
        Ok(Oracle::new(AcceptableFunction::build(q_real, mode, pool, Some(&decisions))?))
    }

    pub fn acceptable(&self) -> &AcceptableFunction<R> {
        &self.acceptable
    }

    pub fn label(&self, s: &R, a: Action) -> Result<Label> {
        self.acceptable.is_acceptable(s, a)
    }

    /// `pi_real(s)`.
    pub fn policy_action(&self, s: &R) -> Result<Action> {
        self.acceptable.optimal_action(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruthEntry<R> {
    pub blind_spot: bool,
    /// First real preimage (in enumeration order) where the agent's action is
    /// unacceptable.
    pub witness: Option<R>,
}

/// Exhaustive blind-spot labelling of the sim state space.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindSpotTruth<S: Ord, R> {
    entries: BTreeMap<S, TruthEntry<R>>,
}

impl<S: Ord + Copy, R: Copy> BlindSpotTruth<S, R> {
    pub fn get(&self, s: &S) -> Option<&TruthEntry<R>> {
        self.entries.get(s)
    }

    pub fn is_blind_spot(&self, s: &S) -> Option<bool> {
        self.entries.get(s).map(|e| e.blind_spot)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&S, &TruthEntry<R>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn blind_spot_count(&self) -> usize {
        self.entries.values().filter(|e| e.blind_spot).count()
    }
}

/// Mark every sim state that has a real preimage where the agent's action is
/// unacceptable.
pub fn ground_truth_blind_spots<E: Environment>(
    env: &E,
    sim_policy: &Policy<E::Sim>,
    oracle: &Oracle<E::Real>,
) -> Result<BlindSpotTruth<E::Sim, E::Real>> {
    let mut entries: BTreeMap<E::Sim, TruthEntry<E::Real>> = env
        .sim_states()?
        .into_iter()
        .map(|s| (s, TruthEntry { blind_spot: false, witness: None }))
        .collect();
    for real in env.real_states()? {
        let sim = env.observe(&real);
        let entry = entries.get_mut(&sim).ok_or_else(|| Error::UnknownState(format!("{sim:?}")))?;
        if entry.blind_spot {
            continue;
        }
        if oracle.label(&real, sim_policy.act(&sim)?)? == crate::oracle::BLIND_SPOT {
            *entry = TruthEntry { blind_spot: true, witness: Some(real) };
        }
    }
    Ok(BlindSpotTruth { entries })
}
