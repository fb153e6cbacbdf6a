//! Oracle feedback collection protocols.
//!
//! Every protocol spends its budget one labelled state visit at a time and
//! records the real state behind each label, so the per-sim-state label lists
//! and visit heatmaps can be rebuilt from the event log.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, RngCore};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::oracle::{Label, Oracle, BLIND_SPOT, SAFE};
use crate::rl::Policy;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    /// Random real states, oracle judges the agent's action.
    RandomAcceptable,
    /// Random real states, agent only sees the oracle's action.
    RandomActionMismatch,
    /// Oracle demonstrations, mismatches reviewed with the acceptable function.
    DemoAcceptable,
    /// Oracle demonstrations, every mismatch counts as unacceptable.
    DemoActionMismatch,
    /// Agent acts while the oracle interrupts unacceptable actions.
    Corrections,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::RandomAcceptable,
        Protocol::RandomActionMismatch,
        Protocol::DemoAcceptable,
        Protocol::DemoActionMismatch,
        Protocol::Corrections,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Protocol::RandomAcceptable => "R-A",
            Protocol::RandomActionMismatch => "R-AM",
            Protocol::DemoAcceptable => "D-A",
            Protocol::DemoActionMismatch => "D-AM",
            Protocol::Corrections => "C",
        }
    }

    /// Whether labels may flag acceptable-but-different actions.
    pub fn has_action_mismatch_noise(self) -> bool {
        matches!(self, Protocol::RandomActionMismatch | Protocol::DemoActionMismatch)
    }

    pub fn is_trajectory(self) -> bool {
        !matches!(self, Protocol::RandomAcceptable | Protocol::RandomActionMismatch)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(alloc::format!("unknown protocol {s:?} (expected R-A, R-AM, D-A, D-AM or C)")))
    }
}

/// One labelled state visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelEvent<R, S> {
    pub real: R,
    pub sim: S,
    pub label: Label,
    pub episode: u32,
    pub step: u32,
}

/// Noisy labels per sim state plus the provenance log they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackDataset<R, S: Ord> {
    pub protocol: Protocol,
    pub seed: u64,
    pub budget: usize,
    events: Vec<LabelEvent<R, S>>,
    labels: BTreeMap<S, Vec<Label>>,
}

impl<R: Copy, S: Ord + Copy> FeedbackDataset<R, S> {
    pub fn from_events(protocol: Protocol, seed: u64, budget: usize, events: Vec<LabelEvent<R, S>>) -> Result<Self> {
        if events.len() > budget {
            return Err(Error::Config(alloc::format!("{} labels exceed budget {budget}", events.len())));
        }
        let mut labels: BTreeMap<S, Vec<Label>> = BTreeMap::new();
        for e in &events {
            if e.label > BLIND_SPOT {
                return Err(Error::Config(alloc::format!("label {} is not 0 or 1", e.label)));
            }
            labels.entry(e.sim).or_default().push(e.label);
        }
        Ok(FeedbackDataset { protocol, seed, budget, events, labels })
    }

    pub fn events(&self) -> &[LabelEvent<R, S>] {
        &self.events
    }

    /// Per-sim-state label lists in event order.
    pub fn labels(&self) -> &BTreeMap<S, Vec<Label>> {
        &self.labels
    }

    pub fn total_labels(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn seen_states(&self) -> impl Iterator<Item = &S> {
        self.labels.keys()
    }
}

/// Everything a protocol needs: the target world, the oracle and the agent.
pub struct Collector<'a, E: Environment> {
    pub env: &'a E,
    pub oracle: &'a Oracle<E::Real>,
    pub sim_policy: &'a Policy<E::Sim>,
}

type Dataset<E> = FeedbackDataset<<E as Environment>::Real, <E as Environment>::Sim>;

impl<'a, E: Environment> Collector<'a, E> {
    pub fn new(env: &'a E, oracle: &'a Oracle<E::Real>, sim_policy: &'a Policy<E::Sim>) -> Self {
        Collector { env, oracle, sim_policy }
    }

    pub fn collect(&self, protocol: Protocol, budget: usize, seed: u64) -> Result<Dataset<E>> {
        match protocol {
            Protocol::RandomAcceptable => self.random(protocol, budget, seed),
            Protocol::RandomActionMismatch => self.random(protocol, budget, seed),
            Protocol::DemoAcceptable => self.demo(protocol, budget, seed),
            Protocol::DemoActionMismatch => self.demo(protocol, budget, seed),
            Protocol::Corrections => self.corrections(budget, seed),
        }
    }

    pub fn collect_random_acceptable(&self, budget: usize, seed: u64) -> Result<Dataset<E>> {
        self.random(Protocol::RandomAcceptable, budget, seed)
    }

    pub fn collect_random_action_mismatch(&self, budget: usize, seed: u64) -> Result<Dataset<E>> {
        self.random(Protocol::RandomActionMismatch, budget, seed)
    }

    /// Demonstrations; `resolve` reviews each mismatch with the acceptable function.
    pub fn collect_demo(&self, budget: usize, seed: u64, resolve: bool) -> Result<Dataset<E>> {
        let protocol = if resolve { Protocol::DemoAcceptable } else { Protocol::DemoActionMismatch };
        self.demo(protocol, budget, seed)
    }

    pub fn collect_corrections(&self, budget: usize, seed: u64) -> Result<Dataset<E>> {
        self.corrections(budget, seed)
    }

    fn random(&self, protocol: Protocol, budget: usize, seed: u64) -> Result<Dataset<E>> {
        let states = self.env.decision_states()?;
        if states.is_empty() && budget > 0 {
            return Err(Error::Empty("decision states"));
        }
        let mut rng = seed::rng(seed);
        let mut events = Vec::with_capacity(budget);
        for i in 0..budget {
            let real = states[rng.gen_range(0..states.len())];
            let sim = self.env.observe(&real);
            let agent = self.sim_policy.act(&sim)?;
            let label = match protocol {
                Protocol::RandomActionMismatch => mismatch(agent, self.oracle.policy_action(&real)?),
                _ => self.oracle.label(&real, agent)?,
            };
            events.push(LabelEvent { real, sim, label, episode: i as u32, step: 0 });
        }
        FeedbackDataset::from_events(protocol, seed, budget, events)
    }

    fn demo(&self, protocol: Protocol, budget: usize, seed: u64) -> Result<Dataset<E>> {
        let resolve = protocol == Protocol::DemoAcceptable;
        self.rollouts(protocol, budget, seed, |real, agent, expert| {
            let label = match mismatch(agent, expert) {
                BLIND_SPOT if resolve => self.oracle.label(real, agent)?,
                l => l,
            };
            Ok((label, expert))
        })
    }

    fn corrections(&self, budget: usize, seed: u64) -> Result<Dataset<E>> {
        self.rollouts(Protocol::Corrections, budget, seed, |real, agent, expert| {
            let label = self.oracle.label(real, agent)?;
            Ok((label, if label == BLIND_SPOT { expert } else { agent }))
        })
    }

    /// Episodes from the reset distribution until the budget is spent; `decide`
    /// maps (real state, agent action, oracle action) to (label, executed action).
    fn rollouts(
        &self,
        protocol: Protocol,
        budget: usize,
        seed: u64,
        decide: impl Fn(&E::Real, usize, usize) -> Result<(Label, usize)>,
    ) -> Result<Dataset<E>> {
        let mut rng = seed::rng(seed);
        let mut events = Vec::with_capacity(budget);
        let mut episode = 0u32;
        while events.len() < budget {
            let mut real = self.env.reset(&mut rng);
            let before = events.len();
            for step in 0..self.env.horizon() {
                if events.len() == budget || self.env.is_terminal(&real) {
                    break;
                }
                let sim = self.env.observe(&real);
                let agent = self.sim_policy.act(&sim)?;
                let expert = self.oracle.policy_action(&real)?;
                let (label, action) = decide(&real, agent, expert)?;
                events.push(LabelEvent { real, sim, label, episode, step: step as u32 });
                let st = self.env.step(&real, action, &mut rng as &mut dyn RngCore)?;
                if st.done {
                    break;
                }
                real = st.next;
            }
            if events.len() == before {
                return Err(Error::Empty("episode produced no decision states"));
            }
            episode += 1;
        }
        FeedbackDataset::from_events(protocol, seed, budget, events)
    }
}

fn mismatch(agent: usize, expert: usize) -> Label {
    if agent == expert {
        SAFE
    } else {
        BLIND_SPOT
    }
}
