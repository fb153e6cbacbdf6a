//! Environment abstraction and the paired source/target domains.
//!
//! Every domain is a finite, discretized MDP over a *real* state type. The agent
//! only sees the *sim* projection produced by [`Environment::observe`], which
//! drops the hidden features that exist only in the target variant.

use alloc::format;
use alloc::vec::Vec;
use core::fmt::Debug;

use rand::RngCore;

use crate::error::{Error, Result};

pub mod catcher;
pub mod flappy;

pub use catcher::{Catcher, CatcherConfig, CatcherReal, CatcherSim, FruitKind, Region};
pub use flappy::{FlappyBird, FlappyConfig, FlappyReal, FlappySim, PipeKind};

pub type Action = usize;

/// Default cap on enumerated state-space size.
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Outcome of a single environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step<S> {
    pub next: S,
    pub reward: f64,
    pub done: bool,
}

/// One branch of the exact transition distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<S> {
    pub prob: f64,
    pub next: S,
    pub reward: f64,
    pub done: bool,
}

/// Which variant of a domain an environment instance simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Training simulator: hidden features are never active.
    Source,
    /// Real world: hidden features are active.
    Target,
}

/// A finite episodic domain.
pub trait Environment {
    type Real: Copy + Ord + Debug;
    type Sim: Copy + Ord + Debug;

    fn name(&self) -> &'static str;
    fn variant(&self) -> Variant;
    fn action_names(&self) -> &'static [&'static str];

    fn num_actions(&self) -> usize {
        self.action_names().len()
    }

    /// Step cap per episode.
    fn horizon(&self) -> usize;

    /// Project a real state onto the agent's representation.
    fn observe(&self, s: &Self::Real) -> Self::Sim;

    fn reset(&self, rng: &mut dyn RngCore) -> Self::Real;

    fn step(&self, s: &Self::Real, a: Action, rng: &mut dyn RngCore) -> Result<Step<Self::Real>>;

    /// Exact transition distribution of `(s, a)`; probabilities sum to one.
    fn transitions(&self, s: &Self::Real, a: Action) -> Result<Vec<Transition<Self::Real>>>;

    /// Terminal states have no decisions left; their action values are zero.
    fn is_terminal(&self, s: &Self::Real) -> bool;

    /// All valid real states of this variant, duplicate-free.
    fn real_states(&self) -> Result<Vec<Self::Real>>;

    /// All sim states (shared by both variants), duplicate-free.
    fn sim_states(&self) -> Result<Vec<Self::Sim>>;

    fn real_fields(&self) -> &'static [&'static str];
    fn sim_fields(&self) -> &'static [&'static str];
    fn real_values(&self, s: &Self::Real) -> Vec<i64>;
    fn sim_values(&self, s: &Self::Sim) -> Vec<i64>;
    fn real_from_values(&self, v: &[i64]) -> Result<Self::Real>;
    fn sim_from_values(&self, v: &[i64]) -> Result<Self::Sim>;

    fn check_action(&self, a: Action) -> Result<()> {
        if a < self.num_actions() {
            Ok(())
        } else {
            Err(Error::InvalidAction { action: a, num_actions: self.num_actions() })
        }
    }

    /// Real states where the agent still has to act.
    fn decision_states(&self) -> Result<Vec<Self::Real>> {
        Ok(self.real_states()?.into_iter().filter(|s| !self.is_terminal(s)).collect())
    }
}

/// Enumeration of both state spaces of an environment.
#[derive(Debug, Clone)]
pub struct Enumeration<R, S> {
    pub sim: Vec<S>,
    pub real: Vec<R>,
}

pub fn enumerate_states<E: Environment>(env: &E) -> Result<Enumeration<E::Real, E::Sim>> {
    Ok(Enumeration { sim: env.sim_states()?, real: env.real_states()? })
}

/// A source simulator and the matching target world.
#[derive(Debug, Clone)]
pub struct EnvPair<E> {
    pub source: E,
    pub target: E,
    pub seed: u64,
}

impl<E: Environment> EnvPair<E> {
    pub fn new(source: E, target: E, seed: u64) -> Result<Self> {
        if source.variant() != Variant::Source || target.variant() != Variant::Target {
            return Err(Error::Config("env pair needs a source and a target variant".into()));
        }
        if source.action_names() != target.action_names() {
            return Err(Error::Config("source and target action sets differ".into()));
        }
        if source.sim_states()? != target.sim_states()? {
            return Err(Error::Config("source and target sim state spaces differ".into()));
        }
        Ok(EnvPair { source, target, seed })
    }

    pub fn horizon(&self) -> usize {
        self.target.horizon()
    }
}

pub(crate) fn check_cap(size: usize, cap: usize) -> Result<()> {
    if size > cap {
        Err(Error::StateSpaceTooLarge { size, cap })
    } else {
        Ok(())
    }
}

pub(crate) fn field_error(what: &str, v: &[i64]) -> Error {
    Error::UnknownState(format!("{what} {v:?}"))
}
