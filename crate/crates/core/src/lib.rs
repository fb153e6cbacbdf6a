//! Discovery of representation blind spots for tabular reinforcement-learning agents.
//!
//! An agent trains in a source environment whose state omits features that the
//! target (real-world) environment carries. A simulated oracle, built from the
//! target's optimal action values, labels the agent's behaviour; the labels are
//! aggregated with Dawid-Skene EM and used to fit a calibrated random-forest
//! model that predicts which observable states are blind spots.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration and the
//! command-line front end live in the companion `blindspot` crate.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod aggregate;
pub mod env;
pub mod error;
pub mod eval;
pub mod feedback;
pub mod model;
pub mod oracle;
pub mod rl;
pub mod seed;

mod index;
#[cfg(test)]
pub(crate) mod testing;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use index::StateIndex;
