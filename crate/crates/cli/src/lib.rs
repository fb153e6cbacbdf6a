//! Experiment front end for `blindspot-core`: configuration files, the
//! end-to-end pipeline, sweeps and the CSV/JSON file formats.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;
pub mod sweep;
