//! Budget x protocol x oracle x seed sweeps.
//!
//! Output directory layout:
//!
//! ```text
//! report.csv            evaluation rows (see `report`)
//! noise.csv             fitted Dawid-Skene noise models
//! manifest.json         config hash, versions, wall clock, failed cells
//! config.toml           the resolved configuration
//! tables/               q_sim.csv, q_real.csv, truth_<oracle>.csv
//! heatmaps/<cell>.csv   feedback visitation counts per sim state
//! models/<cell>_<aggregator>.json   only with `save_models`
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use blindspot_core::env::Environment;
use blindspot_core::eval::{self, OilResult};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, OracleKind};
use crate::formats::{self, SCHEMA_VERSION};
use crate::pipeline::{catcher_pair, flappy_pair, run_cell, AggregatorResult, CellKey, Prepared, Replicate};
use crate::report::{self, ReportRow};

/// A cell or aggregator run that failed; the sweep carries on without it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub cell: String,
    pub aggregator: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub core_version: String,
    pub config_hash: String,
    pub domain: String,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub cells: usize,
    pub rows: usize,
    pub failed: Vec<Failure>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<ReportRow>,
    pub failed: Vec<Failure>,
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

/// Every cell of the sweep in report order.
pub fn cell_keys(cfg: &ExperimentConfig) -> Vec<CellKey> {
    let mut keys = Vec::new();
    for &oracle in &cfg.oracles {
        for protocol in cfg.protocol_list() {
            for &budget in &cfg.budgets {
                for &seed in &cfg.seeds {
                    keys.push(CellKey { oracle, protocol, budget, seed });
                }
            }
        }
    }
    keys
}

fn baseline_row(domain: &str, oracle: OracleKind, seed: u64, oil: &OilResult) -> ReportRow {
    ReportRow {
        schema_version: SCHEMA_VERSION,
        domain: domain.into(),
        oracle: oracle.name().into(),
        protocol: String::new(),
        aggregator: String::new(),
        budget: None,
        seed,
        condition: oil.condition.code().into(),
        seen_f1: None,
        unseen_f1: None,
        n_seen: None,
        n_unseen: None,
        threshold: None,
        calibration_gap: None,
        degenerate: None,
        oil_reward: Some(oil.mean_reward),
        oil_reward_std: Some(oil.reward_std),
        query_rate: Some(oil.query_rate),
    }
}

pub fn model_row<S: Ord>(domain: &str, key: &CellKey, r: &AggregatorResult<S>) -> ReportRow {
    let m = &r.trained.model;
    ReportRow {
        schema_version: SCHEMA_VERSION,
        domain: domain.into(),
        oracle: key.oracle.name().into(),
        protocol: key.protocol.code().into(),
        aggregator: r.aggregator.name().into(),
        budget: Some(key.budget),
        seed: key.seed,
        condition: eval::Condition::Model.code().into(),
        seen_f1: Some(r.seen_f1),
        unseen_f1: r.unseen_f1,
        n_seen: Some(r.n_seen),
        n_unseen: Some(r.n_unseen),
        threshold: Some(m.threshold),
        calibration_gap: r.calibration.map(|c| c.instance_gap()),
        degenerate: Some(m.degenerate),
        oil_reward: r.oil.as_ref().map(|o| o.mean_reward),
        oil_reward_std: r.oil.as_ref().map(|o| o.reward_std),
        query_rate: r.oil.as_ref().map(|o| o.query_rate),
    }
}

const NOISE_COLUMNS: [&str; 15] = [
    "domain",
    "oracle",
    "protocol",
    "aggregator",
    "budget",
    "seed",
    "variant",
    "prior",
    "e00",
    "e01",
    "e10",
    "e11",
    "iterations",
    "converged",
    "objective",
];

struct CellOutput {
    rows: Vec<ReportRow>,
    noise: Vec<Vec<String>>,
    failed: Vec<Failure>,
}

fn run_one<E: Environment + Sync>(
    p: &Prepared<E>,
    rep: &Replicate<E>,
    cfg: &ExperimentConfig,
    key: CellKey,
    out: &Path,
) -> Result<CellOutput>
where
    E::Real: Send + Sync,
    E::Sim: Send + Sync,
{
    let env = &p.pair.target;
    let domain = env.name();
    let label = key.label();
    let cell = run_cell(p, rep, cfg, key)?;
    formats::write_heatmap(&out.join("heatmaps").join(format!("{label}.csv")), env, &eval::bias_heatmap(&cell.feedback))?;
    let mut rows = Vec::new();
    let mut noise = Vec::new();
    let mut failed = Vec::new();
    for (kind, result) in &cell.results {
        match result {
            Ok(r) => {
                rows.push(model_row(domain, &key, r));
                if let Some(d) = r.ds_diagnostics() {
                    let c = d.noise.confusion;
                    noise.push(vec![
                        domain.to_string(),
                        key.oracle.name().into(),
                        key.protocol.code().into(),
                        kind.name().into(),
                        key.budget.to_string(),
                        key.seed.to_string(),
                        format!("{:?}", d.variant).to_lowercase(),
                        formats::fixed(d.noise.prior),
                        formats::fixed(c[0][0]),
                        formats::fixed(c[0][1]),
                        formats::fixed(c[1][0]),
                        formats::fixed(c[1][1]),
                        d.iterations.to_string(),
                        d.converged.to_string(),
                        d.objective.last().map(|&o| formats::fixed(o)).unwrap_or_default(),
                    ]);
                }
                if cfg.save_models {
                    let path = out.join("models").join(format!("{label}_{}.json", kind.name()));
                    formats::save_model(&path, &r.trained.model)?;
                }
            }
            Err(e) => failed.push(Failure { cell: label.clone(), aggregator: Some(kind.name().into()), error: e.clone() }),
        }
    }
    Ok(CellOutput { rows, noise, failed })
}

fn clear_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    Ok(())
}

fn sweep_domain<E: Environment + Sync>(
    pair: blindspot_core::env::EnvPair<E>,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(Vec<ReportRow>, Vec<Vec<String>>, Vec<Failure>, usize)>
where
    E::Real: Send + Sync,
    E::Sim: Send + Sync,
{
    let p = Prepared::new(pair, cfg, &cfg.oracles)?;
    let env = &p.pair.target;
    let tables = out.join("tables");
    formats::write_env_qtables(&tables, env, &p.q_sim, &p.q_real)?;
    for (kind, setup) in &p.oracles {
        formats::write_truth(&tables.join(format!("truth_{}.csv", kind.name())), env, &setup.truth)?;
    }
    let replicates: Vec<Replicate<E>> =
        cfg.seeds.par_iter().map(|&s| Replicate::new(&p, cfg, s)).collect::<Result<Vec<_>>>()?;
    let by_seed: BTreeMap<u64, &Replicate<E>> = replicates.iter().map(|r| (r.seed, r)).collect();

    let mut rows = Vec::new();
    for &oracle in &cfg.oracles {
        for rep in &replicates {
            for oil in [&rep.never, &rep.always].into_iter().flatten() {
                rows.push(baseline_row(env.name(), oracle, rep.seed, oil));
            }
        }
    }
    let keys = cell_keys(cfg);
    let outputs: Vec<(CellKey, Result<CellOutput>)> =
        keys.par_iter().map(|&k| (k, run_one(&p, by_seed[&k.seed], cfg, k, out))).collect();
    let mut noise = Vec::new();
    let mut failed = Vec::new();
    for (key, o) in outputs {
        match o {
            Ok(o) => {
                rows.extend(o.rows);
                noise.extend(o.noise);
                failed.extend(o.failed);
            }
            Err(e) => failed.push(Failure { cell: key.label(), aggregator: None, error: format!("{e:#}") }),
        }
    }
    Ok((rows, noise, failed, keys.len()))
}

/// Run every cell of `cfg` and write the report files into `out`.
/// Re-running into the same directory replaces earlier results.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for sub in ["heatmaps", "models", "tables"] {
        clear_dir(&out.join(sub))?;
    }
    let (rows, noise, failed, cells) = match cfg.domain {
        crate::config::Domain::Catcher => sweep_domain(catcher_pair(cfg)?, cfg, out)?,
        crate::config::Domain::Flappybird => sweep_domain(flappy_pair(cfg)?, cfg, out)?,
    };
    report::save_report(&out.join("report.csv"), &rows)?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(out.join("noise.csv"))
        .context("creating noise.csv")?;
    w.write_record(NOISE_COLUMNS)?;
    for r in &noise {
        w.write_record(r)?;
    }
    w.flush()?;
    std::fs::write(out.join("config.toml"), toml::to_string(cfg).context("serializing config")?)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: env!("CARGO_PKG_NAME").into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        core_version: blindspot_core::VERSION.into(),
        config_hash: cfg.hash(),
        domain: cfg.domain.name().into(),
        started_unix,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        cells,
        rows: rows.len(),
        failed: failed.clone(),
    };
    let mut f = std::fs::File::create(out.join("manifest.json")).context("creating manifest.json")?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    writeln!(f)?;
    Ok(SweepOutcome { rows, failed, manifest, out_dir: out.to_path_buf() })
}
