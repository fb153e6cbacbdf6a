//! Command-line verbs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blindspot_core::aggregate::{self, DsConfig};
use blindspot_core::env::{EnvPair, Environment};
use blindspot_core::eval;
use blindspot_core::feedback::Protocol;
use blindspot_core::model::{self, TrainingSet};
use blindspot_core::seed;
use clap::{Args, Parser, Subcommand};

use crate::config::{AggregatorKind, Domain, ExperimentConfig, OracleKind};
use crate::formats::{self, AggregatedFile};
use crate::pipeline::{catcher_pair, flappy_pair, oil_seed, CellKey, Prepared, Replicate};
use crate::report::{self, ReportRow};
use crate::sweep;

#[derive(Debug, Parser)]
#[command(name = "blindspot", version, about = "Learn where a transferred agent's state representation hides danger")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Experiment config (TOML); defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Replicate seed; for `sweep`, replaces the configured seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve both worlds and write action-value tables and ground truth.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Collect oracle feedback for one protocol and budget.
    Collect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        protocol: Protocol,
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value = "strict", value_parser = parse_oracle)]
        oracle: OracleKind,
        /// Directory written by `train`; solved from scratch when absent.
        #[arg(long)]
        tables: Option<PathBuf>,
    },
    /// Aggregate a feedback file into per-state labels.
    Aggregate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "ds", value_parser = parse_aggregator)]
        aggregator: AggregatorKind,
    },
    /// Train a calibrated blind-spot model on aggregated labels.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score a model against ground truth and run it with the oracle in the loop.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Feedback the model was trained from; defines seen states.
        #[arg(long)]
        feedback: PathBuf,
        #[arg(long, default_value = "strict", value_parser = parse_oracle)]
        oracle: OracleKind,
        /// Aggregator name recorded in the report row.
        #[arg(long, default_value = "")]
        aggregator: String,
        /// Also emit never-query and always-query rows.
        #[arg(long)]
        baselines: bool,
        #[arg(long)]
        tables: Option<PathBuf>,
    },
    /// Run the configured grid and write report files.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Summarise a report into mean/std tables, written next to it (or to `--out`).
    Report {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out or output_dir>/report.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn parse_oracle(s: &str) -> Result<OracleKind, String> {
    match s {
        "strict" => Ok(OracleKind::Strict),
        "lenient" => Ok(OracleKind::Lenient),
        _ => Err(format!("unknown oracle mode {s:?} (expected strict or lenient)")),
    }
}

fn parse_aggregator(s: &str) -> Result<AggregatorKind, String> {
    AggregatorKind::parse(s).ok_or_else(|| format!("unknown aggregator {s:?} (expected ds, ds-original, ds-constrained, mv or al)"))
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn replicate_seed(common: &Common, cfg: &ExperimentConfig) -> u64 {
    common.seed.unwrap_or(cfg.seeds[0])
}

fn out_file(common: &Common, cfg: &ExperimentConfig, default: &str) -> PathBuf {
    match &common.out {
        Some(p) => p.clone(),
        None => cfg.output_dir.join(default),
    }
}

macro_rules! with_pair {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.domain {
            Domain::Catcher => $f(catcher_pair($cfg)?, $($arg),*),
            Domain::Flappybird => $f(flappy_pair($cfg)?, $($arg),*),
        }
    };
}

fn prepare<E: Environment>(
    pair: EnvPair<E>,
    cfg: &ExperimentConfig,
    kinds: &[OracleKind],
    tables: Option<&Path>,
) -> Result<Prepared<E>> {
    match tables {
        Some(dir) => {
            let (q_sim, q_real) = formats::read_env_qtables(dir, &pair.target)?;
            Prepared::from_tables(pair, q_sim, q_real, cfg, kinds)
        }
        None => Prepared::new(pair, cfg, kinds),
    }
}

fn train<E: Environment>(pair: EnvPair<E>, cfg: &ExperimentConfig) -> Result<()> {
    let p = Prepared::new(pair, cfg, &cfg.oracles)?;
    let env = &p.pair.target;
    let dir = cfg.output_dir.join("tables");
    formats::write_env_qtables(&dir, env, &p.q_sim, &p.q_real)?;
    println!("{}: {} sim states, {} real states", env.name(), p.q_sim.len(), p.q_real.len());
    for (kind, setup) in &p.oracles {
        let path = dir.join(format!("truth_{}.csv", kind.name()));
        formats::write_truth(&path, env, &setup.truth)?;
        println!("{} oracle: {} blind spots", kind.name(), setup.truth.blind_spot_count());
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn collect<E: Environment>(
    pair: EnvPair<E>,
    cfg: &ExperimentConfig,
    key: CellKey,
    tables: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let p = prepare(pair, cfg, &[key.oracle], tables)?;
    let d = crate::pipeline::collect(&p, &key)?;
    formats::write_feedback(out, &p.pair.target, &d)?;
    let ones = d.events().iter().filter(|e| e.label == 1).count();
    println!("{} labels ({} blind spot) over {} sim states -> {}", d.total_labels(), ones, d.labels().len(), out.display());
    Ok(())
}

fn aggregate_file<E: Environment>(pair: EnvPair<E>, input: &Path, kind: AggregatorKind, out: &Path) -> Result<()> {
    let env = &pair.target;
    let d = formats::read_feedback(input, env)?;
    if kind == AggregatorKind::Al {
        let labels = aggregate::all_labels(d.labels())?;
        formats::write_all_labels(out, env, &labels, d.seed)?;
        println!("{} labels -> {}", labels.len(), out.display());
        return Ok(());
    }
    let agg = match kind.ds_variant(d.protocol) {
        Some(v) => aggregate::dawid_skene(d.labels(), v, &DsConfig::default())?,
        None => aggregate::majority_vote(d.labels())?,
    };
    formats::write_aggregated(out, env, &agg, d.seed)?;
    if let Some(diag) = &agg.diagnostics {
        let c = diag.noise.confusion;
        println!(
            "{:?} Dawid-Skene: prior {:.6}, confusion [[{:.6}, {:.6}], [{:.6}, {:.6}]], {} iterations{}",
            diag.variant,
            diag.noise.prior,
            c[0][0],
            c[0][1],
            c[1][0],
            c[1][1],
            diag.iterations,
            if diag.converged { "" } else { " (not converged)" }
        );
    }
    println!("{} states, {} blind spots -> {}", agg.len(), agg.blind_spot_count(), out.display());
    Ok(())
}

fn fit<E: Environment>(pair: EnvPair<E>, cfg: &ExperimentConfig, input: &Path, seed_override: Option<u64>, out: &Path) -> Result<()> {
    let env = &pair.target;
    let (file, feedback_seed) = formats::read_aggregated(input, env)?;
    let ts = match &file {
        AggregatedFile::Aggregated(a) => TrainingSet::from_aggregated(env, a)?,
        AggregatedFile::AllLabels(l) => TrainingSet::from_all_labels(env, l)?,
    };
    let model_seed = seed_override.unwrap_or_else(|| seed::derive(feedback_seed, seed::tag("model")));
    let trained = model::train_model(&ts, env.sim_fields(), &cfg.model.train_config(), model_seed)?;
    formats::save_model(out, &trained.model)?;
    let m = &trained.model;
    if let Some(s) = &trained.report.search {
        let b = &s.best;
        println!(
            "best of {} trials: {} trees, depth {}, min leaf {}, {} features (cv F1 {:.4})",
            s.trials.len(),
            b.n_trees,
            b.max_depth.map(|d| d.to_string()).unwrap_or_else(|| "none".into()),
            b.min_samples_leaf,
            b.max_features,
            s.best_score
        );
    }
    if let Some(c) = &trained.report.calibration {
        println!("threshold {:.6}: {} of {} holdout states flagged (target {:.2})", m.threshold, c.predicted_positive, c.size, c.target_prior * c.size as f64);
    }
    if m.degenerate {
        println!("single-class training data: constant model");
    }
    println!("-> {}", out.display());
    Ok(())
}

struct EvalArgs<'a> {
    model: &'a Path,
    feedback: &'a Path,
    oracle: OracleKind,
    aggregator: &'a str,
    baselines: bool,
    tables: Option<&'a Path>,
    seed: u64,
    out: &'a Path,
}

fn evaluate<E: Environment>(pair: EnvPair<E>, cfg: &ExperimentConfig, a: EvalArgs) -> Result<()> {
    let p = prepare(pair, cfg, &[a.oracle], a.tables)?;
    let env = &p.pair.target;
    let m = formats::load_model(a.model)?;
    let d = formats::read_feedback(a.feedback, env)?;
    let rep = Replicate::new(&p, cfg, a.seed)?;
    let setup = p.setup(a.oracle)?;
    let split = eval::EvalSplit {
        seen: rep.weights.keys().copied().filter(|s| d.labels().contains_key(s)).collect::<Vec<_>>(),
        unseen: rep.weights.keys().copied().filter(|s| !d.labels().contains_key(s)).collect::<Vec<_>>(),
        weights: rep.weights.clone(),
    };
    let seen_f1 = eval::model_f1(env, &m, &split.seen, &split.weights, &setup.truth)?;
    let unseen_f1 =
        if split.unseen.is_empty() { None } else { Some(eval::model_f1(env, &m, &split.unseen, &split.weights, &setup.truth)?) };
    let oil = if cfg.eval.oil_episodes > 0 {
        let rule = |s: &E::Sim| Ok(m.predict_state(env, s)?.blind_spot);
        Some(eval::oil_run(env, &p.pi_sim, &setup.oracle, &eval::QueryRule::Model(&rule), cfg.eval.oil_episodes, oil_seed(a.seed))?)
    } else {
        None
    };
    let mut rows = vec![ReportRow {
        schema_version: formats::SCHEMA_VERSION,
        domain: env.name().into(),
        oracle: a.oracle.name().into(),
        protocol: d.protocol.code().into(),
        aggregator: a.aggregator.into(),
        budget: Some(d.budget),
        seed: a.seed,
        condition: eval::Condition::Model.code().into(),
        seen_f1: Some(seen_f1),
        unseen_f1,
        n_seen: Some(split.seen.len()),
        n_unseen: Some(split.unseen.len()),
        threshold: Some(m.threshold),
        calibration_gap: None,
        degenerate: Some(m.degenerate),
        oil_reward: oil.as_ref().map(|o| o.mean_reward),
        oil_reward_std: oil.as_ref().map(|o| o.reward_std),
        query_rate: oil.as_ref().map(|o| o.query_rate),
    }];
    if a.baselines {
        for o in [&rep.never, &rep.always].into_iter().flatten() {
            rows.push(ReportRow {
                protocol: String::new(),
                aggregator: String::new(),
                budget: None,
                condition: o.condition.code().into(),
                seen_f1: None,
                unseen_f1: None,
                n_seen: None,
                n_unseen: None,
                threshold: None,
                degenerate: None,
                oil_reward: Some(o.mean_reward),
                oil_reward_std: Some(o.reward_std),
                query_rate: Some(o.query_rate),
                ..rows[0].clone()
            });
        }
    }
    report::save_report(a.out, &rows)?;
    report::write_report(std::io::stdout().lock(), &rows)?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            with_pair!(&cfg, train(&cfg))
        }
        Command::Collect { common, protocol, budget, oracle, tables } => {
            let cfg = load_config(&Common { out: None, ..common.clone() })?;
            if budget == 0 {
                bail!("--budget must be positive");
            }
            let key = CellKey { oracle, protocol, budget, seed: replicate_seed(&common, &cfg) };
            let out = out_file(&common, &cfg, &format!("feedback/{}.csv", key.label()));
            with_pair!(&cfg, collect(&cfg, key, tables.as_deref(), &out))
        }
        Command::Aggregate { common, input, aggregator } => {
            let cfg = load_config(&Common { out: None, ..common.clone() })?;
            let out = out_file(&common, &cfg, "aggregated.csv");
            with_pair!(&cfg, aggregate_file(&input, aggregator, &out))
        }
        Command::Fit { common, input } => {
            let cfg = load_config(&Common { out: None, ..common.clone() })?;
            let out = out_file(&common, &cfg, "model.json");
            with_pair!(&cfg, fit(&cfg, &input, common.seed, &out))
        }
        Command::Evaluate { common, model, feedback, oracle, aggregator, baselines, tables } => {
            let cfg = load_config(&Common { out: None, ..common.clone() })?;
            let out = out_file(&common, &cfg, "evaluation.csv");
            let args = EvalArgs {
                model: &model,
                feedback: &feedback,
                oracle,
                aggregator: &aggregator,
                baselines,
                tables: tables.as_deref(),
                seed: replicate_seed(&common, &cfg),
                out: &out,
            };
            with_pair!(&cfg, evaluate(&cfg, args))
        }
        Command::Sweep { common } => {
            let cfg = load_config(&common)?;
            let outcome = sweep::run_sweep(&cfg, &cfg.output_dir)?;
            println!(
                "{} cells, {} rows in {:.1}s -> {}",
                outcome.manifest.cells,
                outcome.rows.len(),
                outcome.manifest.wall_clock_seconds,
                outcome.out_dir.display()
            );
            for f in &outcome.failed {
                eprintln!("warning: {} {} failed: {}", f.cell, f.aggregator.as_deref().unwrap_or(""), f.error);
            }
            Ok(())
        }
        Command::Report { common, input } => {
            let cfg = load_config(&common)?;
            let input = input.unwrap_or_else(|| cfg.output_dir.join("report.csv"));
            let rows = report::load_report(&input).context("loading report")?;
            let summary = report::compare_conditions(&rows);
            let dir = common.out.clone().unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir)?;
            summary.write_classifier(std::fs::File::create(dir.join("summary_classifier.csv"))?)?;
            summary.write_oil(std::fs::File::create(dir.join("summary_oil.csv"))?)?;
            let mut stdout = std::io::stdout().lock();
            summary.write_classifier(&mut stdout)?;
            std::io::Write::write_all(&mut stdout, b"\n")?;
            summary.write_oil(&mut stdout)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
    }
}
