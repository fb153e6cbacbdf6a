//! End-to-end pipeline for one domain: policies, oracles, feedback cells.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use blindspot_core::aggregate::{self, AggregatedDataset, DsConfig, DsDiagnostics};
use blindspot_core::env::{Catcher, EnvPair, Environment, FlappyBird, Variant};
use blindspot_core::eval::{self, Condition, OilResult, QueryRule};
use blindspot_core::feedback::{Collector, FeedbackDataset, Protocol};
use blindspot_core::model::{self, Calibration, TrainedModel, TrainingSet};
use blindspot_core::oracle::{ground_truth_blind_spots, BlindSpotTruth, Oracle};
use blindspot_core::rl::{self, greedy_policy, Policy, QTable};
use blindspot_core::seed;

use crate::config::{AggregatorKind, ExperimentConfig, OracleKind, Solver};

pub fn catcher_pair(cfg: &ExperimentConfig) -> Result<EnvPair<Catcher>> {
    let c = cfg.catcher.env_config();
    Ok(EnvPair::new(Catcher::new(c.clone(), Variant::Source)?, Catcher::new(c, Variant::Target)?, 0)?)
}

pub fn flappy_pair(cfg: &ExperimentConfig) -> Result<EnvPair<FlappyBird>> {
    let c = cfg.flappybird.env_config();
    Ok(EnvPair::new(FlappyBird::new(c.clone(), Variant::Source)?, FlappyBird::new(c, Variant::Target)?, 0)?)
}

/// Optimal action values of the agent's world (on sim states) and of the target.
pub fn solve<E: Environment>(pair: &EnvPair<E>, cfg: &ExperimentConfig) -> Result<(QTable<E::Sim>, QTable<E::Real>)> {
    let r = &cfg.rl;
    match r.solver {
        Solver::ValueIteration => {
            let q_source = rl::value_iteration(&pair.source, r.gamma, r.tolerance, r.max_sweeps).context("solving the source world")?;
            let q_sim = rl::project_to_sim(&pair.source, &q_source)?;
            let q_real = rl::value_iteration(&pair.target, r.gamma, r.tolerance, r.max_sweeps).context("solving the target world")?;
            Ok((q_sim, q_real))
        }
        Solver::QLearning => {
            let params = r.q_learning_params();
            let q_sim = rl::train_q_sim(&pair.source, &params)?;
            let real_params = rl::QLearningParams { seed: seed::derive(params.seed, 1), ..params };
            let q_real = rl::train_q_real(&pair.target, &real_params)?;
            Ok((q_sim, q_real))
        }
    }
}

pub struct OracleSetup<E: Environment> {
    pub oracle: Oracle<E::Real>,
    pub truth: BlindSpotTruth<E::Sim, E::Real>,
}

/// Everything that does not depend on a replicate seed.
pub struct Prepared<E: Environment> {
    pub pair: EnvPair<E>,
    pub q_sim: QTable<E::Sim>,
    pub pi_sim: Policy<E::Sim>,
    pub q_real: QTable<E::Real>,
    pub oracles: BTreeMap<OracleKind, OracleSetup<E>>,
}

impl<E: Environment> Prepared<E> {
    pub fn new(pair: EnvPair<E>, cfg: &ExperimentConfig, kinds: &[OracleKind]) -> Result<Self> {
        let (q_sim, q_real) = solve(&pair, cfg)?;
        Self::from_tables(pair, q_sim, q_real, cfg, kinds)
    }

    pub fn from_tables(
        pair: EnvPair<E>,
        q_sim: QTable<E::Sim>,
        q_real: QTable<E::Real>,
        cfg: &ExperimentConfig,
        kinds: &[OracleKind],
    ) -> Result<Self> {
        let pi_sim = greedy_policy(&q_sim);
        let mut oracles = BTreeMap::new();
        for &k in kinds {
            let oracle = Oracle::for_env(&pair.target, q_real.clone(), cfg.oracle_mode(k), cfg.delta_pool())?;
            let truth = ground_truth_blind_spots(&pair.target, &pi_sim, &oracle)?;
            oracles.insert(k, OracleSetup { oracle, truth });
        }
        Ok(Prepared { pair, q_sim, pi_sim, q_real, oracles })
    }

    pub fn setup(&self, kind: OracleKind) -> Result<&OracleSetup<E>> {
        self.oracles.get(&kind).with_context(|| format!("oracle {} was not prepared", kind.name()))
    }
}

/// Seed-dependent evaluation context shared by every cell of a replicate.
pub struct Replicate<E: Environment> {
    pub seed: u64,
    pub weights: BTreeMap<E::Sim, f64>,
    pub never: Option<OilResult>,
    pub always: Option<OilResult>,
}

pub fn oil_seed(replicate: u64) -> u64 {
    seed::derive(replicate, seed::tag("oil"))
}

impl<E: Environment> Replicate<E> {
    pub fn new(p: &Prepared<E>, cfg: &ExperimentConfig, replicate: u64) -> Result<Self> {
        let env = &p.pair.target;
        let weights = eval::visitation_weights(env, &p.pi_sim, cfg.eval.importance_rollouts, seed::derive(replicate, seed::tag("importance")))?;
        let (mut never, mut always) = (None, None);
        if cfg.eval.oil_episodes > 0 {
            // the oracle's policy is the same under every acceptability mode
            let oracle = &p.oracles.values().next().context("no oracle prepared")?.oracle;
            let n = cfg.eval.oil_episodes;
            never = Some(eval::oil_run(env, &p.pi_sim, oracle, &QueryRule::Never, n, oil_seed(replicate))?);
            always = Some(eval::oil_run(env, &p.pi_sim, oracle, &QueryRule::Always, n, oil_seed(replicate))?);
        }
        Ok(Replicate { seed: replicate, weights, never, always })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub oracle: OracleKind,
    pub protocol: Protocol,
    pub budget: usize,
    pub seed: u64,
}

impl CellKey {
    /// Independent of the oracle mode, so strict and lenient cells see the
    /// same random draws.
    pub fn collection_seed(&self) -> u64 {
        seed::derive_path(self.seed, &[seed::tag(self.protocol.code()), self.budget as u64])
    }

    pub fn model_seed(&self) -> u64 {
        seed::derive(self.collection_seed(), seed::tag("model"))
    }

    pub fn label(&self) -> String {
        format!("{}_{}_{}_{}", self.oracle.name(), self.protocol.code(), self.budget, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct AggregatorResult<S: Ord> {
    pub aggregator: AggregatorKind,
    pub seen_f1: f64,
    pub unseen_f1: Option<f64>,
    pub n_seen: usize,
    pub n_unseen: usize,
    pub calibration: Option<Calibration>,
    pub trained: TrainedModel,
    pub aggregated: Option<AggregatedDataset<S>>,
    pub oil: Option<OilResult>,
}

impl<S: Ord> AggregatorResult<S> {
    pub fn ds_diagnostics(&self) -> Option<&DsDiagnostics> {
        self.aggregated.as_ref().and_then(|a| a.diagnostics.as_ref())
    }
}

pub struct CellResult<E: Environment> {
    pub key: CellKey,
    pub feedback: FeedbackDataset<E::Real, E::Sim>,
    pub results: Vec<(AggregatorKind, std::result::Result<AggregatorResult<E::Sim>, String>)>,
}

pub fn collect<E: Environment>(p: &Prepared<E>, key: &CellKey) -> Result<FeedbackDataset<E::Real, E::Sim>> {
    let setup = p.setup(key.oracle)?;
    let collector = Collector::new(&p.pair.target, &setup.oracle, &p.pi_sim);
    Ok(collector.collect(key.protocol, key.budget, key.collection_seed())?)
}

/// Aggregate (or keep every label) and build the classifier's training set.
pub fn training_set<E: Environment>(
    env: &E,
    feedback: &FeedbackDataset<E::Real, E::Sim>,
    kind: AggregatorKind,
) -> Result<(TrainingSet, Option<AggregatedDataset<E::Sim>>)> {
    let labels = feedback.labels();
    if kind == AggregatorKind::Al {
        return Ok((TrainingSet::from_all_labels(env, &aggregate::all_labels(labels)?)?, None));
    }
    let agg = match kind.ds_variant(feedback.protocol) {
        Some(v) => aggregate::dawid_skene(labels, v, &DsConfig::default())?,
        None => aggregate::majority_vote(labels)?,
    };
    Ok((TrainingSet::from_aggregated(env, &agg)?, Some(agg)))
}

pub fn run_aggregator<E: Environment>(
    p: &Prepared<E>,
    rep: &Replicate<E>,
    cfg: &ExperimentConfig,
    key: &CellKey,
    feedback: &FeedbackDataset<E::Real, E::Sim>,
    kind: AggregatorKind,
) -> Result<AggregatorResult<E::Sim>> {
    let env = &p.pair.target;
    let setup = p.setup(key.oracle)?;
    let (ts, aggregated) = training_set(env, feedback, kind)?;
    let trained = model::train_model(&ts, env.sim_fields(), &cfg.model.train_config(), key.model_seed())?;
    let m = &trained.model;
    let seen: std::collections::BTreeSet<E::Sim> = feedback.seen_states().copied().collect();
    let (seen_states, unseen_states): (Vec<E::Sim>, Vec<E::Sim>) = rep.weights.keys().copied().partition(|s| seen.contains(s));
    let seen_f1 = eval::model_f1(env, m, &seen_states, &rep.weights, &setup.truth)?;
    let unseen_f1 = if unseen_states.is_empty() {
        None
    } else {
        Some(eval::model_f1(env, m, &unseen_states, &rep.weights, &setup.truth)?)
    };
    let oil = if cfg.eval.oil_episodes > 0 {
        let rule = |s: &E::Sim| Ok(m.predict_state(env, s)?.blind_spot);
        Some(eval::oil_run(env, &p.pi_sim, &setup.oracle, &QueryRule::Model(&rule), cfg.eval.oil_episodes, oil_seed(key.seed))?)
    } else {
        None
    };
    debug_assert!(oil.as_ref().is_none_or(|o| o.condition == Condition::Model));
    Ok(AggregatorResult {
        aggregator: kind,
        seen_f1,
        unseen_f1,
        n_seen: seen_states.len(),
        n_unseen: unseen_states.len(),
        calibration: trained.report.calibration,
        aggregated,
        trained,
        oil,
    })
}

pub fn run_cell<E: Environment>(p: &Prepared<E>, rep: &Replicate<E>, cfg: &ExperimentConfig, key: CellKey) -> Result<CellResult<E>> {
    let feedback = collect(p, &key)?;
    let results = cfg
        .aggregators
        .iter()
        .map(|&kind| (kind, run_aggregator(p, rep, cfg, &key, &feedback, kind).map_err(|e| format!("{e:#}"))))
        .collect();
    Ok(CellResult { key, feedback, results })
}
