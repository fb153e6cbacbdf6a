//! Experiment configuration files.
//!
//! Every field has a default, so a config only needs to name what it changes.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use blindspot_core::aggregate::DsVariant;
use blindspot_core::env::{CatcherConfig, FlappyConfig};
use blindspot_core::feedback::Protocol;
use blindspot_core::model::{SearchConfig, SearchSpace, TrainConfig};
use blindspot_core::oracle::{DeltaPool, OracleMode};
use blindspot_core::rl::QLearningParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Catcher,
    Flappybird,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Catcher => "catcher",
            Domain::Flappybird => "flappybird",
        }
    }

    pub fn default_lenient_percentile(self) -> f64 {
        match self {
            Domain::Catcher => 0.95,
            Domain::Flappybird => 0.7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Strict,
    Lenient,
}

impl OracleKind {
    pub fn name(self) -> &'static str {
        match self {
            OracleKind::Strict => "strict",
            OracleKind::Lenient => "lenient",
        }
    }
}

/// Label aggregation choice; `ds` picks the variant from the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregatorKind {
    Ds,
    DsOriginal,
    DsConstrained,
    Mv,
    Al,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::Ds => "ds",
            AggregatorKind::DsOriginal => "ds-original",
            AggregatorKind::DsConstrained => "ds-constrained",
            AggregatorKind::Mv => "mv",
            AggregatorKind::Al => "al",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Ds, Self::DsOriginal, Self::DsConstrained, Self::Mv, Self::Al]
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
    }

    pub fn ds_variant(self, protocol: Protocol) -> Option<DsVariant> {
        match self {
            AggregatorKind::Ds if protocol.has_action_mismatch_noise() => Some(DsVariant::Original),
            AggregatorKind::Ds => Some(DsVariant::Constrained),
            AggregatorKind::DsOriginal => Some(DsVariant::Original),
            AggregatorKind::DsConstrained => Some(DsVariant::Constrained),
            AggregatorKind::Mv | AggregatorKind::Al => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    ValueIteration,
    QLearning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Defaults per domain: 0.95 for catcher, 0.7 for flappybird.
    pub lenient_percentile: Option<f64>,
    pub include_zero_deltas: bool,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection { lenient_percentile: None, include_zero_deltas: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearningSection {
    pub episodes: usize,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub seed: u64,
}

impl Default for QLearningSection {
    fn default() -> Self {
        let p = QLearningParams::default();
        QLearningSection {
            episodes: p.episodes,
            learning_rate: p.learning_rate,
            epsilon_start: p.epsilon_start,
            epsilon_end: p.epsilon_end,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub solver: Solver,
    pub gamma: f64,
    /// Value-iteration stopping tolerance on the value error.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub q_learning: QLearningSection,
}

impl Default for RlSection {
    fn default() -> Self {
        RlSection {
            solver: Solver::ValueIteration,
            gamma: 0.95,
            tolerance: 1e-8,
            max_sweeps: 10_000,
            q_learning: QLearningSection::default(),
        }
    }
}

impl RlSection {
    pub fn q_learning_params(&self) -> QLearningParams {
        let q = &self.q_learning;
        QLearningParams {
            episodes: q.episodes,
            gamma: self.gamma,
            learning_rate: q.learning_rate,
            epsilon_start: q.epsilon_start,
            epsilon_end: q.epsilon_end,
            seed: q.seed,
        }
    }
}

/// A tree depth limit, or `"none"` for unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Depth {
    Limited(usize),
    Unbounded(Unbounded),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unbounded {
    None,
}

impl Depth {
    fn get(self) -> Option<usize> {
        match self {
            Depth::Limited(d) => Some(d),
            Depth::Unbounded(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_trials: usize,
    pub folds: usize,
    pub calibration_fraction: f64,
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Depth>,
    pub min_samples_leaf: Vec<usize>,
    /// Empty means 1 up to the feature count.
    pub max_features: Vec<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = SearchSpace::default();
        ModelSection {
            n_trials: 20,
            folds: 3,
            calibration_fraction: 0.3,
            n_trees: s.n_trees,
            max_depth: s.max_depth.into_iter().map(|d| d.map_or(Depth::Unbounded(Unbounded::None), Depth::Limited)).collect(),
            min_samples_leaf: s.min_samples_leaf,
            max_features: s.max_features,
        }
    }
}

impl ModelSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            search: SearchConfig {
                space: SearchSpace {
                    n_trees: self.n_trees.clone(),
                    max_depth: self.max_depth.iter().map(|d| d.get()).collect(),
                    min_samples_leaf: self.min_samples_leaf.clone(),
                    max_features: self.max_features.clone(),
                },
                n_trials: self.n_trials,
                folds: self.folds,
            },
            calibration_fraction: self.calibration_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Target-environment episodes of the agent's policy for importance weights.
    pub importance_rollouts: usize,
    /// Oracle-in-the-loop episodes per condition; 0 disables execution runs.
    pub oil_episodes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { importance_rollouts: 1000, oil_episodes: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatcherSection {
    pub width: usize,
    pub height: usize,
    pub p_good: f64,
    pub bad_catch_penalty: f64,
    pub horizon: usize,
    pub enumeration_cap: usize,
}

impl Default for CatcherSection {
    fn default() -> Self {
        let c = CatcherConfig::default();
        CatcherSection {
            width: c.width,
            height: c.height,
            p_good: c.p_good,
            bad_catch_penalty: c.bad_catch_penalty,
            horizon: c.horizon,
            enumeration_cap: c.enumeration_cap,
        }
    }
}

impl CatcherSection {
    pub fn env_config(&self) -> CatcherConfig {
        CatcherConfig {
            width: self.width,
            height: self.height,
            p_good: self.p_good,
            bad_catch_penalty: self.bad_catch_penalty,
            horizon: self.horizon,
            enumeration_cap: self.enumeration_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlappySection {
    pub width: usize,
    pub height: usize,
    pub max_velocity: i8,
    pub flap_velocity: i8,
    pub gravity: i8,
    pub high_gap: (u8, u8),
    pub low_gap: (u8, u8),
    pub p_low: f64,
    pub copper_prob: f64,
    pub fly_high: u8,
    pub fly_low: u8,
    pub danger: u8,
    pub proximity: u8,
    pub start_y: u8,
    pub pass_reward: f64,
    pub crash_reward: f64,
    pub shaping_reward: f64,
    pub danger_penalty: f64,
    pub horizon: usize,
    pub enumeration_cap: usize,
}

impl Default for FlappySection {
    fn default() -> Self {
        let c = FlappyConfig::default();
        FlappySection {
            width: c.width,
            height: c.height,
            max_velocity: c.max_velocity,
            flap_velocity: c.flap_velocity,
            gravity: c.gravity,
            high_gap: c.high_gap,
            low_gap: c.low_gap,
            p_low: c.p_low,
            copper_prob: c.copper_prob,
            fly_high: c.fly_high,
            fly_low: c.fly_low,
            danger: c.danger,
            proximity: c.proximity,
            start_y: c.start_y,
            pass_reward: c.pass_reward,
            crash_reward: c.crash_reward,
            shaping_reward: c.shaping_reward,
            danger_penalty: c.danger_penalty,
            horizon: c.horizon,
            enumeration_cap: c.enumeration_cap,
        }
    }
}

impl FlappySection {
    pub fn env_config(&self) -> FlappyConfig {
        FlappyConfig {
            width: self.width,
            height: self.height,
            max_velocity: self.max_velocity,
            flap_velocity: self.flap_velocity,
            gravity: self.gravity,
            high_gap: self.high_gap,
            low_gap: self.low_gap,
            p_low: self.p_low,
            copper_prob: self.copper_prob,
            fly_high: self.fly_high,
            fly_low: self.fly_low,
            danger: self.danger,
            proximity: self.proximity,
            start_y: self.start_y,
            pass_reward: self.pass_reward,
            crash_reward: self.crash_reward,
            shaping_reward: self.shaping_reward,
            danger_penalty: self.danger_penalty,
            horizon: self.horizon,
            enumeration_cap: self.enumeration_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub output_dir: PathBuf,
    /// Replicate seeds; each one is a full independent repetition.
    pub seeds: Vec<u64>,
    pub budgets: Vec<usize>,
    pub protocols: Vec<String>,
    pub aggregators: Vec<AggregatorKind>,
    pub oracles: Vec<OracleKind>,
    /// Write every cell's forest to disk (large).
    pub save_models: bool,
    pub oracle: OracleSection,
    pub rl: RlSection,
    pub model: ModelSection,
    pub eval: EvalSection,
    pub catcher: CatcherSection,
    pub flappybird: FlappySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: Domain::Catcher,
            output_dir: PathBuf::from("runs"),
            seeds: vec![0, 1, 2, 3, 4],
            budgets: vec![1000, 2000, 4000, 8000],
            protocols: Protocol::ALL.iter().map(|p| p.code().to_string()).collect(),
            aggregators: vec![AggregatorKind::Ds, AggregatorKind::Mv, AggregatorKind::Al],
            oracles: vec![OracleKind::Strict, OracleKind::Lenient],
            save_models: false,
            oracle: OracleSection::default(),
            rl: RlSection::default(),
            model: ModelSection::default(),
            eval: EvalSection::default(),
            catcher: CatcherSection::default(),
            flappybird: FlappySection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every field before any computation starts.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |name: &str, msg: String| Err(ConfigError::Field { field: name.to_string(), message: msg });
        if self.seeds.is_empty() {
            return field("seeds", "at least one seed is required".into());
        }
        if self.budgets.is_empty() {
            return field("budgets", "at least one budget is required".into());
        }
        if let Some(b) = self.budgets.iter().find(|&&b| b == 0) {
            return field("budgets", format!("budget {b} must be positive"));
        }
        if self.protocols.is_empty() {
            return field("protocols", "at least one protocol is required".into());
        }
        for p in &self.protocols {
            if p.parse::<Protocol>().is_err() {
                return field("protocols", format!("unknown protocol {p:?} (expected R-A, R-AM, D-A, D-AM or C)"));
            }
        }
        if self.aggregators.is_empty() {
            return field("aggregators", "at least one aggregator is required".into());
        }
        if self.oracles.is_empty() {
            return field("oracles", "at least one oracle mode is required".into());
        }
        if let Some(p) = self.oracle.lenient_percentile {
            if let Err(e) = (OracleMode::Lenient { percentile: p }).validate() {
                return field("oracle.lenient_percentile", e.to_string());
            }
        }
        if !(0.0..1.0).contains(&self.rl.gamma) {
            return field("rl.gamma", format!("{} is not in [0, 1)", self.rl.gamma));
        }
        if !(self.rl.tolerance > 0.0) {
            return field("rl.tolerance", "must be positive".into());
        }
        if self.rl.max_sweeps == 0 {
            return field("rl.max_sweeps", "must be positive".into());
        }
        if let Err(e) = self.rl.q_learning_params().validate() {
            return field("rl.q_learning", e.to_string());
        }
        let m = &self.model;
        if m.n_trials == 0 {
            return field("model.n_trials", "must be at least 1".into());
        }
        if m.folds < 2 {
            return field("model.folds", "must be at least 2".into());
        }
        if !(0.0..1.0).contains(&m.calibration_fraction) {
            return field("model.calibration_fraction", "must lie in [0, 1)".into());
        }
        for (name, list) in [("model.n_trees", &m.n_trees), ("model.min_samples_leaf", &m.min_samples_leaf)] {
            if list.is_empty() || list.contains(&0) {
                return field(name, "must be a nonempty list of positive integers".into());
            }
        }
        if m.max_depth.is_empty() || m.max_depth.contains(&Depth::Limited(0)) {
            return field("model.max_depth", "must be a nonempty list of positive depths or \"none\"".into());
        }
        let n_features = self.n_features();
        if let Some(f) = m.max_features.iter().find(|&&f| f == 0 || f > n_features) {
            return field("model.max_features", format!("{f} is not in 1..={n_features}"));
        }
        if self.eval.importance_rollouts == 0 {
            return field("eval.importance_rollouts", "must be positive".into());
        }
        match self.domain {
            Domain::Catcher => {
                if let Err(e) = self.catcher.env_config().validate() {
                    return field("catcher", e.to_string());
                }
            }
            Domain::Flappybird => {
                if let Err(e) = self.flappybird.env_config().validate() {
                    return field("flappybird", e.to_string());
                }
            }
        }
        Ok(())
    }

    fn n_features(&self) -> usize {
        match self.domain {
            Domain::Catcher => 3,
            Domain::Flappybird => 5,
        }
    }

    pub fn protocol_list(&self) -> Vec<Protocol> {
        self.protocols.iter().filter_map(|p| p.parse().ok()).collect()
    }

    pub fn lenient_percentile(&self) -> f64 {
        self.oracle.lenient_percentile.unwrap_or_else(|| self.domain.default_lenient_percentile())
    }

    pub fn oracle_mode(&self, kind: OracleKind) -> OracleMode {
        match kind {
            OracleKind::Strict => OracleMode::Strict,
            OracleKind::Lenient => OracleMode::Lenient { percentile: self.lenient_percentile() },
        }
    }

    pub fn delta_pool(&self) -> DeltaPool {
        DeltaPool { include_zero: self.oracle.include_zero_deltas }
    }

    /// SHA-256 of the canonical JSON form. Fields that cannot change any
    /// result (output location, model saving, the other domain's section) are
    /// normalised first, and defaults are resolved.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.save_models = false;
        c.oracle.lenient_percentile = Some(self.lenient_percentile());
        match c.domain {
            Domain::Catcher => c.flappybird = FlappySection::default(),
            Domain::Flappybird => c.catcher = CatcherSection::default(),
        }
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
