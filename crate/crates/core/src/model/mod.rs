//! Blind-spot classifier: oversampling, randomized search with stratified
//! cross-validation, a calibration holdout and a prior-matching threshold.

mod forest;

pub use forest::{Forest, ForestParams, Node, Tree};

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::aggregate::{AggregatedDataset, Aggregator};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::oracle::{Label, BLIND_SPOT, SAFE};
use crate::seed;

/// Classifier features of a sim state: its raw fields.
pub fn sim_features<E: Environment>(env: &E, s: &E::Sim) -> Vec<f64> {
    env.sim_values(s).into_iter().map(|v| v as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub features: Vec<f64>,
    pub label: Label,
    pub weight: f64,
    /// Position in the original (pre-split, pre-oversampling) set.
    pub origin: usize,
    /// Probability of being a blind spot as estimated by aggregation; equals
    /// the label unless the aggregator produced posteriors.
    pub soft_label: f64,
}

impl Instance {
    pub fn new(features: Vec<f64>, label: Label, weight: f64, origin: usize) -> Self {
        Instance { features, label, weight, origin, soft_label: f64::from(label) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    n_features: usize,
    instances: Vec<Instance>,
}

impl TrainingSet {
    pub fn new(n_features: usize, instances: Vec<Instance>) -> Result<Self> {
        for (i, x) in instances.iter().enumerate() {
            if x.features.len() != n_features {
                return Err(Error::SchemaMismatch { expected: n_features, found: x.features.len() });
            }
            if x.features.iter().any(|v| !v.is_finite()) || !(x.weight.is_finite() && x.weight > 0.0) {
                return Err(Error::NonFinite(alloc::format!("instance {i}: features or weight")));
            }
            if !(0.0..=1.0).contains(&x.soft_label) {
                return Err(Error::Config(alloc::format!("instance {i}: soft label {}", x.soft_label)));
            }
            if x.label > BLIND_SPOT {
                return Err(Error::Config(alloc::format!("instance {i}: label {}", x.label)));
            }
        }
        Ok(TrainingSet { n_features, instances })
    }

    /// One instance per aggregated state, weighted by its confidence.
    /// Dawid-Skene posteriors are kept as soft labels.
    pub fn from_aggregated<E: Environment>(env: &E, d: &AggregatedDataset<E::Sim>) -> Result<Self> {
        let soft = d.method == Aggregator::DawidSkene;
        let instances = d
            .entries
            .iter()
            .enumerate()
            .map(|(i, (s, a))| {
                let mut x = Instance::new(sim_features(env, s), a.label, a.confidence, i);
                if soft {
                    x.soft_label = a.posterior;
                }
                x
            })
            .collect();
        TrainingSet::new(env.sim_fields().len(), instances)
    }

    /// One unit-weight instance per label event.
    pub fn from_all_labels<E: Environment>(env: &E, labels: &[(E::Sim, Label)]) -> Result<Self> {
        let instances = labels
            .iter()
            .enumerate()
            .map(|(i, (s, l))| Instance::new(sim_features(env, s), *l, 1.0, i))
            .collect();
        TrainingSet::new(env.sim_fields().len(), instances)
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// (safe, blind spot) instance counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.instances.iter().filter(|x| x.label == BLIND_SPOT).count();
        (self.len() - ones, ones)
    }

    /// Estimated fraction of blind spots: the mean soft label.
    pub fn prior(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.instances.iter().map(|x| x.soft_label).sum::<f64>() / self.len() as f64
        }
    }

    fn subset(&self, idx: &[usize]) -> TrainingSet {
        TrainingSet { n_features: self.n_features, instances: idx.iter().map(|&i| self.instances[i].clone()).collect() }
    }

    fn class_indices(&self) -> [Vec<usize>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        for (i, x) in self.instances.iter().enumerate() {
            out[x.label as usize].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Oversampled {
    pub set: TrainingSet,
    /// Only one class present; nothing was duplicated.
    pub degenerate: bool,
}

/// Duplicate minority-class instances (with replacement) until both classes
/// have the same count. Duplicates keep their weight and origin.
pub fn oversample(ts: &TrainingSet, seed: u64) -> Result<Oversampled> {
    if ts.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let [zeros, ones] = ts.class_indices();
    if zeros.is_empty() || ones.is_empty() {
        return Ok(Oversampled { set: ts.clone(), degenerate: true });
    }
    let deficit = zeros.len().abs_diff(ones.len());
    let minority = if ones.len() < zeros.len() { ones } else { zeros };
    let mut rng = seed::rng(seed);
    let mut set = ts.clone();
    for _ in 0..deficit {
        let i = minority[rng.gen_range(0..minority.len())];
        set.instances.push(ts.instances[i].clone());
    }
    Ok(Oversampled { set, degenerate: false })
}

/// Per-class shuffle, then round-robin fold assignment.
pub fn stratified_folds(ts: &TrainingSet, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seed::rng(seed);
    let mut folds = alloc::vec![Vec::new(); k];
    let mut next = 0;
    for mut class in ts.class_indices() {
        class.shuffle(&mut rng);
        for i in class {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    folds
}

/// Stratified (train, calibration) split; `fraction` of each class goes to calibration.
pub fn calibration_split(ts: &TrainingSet, fraction: f64, seed: u64) -> Result<(TrainingSet, TrainingSet)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(alloc::format!("calibration fraction {fraction} not in [0, 1)")));
    }
    let mut rng = seed::rng(seed);
    let (mut train, mut calib) = (Vec::new(), Vec::new());
    for mut class in ts.class_indices() {
        class.shuffle(&mut rng);
        let n_cal = libm::round(fraction * class.len() as f64) as usize;
        calib.extend_from_slice(&class[..n_cal]);
        train.extend_from_slice(&class[n_cal..]);
    }
    train.sort_unstable();
    calib.sort_unstable();
    Ok((ts.subset(&train), ts.subset(&calib)))
}

/// F1 on the blind-spot class; zero division gives 0.
pub fn f1_score(pred: &[bool], truth: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_leaf: Vec<usize>,
    /// Empty means every size from 1 to the feature count.
    pub max_features: Vec<usize>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_trees: alloc::vec![25, 50, 100],
            max_depth: alloc::vec![Some(4), Some(8), Some(16), None],
            min_samples_leaf: alloc::vec![1, 2, 5],
            max_features: Vec::new(),
        }
    }
}

impl SearchSpace {
    fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees.is_empty() || self.max_depth.is_empty() || self.min_samples_leaf.is_empty() {
            return Err(Error::Config("search space dimensions must be nonempty".into()));
        }
        for p in self.grid_corners(n_features) {
            p.validate(n_features)?;
        }
        Ok(())
    }

    fn grid_corners(&self, n_features: usize) -> impl Iterator<Item = ForestParams> + '_ {
        let feats = self.feature_sizes(n_features);
        self.n_trees.iter().flat_map(move |&n_trees| {
            let feats = feats.clone();
            self.max_depth.iter().flat_map(move |&max_depth| {
                let feats = feats.clone();
                self.min_samples_leaf.iter().flat_map(move |&min_samples_leaf| {
                    feats.clone().into_iter().map(move |max_features| ForestParams {
                        n_trees,
                        max_depth,
                        min_samples_leaf,
                        max_features,
                        bootstrap: true,
                    })
                })
            })
        })
    }

    fn feature_sizes(&self, n_features: usize) -> Vec<usize> {
        if self.max_features.is_empty() {
            (1..=n_features).collect()
        } else {
            self.max_features.clone()
        }
    }

    /// Each dimension drawn uniformly and independently.
    pub fn sample(&self, n_features: usize, rng: &mut seed::Rng) -> ForestParams {
        let feats = self.feature_sizes(n_features);
        ForestParams {
            n_trees: *self.n_trees.choose(rng).unwrap_or(&1),
            max_depth: *self.max_depth.choose(rng).unwrap_or(&None),
            min_samples_leaf: *self.min_samples_leaf.choose(rng).unwrap_or(&1),
            max_features: *feats.choose(rng).unwrap_or(&1),
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub space: SearchSpace,
    pub n_trials: usize,
    pub folds: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { space: SearchSpace::default(), n_trials: 20, folds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: ForestParams,
    pub best_score: f64,
    /// Every sampled configuration with its mean validation F1.
    pub trials: Vec<(ForestParams, f64)>,
}

/// Randomized search scored by mean F1 over stratified folds. Training folds
/// are oversampled, validation folds never are. Ties keep the earliest trial.
pub fn hyperparameter_search(ts: &TrainingSet, cfg: &SearchConfig, seed: u64) -> Result<SearchOutcome> {
    if cfg.n_trials == 0 {
        return Err(Error::Config("n_trials must be at least 1".into()));
    }
    if cfg.folds < 2 {
        return Err(Error::Config("cross-validation needs at least 2 folds".into()));
    }
    if ts.is_empty() {
        return Err(Error::Empty("training set"));
    }
    cfg.space.validate(ts.n_features())?;
    let mut rng = seed::rng(seed::derive(seed, seed::tag("configs")));
    let configs: Vec<ForestParams> = (0..cfg.n_trials).map(|_| cfg.space.sample(ts.n_features(), &mut rng)).collect();
    let k = cfg.folds.min(ts.len());
    let folds = stratified_folds(ts, k, seed::derive(seed, seed::tag("folds")));
    let mut trials = Vec::with_capacity(configs.len());
    let mut best: Option<(ForestParams, f64)> = None;
    for (t, &params) in configs.iter().enumerate() {
        let score = if k < 2 {
            0.0
        } else {
            let mut total = 0.0;
            for (f, valid) in folds.iter().enumerate() {
                let train_idx: Vec<usize> = (0..ts.len()).filter(|i| valid.binary_search(i).is_err()).collect();
                let cell = seed::derive_path(seed, &[t as u64, f as u64]);
                let train = oversample(&ts.subset(&train_idx), seed::derive(cell, 0))?.set;
                let forest = Forest::fit(&train, params, seed::derive(cell, 1))?;
                let mut pred = Vec::with_capacity(valid.len());
                let mut truth = Vec::with_capacity(valid.len());
                for &i in valid {
                    let x = &ts.instances[i];
                    pred.push(forest.predict_proba(&x.features)? >= 0.5);
                    truth.push(x.label == BLIND_SPOT);
                }
                total += f1_score(&pred, &truth);
            }
            total / k as f64
        };
        trials.push((params, score));
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((params, score));
        }
    }
    let (best, best_score) = best.expect("n_trials >= 1");
    Ok(SearchOutcome { best, best_score, trials })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub predicted_positive: usize,
    pub size: usize,
    pub target_prior: f64,
}

impl Calibration {
    pub fn predicted_fraction(&self) -> f64 {
        self.predicted_positive as f64 / self.size as f64
    }

    /// Distance from the target, counted in calibration instances.
    pub fn instance_gap(&self) -> f64 {
        libm::fabs(self.predicted_positive as f64 - self.target_prior * self.size as f64)
    }
}

/// Pick `t` among the distinct probabilities plus 0 and 1 so that the fraction
/// with `p >= t` is closest to `target_prior`; ties go to the larger `t`.
pub fn calibrate_threshold(probs: &[f64], target_prior: f64) -> Result<Calibration> {
    if probs.is_empty() {
        return Err(Error::Empty("calibration set"));
    }
    if !(0.0..=1.0).contains(&target_prior) {
        return Err(Error::Config(alloc::format!("target prior {target_prior} not in [0, 1]")));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::NonFinite("calibration probabilities".into()));
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut candidates = sorted.clone();
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let n = sorted.len();
    let mut best: Option<(f64, f64, usize)> = None;
    // descending so that ties keep the larger threshold
    for &t in candidates.iter().rev() {
        let positive = n - sorted.partition_point(|&p| p < t);
        let err = libm::fabs(positive as f64 / n as f64 - target_prior);
        if best.is_none_or(|(e, _, _)| err < e - 1e-12) {
            best = Some((err, t, positive));
        }
    }
    let (_, threshold, predicted_positive) = best.expect("candidates nonempty");
    Ok(Calibration { threshold, predicted_positive, size: n, target_prior })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub search: SearchConfig,
    pub calibration_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { search: SearchConfig::default(), calibration_fraction: 0.3 }
    }
}

/// `M = {C, t}`: a forest and its decision threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindSpotModel {
    pub forest: Forest,
    pub threshold: f64,
    pub training_prior: f64,
    /// Trained on single-class data; predicts a constant.
    pub degenerate: bool,
    pub feature_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub blind_spot: bool,
}

impl BlindSpotModel {
    pub fn predict(&self, features: &[f64]) -> Result<Prediction> {
        let probability = self.forest.predict_proba(features)?;
        Ok(Prediction { probability, blind_spot: probability >= self.threshold })
    }

    pub fn predict_state<E: Environment>(&self, env: &E, s: &E::Sim) -> Result<Prediction> {
        let names = env.sim_fields();
        if names.len() != self.feature_names.len() || names.iter().zip(&self.feature_names).any(|(a, b)| *a != b.as_str()) {
            return Err(Error::SchemaMismatch { expected: self.feature_names.len(), found: names.len() });
        }
        self.predict(&sim_features(env, s))
    }

    pub fn with_threshold(&self, threshold: f64) -> Self {
        BlindSpotModel { threshold, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    pub search: Option<SearchOutcome>,
    pub calibration: Option<Calibration>,
    pub train_size: usize,
    pub oversampled_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: BlindSpotModel,
    pub report: TrainingReport,
}

/// Search on a stratified 70% split, fit the final forest on its oversampled
/// copy and calibrate the threshold on the remaining 30%.
pub fn train_model(ts: &TrainingSet, feature_names: &[&str], cfg: &TrainConfig, seed: u64) -> Result<TrainedModel> {
    if ts.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if feature_names.len() != ts.n_features() {
        return Err(Error::SchemaMismatch { expected: ts.n_features(), found: feature_names.len() });
    }
    let feature_names: Vec<String> = feature_names.iter().map(|s| s.to_string()).collect();
    let (zeros, ones) = ts.class_counts();
    if zeros == 0 || ones == 0 {
        let label = if ones > 0 { BLIND_SPOT } else { SAFE };
        let model = BlindSpotModel {
            forest: Forest::constant(f64::from(label), ts.n_features())?,
            threshold: 0.5,
            training_prior: ts.prior(),
            degenerate: true,
            feature_names,
        };
        let report = TrainingReport { search: None, calibration: None, train_size: ts.len(), oversampled_size: ts.len() };
        return Ok(TrainedModel { model, report });
    }
    let (train, calib) = calibration_split(ts, cfg.calibration_fraction, seed::derive(seed, seed::tag("split")))?;
    let search = hyperparameter_search(&train, &cfg.search, seed::derive(seed, seed::tag("search")))?;
    let balanced = oversample(&train, seed::derive(seed, seed::tag("oversample")))?.set;
    let forest = Forest::fit(&balanced, search.best, seed::derive(seed, seed::tag("forest")))?;
    let target_prior = train.prior();
    // tiny inputs can leave the holdout empty; fall back to the training part
    let holdout = if calib.is_empty() { &train } else { &calib };
    let probs = holdout.instances().iter().map(|x| forest.predict_proba(&x.features)).collect::<Result<Vec<_>>>()?;
    let calibration = calibrate_threshold(&probs, target_prior)?;
    let model = BlindSpotModel { forest, threshold: calibration.threshold, training_prior: target_prior, degenerate: false, feature_names };
    let report = TrainingReport {
        search: Some(search),
        calibration: Some(calibration),
        train_size: train.len(),
        oversampled_size: balanced.len(),
    };
    Ok(TrainedModel { model, report })
}

#[cfg(test)]
mod tests;
