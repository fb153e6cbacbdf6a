//! Turning per-state noisy label lists into training targets.
//!
//! Dawid-Skene EM uses one confusion matrix shared by every state (the oracle
//! is a single annotator). The constrained variant pins the safe row to
//! `[1, 0]` for protocols that cannot produce false blind-spot labels.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::oracle::{Label, BLIND_SPOT, SAFE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Aggregator {
    DawidSkene,
    MajorityVote,
    AllLabels,
}

impl Aggregator {
    pub const ALL: [Aggregator; 3] = [Aggregator::DawidSkene, Aggregator::MajorityVote, Aggregator::AllLabels];

    pub fn code(self) -> &'static str {
        match self {
            Aggregator::DawidSkene => "DS",
            Aggregator::MajorityVote => "MV",
            Aggregator::AllLabels => "AL",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aggregator::ALL
            .into_iter()
            .find(|a| a.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(alloc::format!("unknown aggregator {s:?} (expected DS, MV or AL)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsVariant {
    Original,
    /// Safe row fixed at `[1, 0]`.
    Constrained,
}

/// Oracle noise: `confusion[true][observed]`, rows sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub prior: f64,
    pub confusion: [[f64; 2]; 2],
}

impl NoiseModel {
    fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.prior)
            && self.confusion.iter().flatten().all(|p| (0.0..=1.0).contains(p))
            && self.confusion.iter().all(|r| (r[0] + r[1] - 1.0).abs() < 1e-9);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("invalid noise model {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsConfig {
    pub tol: f64,
    pub max_iters: usize,
    /// Added to every free confusion cell and to both prior counts.
    pub pseudocount: f64,
    pub prior_min: f64,
    pub prior_max: f64,
}

impl Default for DsConfig {
    fn default() -> Self {
        DsConfig { tol: 1e-6, max_iters: 500, pseudocount: 0.01, prior_min: 0.01, prior_max: 0.99 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatedLabel {
    pub label: Label,
    pub confidence: f64,
    /// Estimated probability of being a blind spot.
    pub posterior: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsDiagnostics {
    pub variant: DsVariant,
    pub noise: NoiseModel,
    pub iterations: usize,
    pub converged: bool,
    /// Smoothed log-likelihood after each M-step. Non-decreasing.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedDataset<S: Ord> {
    pub method: Aggregator,
    pub entries: BTreeMap<S, AggregatedLabel>,
    pub diagnostics: Option<DsDiagnostics>,
}

impl<S: Ord> AggregatedDataset<S> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn blind_spot_count(&self) -> usize {
        self.entries.values().filter(|e| e.label == BLIND_SPOT).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Counts {
    zeros: f64,
    ones: f64,
}

fn counts<S: Ord>(labels: &BTreeMap<S, Vec<Label>>) -> Result<Vec<Counts>> {
    if labels.is_empty() {
        return Err(Error::Empty("label set"));
    }
    labels
        .values()
        .map(|ls| {
            if ls.is_empty() {
                return Err(Error::Empty("label list for a state"));
            }
            let ones = ls.iter().filter(|&&l| l == BLIND_SPOT).count();
            if ls.iter().any(|&l| l > BLIND_SPOT) {
                return Err(Error::Config("labels must be 0 or 1".into()));
            }
            Ok(Counts { zeros: (ls.len() - ones) as f64, ones: ones as f64 })
        })
        .collect()
}

// n * ln(p) with 0 * ln(0) = 0
fn xlogy(n: f64, p: f64) -> f64 {
    if n == 0.0 {
        0.0
    } else {
        n * libm::log(p)
    }
}

fn log_joint(noise: &NoiseModel, c: Counts) -> (f64, f64) {
    let e = &noise.confusion;
    let blind = xlogy(1.0, noise.prior) + xlogy(c.ones, e[1][1]) + xlogy(c.zeros, e[1][0]);
    let safe = xlogy(1.0, 1.0 - noise.prior) + xlogy(c.ones, e[0][1]) + xlogy(c.zeros, e[0][0]);
    (safe, blind)
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(libm::exp(a - m) + libm::exp(b - m))
}

fn posterior_from_counts(noise: &NoiseModel, c: Counts) -> f64 {
    let (safe, blind) = log_joint(noise, c);
    if blind == f64::NEG_INFINITY {
        return 0.0;
    }
    libm::exp(blind - log_add(safe, blind))
}

/// Probability that a state with the given label counts is a blind spot.
pub fn posterior(noise: &NoiseModel, zeros: usize, ones: usize) -> Result<f64> {
    noise.validate()?;
    Ok(posterior_from_counts(noise, Counts { zeros: zeros as f64, ones: ones as f64 }))
}

/// Marginal log-likelihood of the label lists under `noise`.
pub fn log_likelihood<S: Ord>(noise: &NoiseModel, labels: &BTreeMap<S, Vec<Label>>) -> Result<f64> {
    noise.validate()?;
    Ok(counts(labels)?.into_iter().map(|c| {
        let (a, b) = log_joint(noise, c);
        log_add(a, b)
    }).sum())
}

fn penalty(noise: &NoiseModel, variant: DsVariant, alpha: f64) -> f64 {
    let e = &noise.confusion;
    let mut p = alpha * (libm::log(noise.prior) + libm::log(1.0 - noise.prior));
    p += alpha * (libm::log(e[1][0]) + libm::log(e[1][1]));
    if variant == DsVariant::Original {
        p += alpha * (libm::log(e[0][0]) + libm::log(e[0][1]));
    }
    p
}

fn m_step(c: &[Counts], t: &[f64], variant: DsVariant, cfg: &DsConfig) -> NoiseModel {
    let a = cfg.pseudocount;
    let n = c.len() as f64;
    let s1: f64 = t.iter().sum();
    let prior = ((s1 + a) / (n + 2.0 * a)).clamp(cfg.prior_min, cfg.prior_max);
    let (mut ones1, mut tot1, mut ones0, mut tot0) = (0.0, 0.0, 0.0, 0.0);
    for (ci, &ti) in c.iter().zip(t) {
        let tot = ci.zeros + ci.ones;
        ones1 += ti * ci.ones;
        tot1 += ti * tot;
        ones0 += (1.0 - ti) * ci.ones;
        tot0 += (1.0 - ti) * tot;
    }
    let e11 = (ones1 + a) / (tot1 + 2.0 * a);
    let e01 = match variant {
        DsVariant::Original => (ones0 + a) / (tot0 + 2.0 * a),
        DsVariant::Constrained => 0.0,
    };
    NoiseModel { prior, confusion: [[1.0 - e01, e01], [1.0 - e11, e11]] }
}

/// Dawid-Skene EM over per-state label lists.
///
/// Initialised from per-state label means. Stops when no posterior moves by
/// more than `tol`, or after `max_iters` rounds. The returned posteriors are
/// the E-step at the returned noise model.
pub fn dawid_skene<S: Ord + Copy>(
    labels: &BTreeMap<S, Vec<Label>>,
    variant: DsVariant,
    cfg: &DsConfig,
) -> Result<AggregatedDataset<S>> {
    if !(cfg.tol > 0.0) || cfg.max_iters == 0 || !(cfg.pseudocount > 0.0) {
        return Err(Error::Config(alloc::format!("invalid Dawid-Skene settings {cfg:?}")));
    }
    if !(0.0 < cfg.prior_min && cfg.prior_min <= cfg.prior_max && cfg.prior_max < 1.0) {
        return Err(Error::Config("prior clamp must lie inside (0, 1)".into()));
    }
    let c = counts(labels)?;
    let mut t: Vec<f64> = c.iter().map(|ci| ci.ones / (ci.ones + ci.zeros)).collect();
    let mut objective = Vec::new();
    let mut converged = false;
    let mut noise = m_step(&c, &t, variant, cfg);
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        noise = m_step(&c, &t, variant, cfg);
        let mut ll = 0.0;
        let mut shift: f64 = 0.0;
        for (ci, ti) in c.iter().zip(t.iter_mut()) {
            let (safe, blind) = log_joint(&noise, *ci);
            let z = log_add(safe, blind);
            ll += z;
            let next = if blind == f64::NEG_INFINITY { 0.0 } else { libm::exp(blind - z) };
            shift = shift.max((next - *ti).abs());
            *ti = next;
        }
        let obj = ll + penalty(&noise, variant, cfg.pseudocount);
        if !obj.is_finite() {
            return Err(Error::NonFinite("Dawid-Skene objective".into()));
        }
        if let Some(&prev) = objective.last() {
            debug_assert!(obj >= prev - 1e-9 * libm::fabs(prev).max(1.0), "EM objective decreased: {prev} -> {obj}");
        }
        objective.push(obj);
        if shift < cfg.tol {
            converged = true;
            break;
        }
    }
    let entries = labels
        .keys()
        .zip(&t)
        .map(|(s, &p)| {
            let label = if p >= 0.5 { BLIND_SPOT } else { SAFE };
            (*s, AggregatedLabel { label, confidence: p.max(1.0 - p), posterior: p })
        })
        .collect();
    Ok(AggregatedDataset {
        method: Aggregator::DawidSkene,
        entries,
        diagnostics: Some(DsDiagnostics { variant, noise, iterations, converged, objective }),
    })
}

/// Modal label per state; ties go to blind spot. Confidence is the modal fraction.
pub fn majority_vote<S: Ord + Copy>(labels: &BTreeMap<S, Vec<Label>>) -> Result<AggregatedDataset<S>> {
    let c = counts(labels)?;
    let entries = labels
        .keys()
        .zip(c)
        .map(|(s, ci)| {
            let n = ci.ones + ci.zeros;
            let label = if ci.ones >= ci.zeros { BLIND_SPOT } else { SAFE };
            (*s, AggregatedLabel { label, confidence: ci.ones.max(ci.zeros) / n, posterior: ci.ones / n })
        })
        .collect();
    Ok(AggregatedDataset { method: Aggregator::MajorityVote, entries, diagnostics: None })
}

/// Every label event becomes its own unit-weight instance.
pub fn all_labels<S: Ord + Copy>(labels: &BTreeMap<S, Vec<Label>>) -> Result<Vec<(S, Label)>> {
    counts(labels)?;
    Ok(labels.iter().flat_map(|(s, ls)| ls.iter().map(move |&l| (*s, l))).collect())
}
