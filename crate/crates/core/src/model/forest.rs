//! Random forest on weighted Gini impurity.
//!
//! Features are small discrete integers, so every split search works on
//! per-feature histograms over the sorted distinct training values. Candidate
//! thresholds are midpoints between adjacent occupied values.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Instance, TrainingSet};
use crate::error::{Error, Result};
use crate::oracle::BLIND_SPOT;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until leaves are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features examined per node.
    pub max_features: usize,
    pub bootstrap: bool,
}

impl ForestParams {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(alloc::format!("forest {m}: {self:?}")));
        if self.n_trees == 0 {
            return bad("needs at least one tree");
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be at least 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        if self.max_features == 0 || self.max_features > n_features {
            return bad("max_features must be in 1..=n_features");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf { prob: f64 },
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("tree nodes"));
        }
        for (i, n) in nodes.iter().enumerate() {
            let ok = match *n {
                Node::Leaf { prob } => (0.0..=1.0).contains(&prob),
                Node::Split { feature, threshold, left, right } => {
                    feature < n_features && threshold.is_finite() && left > i && right > i && left < nodes.len() && right < nodes.len()
                }
            };
            if !ok {
                return Err(Error::Config(alloc::format!("malformed tree node {i}: {n:?}")));
            }
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { prob } => return prob,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    params: ForestParams,
    n_features: usize,
    seed: u64,
    trees: Vec<Tree>,
}

impl Forest {
    /// Tree `i` is grown from `seed::derive(seed, i)`.
    pub fn fit(ts: &TrainingSet, params: ForestParams, seed: u64) -> Result<Self> {
        params.validate(ts.n_features())?;
        if ts.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let binned = Binned::new(ts);
        let trees = (0..params.n_trees)
            .map(|i| grow(ts.instances(), &binned, &params, seed::derive(seed, i as u64)))
            .collect();
        Ok(Forest { params, n_features: ts.n_features(), seed, trees })
    }

    /// One leaf predicting `prob` everywhere.
    pub fn constant(prob: f64, n_features: usize) -> Result<Self> {
        let params = ForestParams { n_trees: 1, max_depth: Some(1), min_samples_leaf: 1, max_features: n_features.max(1), bootstrap: false };
        let tree = Tree::from_nodes(vec![Node::Leaf { prob }], n_features)?;
        Ok(Forest { params, n_features, seed: 0, trees: vec![tree] })
    }

    pub fn from_parts(params: ForestParams, n_features: usize, seed: u64, trees: Vec<Tree>) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::Empty("forest trees"));
        }
        Ok(Forest { params, n_features, seed, trees })
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::SchemaMismatch { expected: self.n_features, found: x.len() });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok((sum / self.trees.len() as f64).clamp(0.0, 1.0))
    }
}

struct Binned {
    /// Sorted distinct values per feature.
    values: Vec<Vec<f64>>,
    /// `bins[f][i]` = position of instance i's value in `values[f]`.
    bins: Vec<Vec<u32>>,
}

impl Binned {
    fn new(ts: &TrainingSet) -> Self {
        let n = ts.n_features();
        let mut values = Vec::with_capacity(n);
        let mut bins = Vec::with_capacity(n);
        for f in 0..n {
            let mut v: Vec<f64> = ts.instances().iter().map(|x| x.features[f]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            let b = ts
                .instances()
                .iter()
                .map(|x| v.binary_search_by(|p| p.total_cmp(&x.features[f])).unwrap_or(0) as u32)
                .collect();
            values.push(v);
            bins.push(b);
        }
        Binned { values, bins }
    }
}

#[derive(Clone, Copy)]
struct Sample {
    idx: u32,
    /// Bootstrap multiplicity.
    count: u32,
}

#[derive(Clone, Copy, Default)]
struct Stats {
    w0: f64,
    w1: f64,
    count: usize,
}

impl Stats {
    fn add(&mut self, inst: &Instance, count: u32) {
        let w = inst.weight * count as f64;
        if inst.label == BLIND_SPOT {
            self.w1 += w;
        } else {
            self.w0 += w;
        }
        self.count += count as usize;
    }

    fn weight(&self) -> f64 {
        self.w0 + self.w1
    }

    // weighted Gini scaled by total weight
    fn impurity(&self) -> f64 {
        let w = self.weight();
        if w <= 0.0 {
            0.0
        } else {
            w - (self.w0 * self.w0 + self.w1 * self.w1) / w
        }
    }

    fn prob(&self) -> f64 {
        let w = self.weight();
        if w <= 0.0 {
            0.0
        } else {
            self.w1 / w
        }
    }
}

struct SplitChoice {
    feature: usize,
    bin: u32,
    threshold: f64,
}

fn grow(inst: &[Instance], binned: &Binned, params: &ForestParams, seed: u64) -> Tree {
    let mut rng = seed::rng(seed);
    let n = inst.len();
    let mut samples: Vec<Sample> = if params.bootstrap {
        let mut counts = vec![0u32; n];
        for _ in 0..n {
            counts[rng.gen_range(0..n)] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c > 0)
            .map(|(i, c)| Sample { idx: i as u32, count: c })
            .collect()
    } else {
        (0..n).map(|i| Sample { idx: i as u32, count: 1 }).collect()
    };
    let n_features = binned.values.len();
    let mut order: Vec<usize> = (0..n_features).collect();
    let max_bins = binned.values.iter().map(Vec::len).max().unwrap_or(0);
    let mut hist = vec![Stats::default(); max_bins];

    let mut nodes = vec![Node::Leaf { prob: 0.0 }];
    // (node id, sample range, depth)
    let mut stack = vec![(0usize, 0usize, samples.len(), 0usize)];
    while let Some((id, lo, hi, depth)) = stack.pop() {
        let mut total = Stats::default();
        for s in &samples[lo..hi] {
            total.add(&inst[s.idx as usize], s.count);
        }
        let can_split = params.max_depth.is_none_or(|d| depth < d)
            && total.count >= 2 * params.min_samples_leaf
            && total.w0 > 0.0
            && total.w1 > 0.0;
        let choice = if can_split {
            best_split(inst, binned, params, &samples[lo..hi], &total, &mut order, &mut hist, &mut rng)
        } else {
            None
        };
        let Some(choice) = choice else {
            nodes[id] = Node::Leaf { prob: total.prob() };
            continue;
        };
        let bins = &binned.bins[choice.feature];
        let mut mid = lo;
        for i in lo..hi {
            if bins[samples[i].idx as usize] <= choice.bin {
                samples.swap(i, mid);
                mid += 1;
            }
        }
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf { prob: 0.0 });
        nodes.push(Node::Leaf { prob: 0.0 });
        nodes[id] = Node::Split { feature: choice.feature, threshold: choice.threshold, left, right };
        // right first so the left subtree is expanded next
        stack.push((right, mid, hi, depth + 1));
        stack.push((left, lo, mid, depth + 1));
    }
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn best_split(
    inst: &[Instance],
    binned: &Binned,
    params: &ForestParams,
    samples: &[Sample],
    total: &Stats,
    order: &mut [usize],
    hist: &mut [Stats],
    rng: &mut seed::Rng,
) -> Option<SplitChoice> {
    let parent = total.impurity();
    let mut best: Option<(f64, SplitChoice)> = None;
    let mut examined = 0;
    // Constant features do not count toward max_features; the search
    // continues until enough informative features were looked at.
    for k in 0..order.len() {
        if examined == params.max_features {
            break;
        }
        let j = rng.gen_range(k..order.len());
        order.swap(k, j);
        let f = order[k];
        let nb = binned.values[f].len();
        let h = &mut hist[..nb];
        h.fill(Stats::default());
        let bins = &binned.bins[f];
        for s in samples {
            h[bins[s.idx as usize] as usize].add(&inst[s.idx as usize], s.count);
        }
        if h.iter().filter(|b| b.count > 0).count() < 2 {
            continue;
        }
        examined += 1;
        let mut left = Stats::default();
        let mut prev: Option<usize> = None;
        for b in 0..nb {
            if h[b].count == 0 {
                continue;
            }
            if let Some(p) = prev {
                let right = Stats { w0: total.w0 - left.w0, w1: total.w1 - left.w1, count: total.count - left.count };
                if left.count >= params.min_samples_leaf && right.count >= params.min_samples_leaf {
                    let gain = parent - left.impurity() - right.impurity();
                    let threshold = 0.5 * (binned.values[f][p] + binned.values[f][b]);
                    if gain > 1e-12 * total.weight() && best.as_ref().is_none_or(|(g, _)| gain > *g + 1e-12) {
                        best = Some((gain, SplitChoice { feature: f, bin: p as u32, threshold }));
                    }
                }
            }
            left.w0 += h[b].w0;
            left.w1 += h[b].w1;
            left.count += h[b].count;
            prev = Some(b);
        }
    }
    best.map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Instance;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};

    fn set(rows: &[(&[f64], u8, f64)]) -> TrainingSet {
        let n = rows[0].0.len();
        TrainingSet::new(
            n,
            rows.iter()
                .enumerate()
                .map(|(i, (x, l, w))| Instance::new(x.to_vec(), *l, *w, i))
                .collect(),
        )
        .unwrap()
    }

    fn deep(n_features: usize) -> ForestParams {
        ForestParams { n_trees: 1, max_depth: None, min_samples_leaf: 1, max_features: n_features, bootstrap: false }
    }

    #[test]
    fn separable_data_is_fit_exactly() {
        let mut rows = Vec::new();
        for x in 0..10 {
            for y in 0..10 {
                rows.push((alloc::vec![x as f64, y as f64], u8::from(x + y > 9), 1.0));
            }
        }
        let ts = TrainingSet::new(
            2,
            rows.iter().enumerate().map(|(i, (f, l, w))| Instance::new(f.clone(), *l, *w, i)).collect(),
        )
        .unwrap();
        let forest = Forest::fit(&ts, ForestParams { n_trees: 10, bootstrap: true, ..deep(2) }, 3).unwrap();
        let single = Forest::fit(&ts, deep(2), 3).unwrap();
        let mut correct = 0;
        for inst in ts.instances() {
            assert_eq!(single.predict_proba(&inst.features).unwrap(), f64::from(inst.label));
            if (forest.predict_proba(&inst.features).unwrap() >= 0.5) == (inst.label == 1) {
                correct += 1;
            }
        }
        assert!(correct >= 98, "{correct}");
    }

    #[test]
    fn pure_leaf_predicts_one() {
        let ts = set(&[(&[0.0], 0, 1.0), (&[1.0], 0, 1.0), (&[5.0], 1, 0.6), (&[6.0], 1, 0.9)]);
        let f = Forest::fit(&ts, deep(1), 0).unwrap();
        assert_eq!(f.predict_proba(&[6.0]).unwrap(), 1.0);
        assert_eq!(f.predict_proba(&[0.0]).unwrap(), 0.0);
        assert_eq!(f.trees()[0].depth(), 1);
    }

    #[test]
    fn stump_matches_exhaustive_threshold_scan() {
        let mut rng = seed::rng(21);
        for _ in 0..50 {
            let n = rng.gen_range(5..40);
            let rows: Vec<(f64, u8, f64)> = (0..n)
                .map(|_| (rng.gen_range(0..12) as f64, rng.gen_range(0..2u8), rng.gen_range(0.5..1.0)))
                .collect();
            if rows.iter().all(|r| r.1 == rows[0].1) {
                continue;
            }
            let ts = TrainingSet::new(
                1,
                rows.iter().enumerate().map(|(i, r)| Instance::new(alloc::vec![r.0], r.1, r.2, i)).collect(),
            )
            .unwrap();
            // independent scan over every midpoint between consecutive values
            let gini = |rows: &mut dyn Iterator<Item = &(f64, u8, f64)>| {
                let (mut w0, mut w1) = (0.0, 0.0);
                for r in rows {
                    if r.1 == 1 { w1 += r.2 } else { w0 += r.2 }
                }
                if w0 + w1 == 0.0 { 0.0 } else { (w0 + w1) * (1.0 - (w0 / (w0 + w1)).powi(2) - (w1 / (w0 + w1)).powi(2)) }
            };
            let mut xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            xs.sort_by(f64::total_cmp);
            xs.dedup();
            let mut best = (f64::INFINITY, f64::NAN);
            for w in xs.windows(2) {
                let t = 0.5 * (w[0] + w[1]);
                let imp = gini(&mut rows.iter().filter(|r| r.0 <= t)) + gini(&mut rows.iter().filter(|r| r.0 > t));
                if imp < best.0 - 1e-12 {
                    best = (imp, t);
                }
            }
            let stump = ForestParams { max_depth: Some(1), ..deep(1) };
            let f = Forest::fit(&ts, stump, 0).unwrap();
            let parent = gini(&mut rows.iter());
            match f.trees()[0].nodes()[0] {
                Node::Split { threshold, .. } => assert_eq!(threshold, best.1),
                Node::Leaf { .. } => assert!(best.0.is_nan() || parent - best.0 <= 1e-9 * parent.max(1.0)),
            }
        }
    }

    #[test]
    fn weights_shift_leaf_probabilities() {
        let ts = set(&[(&[0.0], 0, 1.0), (&[0.0], 1, 0.5), (&[0.0], 0, 0.5)]);
        let f = Forest::fit(&ts, deep(1), 0).unwrap();
        assert!((f.predict_proba(&[0.0]).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn min_samples_leaf_and_depth_are_respected() {
        let rows: Vec<(Vec<f64>, u8)> = (0..64).map(|i| (alloc::vec![i as f64], (i % 3 == 0) as u8)).collect();
        let ts = TrainingSet::new(
            1,
            rows.iter().enumerate().map(|(i, r)| Instance::new(r.0.clone(), r.1, 1.0, i)).collect(),
        )
        .unwrap();
        let f = Forest::fit(&ts, ForestParams { max_depth: Some(3), min_samples_leaf: 5, ..deep(1) }, 0).unwrap();
        assert!(f.trees()[0].depth() <= 3);
        for leaf_count in leaf_sizes(&f.trees()[0], &ts) {
            assert!(leaf_count >= 5);
        }
    }

    fn leaf_sizes(tree: &Tree, ts: &TrainingSet) -> Vec<usize> {
        let mut counts = alloc::collections::BTreeMap::new();
        for inst in ts.instances() {
            let mut i = 0;
            while let Node::Split { feature, threshold, left, right } = tree.nodes()[i] {
                i = if inst.features[feature] <= threshold { left } else { right };
            }
            *counts.entry(i).or_insert(0) += 1;
        }
        counts.into_values().collect()
    }

    #[test]
    fn invalid_params_and_schema() {
        let ts = set(&[(&[0.0, 1.0], 0, 1.0), (&[1.0, 0.0], 1, 1.0)]);
        for p in [
            ForestParams { n_trees: 0, ..deep(2) },
            ForestParams { max_features: 3, ..deep(2) },
            ForestParams { min_samples_leaf: 0, ..deep(2) },
            ForestParams { max_depth: Some(0), ..deep(2) },
        ] {
            assert!(matches!(Forest::fit(&ts, p, 0), Err(Error::Config(_))));
        }
        let f = Forest::fit(&ts, deep(2), 0).unwrap();
        assert!(matches!(f.predict_proba(&[1.0]), Err(Error::SchemaMismatch { expected: 2, found: 1 })));
    }

    #[test]
    fn nodes_round_trip_and_validate() {
        let ts = set(&[(&[0.0], 0, 1.0), (&[3.0], 1, 1.0), (&[4.0], 0, 1.0)]);
        let f = Forest::fit(&ts, deep(1), 0).unwrap();
        let rebuilt: Vec<Tree> = f.trees().iter().map(|t| Tree::from_nodes(t.nodes().to_vec(), 1).unwrap()).collect();
        assert_eq!(Forest::from_parts(*f.params(), 1, f.seed(), rebuilt).unwrap(), f);
        let cyclic = alloc::vec![Node::Split { feature: 0, threshold: 1.0, left: 0, right: 0 }];
        assert!(Tree::from_nodes(cyclic, 1).is_err());
        assert!(Tree::from_nodes(alloc::vec![Node::Leaf { prob: 1.5 }], 1).is_err());
    }

    proptest! {
        #[test]
        fn forest_is_deterministic_and_bounded(
            rows in prop::collection::vec((0u8..6, 0u8..6, 0u8..2, 0.5f64..1.0), 2..60),
            seed in any::<u64>(),
            trees in 1usize..6,
            m in 1usize..3,
        ) {
            let ts = TrainingSet::new(
                2,
                rows.iter().enumerate().map(|(i, r)| Instance::new(alloc::vec![r.0 as f64, r.1 as f64], r.2, r.3, i)).collect(),
            ).unwrap();
            let p = ForestParams { n_trees: trees, max_depth: None, min_samples_leaf: 1, max_features: m, bootstrap: true };
            let a = Forest::fit(&ts, p, seed).unwrap();
            prop_assert_eq!(&a, &Forest::fit(&ts, p, seed).unwrap());
            for x in 0..6 {
                for y in 0..6 {
                    let prob = a.predict_proba(&[x as f64, y as f64]).unwrap();
                    prop_assert!((0.0..=1.0).contains(&prob));
                }
            }
        }

        #[test]
        fn duplicating_the_data_keeps_unbootstrapped_trees(
            rows in prop::collection::vec((0u8..5, 0u8..2), 2..30),
        ) {
            let make = |k: usize| TrainingSet::new(
                1,
                (0..k).flat_map(|_| rows.iter()).enumerate().map(|(i, r)| Instance::new(alloc::vec![r.0 as f64], r.1, 1.0, i)).collect(),
            ).unwrap();
            let p = deep(1);
            let once = Forest::fit(&make(1), p, 1).unwrap();
            let twice = Forest::fit(&make(2), p, 1).unwrap();
            for x in 0..5 {
                let a = once.predict_proba(&[x as f64]).unwrap();
                let b = twice.predict_proba(&[x as f64]).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
