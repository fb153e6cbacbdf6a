//! On-disk formats. The schemas are documented in `FORMATS.md`.
//!
//! CSV files that carry metadata start with a single `#` line of
//! space-separated `key=value` pairs; readers skip other `#` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use blindspot_core::aggregate::{AggregatedDataset, AggregatedLabel, Aggregator};
use blindspot_core::env::{Action, Environment};
use blindspot_core::feedback::{FeedbackDataset, LabelEvent, Protocol};
use blindspot_core::model::{BlindSpotModel, Forest, ForestParams, Node, Tree};
use blindspot_core::oracle::{BlindSpotTruth, Label};
use blindspot_core::rl::QTable;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::FormatError;

pub const SCHEMA_VERSION: u32 = 1;
pub const MODEL_FORMAT: &str = "blindspot-model";

fn invalid(path: &Path, message: impl Into<String>) -> anyhow::Error {
    FormatError::Invalid { path: path.to_path_buf(), message: message.into() }.into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

/// `x` with the shortest representation that reads back exactly.
pub fn float(x: f64) -> String {
    format!("{x}")
}

/// Fixed six-decimal rendering used by reports.
pub fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

fn write_meta<W: Write>(w: &mut W, meta: &[(&str, String)]) -> Result<()> {
    let mut line = String::from("#");
    for (k, v) in meta {
        write!(line, " {k}={v}").expect("writing to a string");
    }
    writeln!(w, "{line}")?;
    Ok(())
}

/// Key-value pairs of the leading `#` line, if any.
pub fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut first = String::new();
    open(path)?.read_line(&mut first)?;
    let mut meta = BTreeMap::new();
    if let Some(rest) = first.trim_end().strip_prefix('#') {
        for pair in rest.split_whitespace() {
            let (k, v) = pair.split_once('=').ok_or_else(|| invalid(path, format!("malformed metadata `{pair}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
    }
    Ok(meta)
}

fn meta_field<'a>(meta: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    meta.get(key).map(String::as_str).ok_or_else(|| invalid(path, format!("missing metadata `{key}`")))
}

fn check_version(meta: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    let v: u32 = meta_field(meta, "version", path)?.parse().map_err(|_| invalid(path, "bad version"))?;
    if v != SCHEMA_VERSION {
        return Err(FormatError::Version { path: path.to_path_buf(), found: v, expected: SCHEMA_VERSION }.into());
    }
    Ok(())
}

fn check_header(path: &Path, found: &csv::StringRecord, expected: &[String]) -> Result<()> {
    if found.iter().ne(expected.iter().map(String::as_str)) {
        return Err(invalid(path, format!("header {:?}, expected {:?}", found.iter().collect::<Vec<_>>(), expected)));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, column: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| invalid(path, format!("row {row}: bad {column} `{s}`")))
}

fn parse_ints(path: &Path, row: usize, cells: &[&str]) -> Result<Vec<i64>> {
    cells.iter().map(|c| parse(path, row, "state field", c)).collect()
}

fn owned(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn values_to_strings(v: &[i64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(i64::to_string)
}

// ---- action-value tables: one row per (state, action) ----

fn qtable_header(fields: &[&str]) -> Vec<String> {
    let mut h = owned(fields);
    h.extend(["action".to_string(), "action_name".to_string(), "value".to_string()]);
    h
}

pub fn write_qtable<K: Ord + Copy>(
    path: &Path,
    fields: &[&str],
    action_names: &[&str],
    q: &QTable<K>,
    values: impl Fn(&K) -> Vec<i64>,
) -> Result<()> {
    let mut w = csv_writer(create(path)?);
    w.write_record(qtable_header(fields))?;
    for (i, s) in q.states().iter().enumerate() {
        let v = values(s);
        for (a, value) in q.row_at(i).iter().enumerate() {
            let mut rec: Vec<String> = values_to_strings(&v).collect();
            rec.extend([a.to_string(), action_names[a].to_string(), float(*value)]);
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_qtable`]; every (state, action) pair must appear once.
pub fn read_qtable<K: Ord + Copy + std::fmt::Debug>(
    path: &Path,
    fields: &[&str],
    num_actions: usize,
    from_values: impl Fn(&[i64]) -> blindspot_core::Result<K>,
) -> Result<QTable<K>> {
    let mut r = csv_reader(open(path)?);
    check_header(path, r.headers()?, &qtable_header(fields))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().collect();
        let s = from_values(&parse_ints(path, i, &cells[..fields.len()])?).map_err(|e| invalid(path, format!("row {i}: {e}")))?;
        let a: Action = parse(path, i, "action", cells[fields.len()])?;
        let v: f64 = parse(path, i, "value", cells[fields.len() + 2])?;
        if a >= num_actions {
            return Err(invalid(path, format!("row {i}: action {a} out of range")));
        }
        rows.push((s, a, v));
    }
    let mut q = QTable::zeros(rows.iter().map(|r| r.0), num_actions);
    let mut seen = vec![false; q.len() * num_actions];
    for (s, a, v) in rows {
        let cell = q.index().get(&s).expect("state was indexed") * num_actions + a;
        if std::mem::replace(&mut seen[cell], true) {
            return Err(invalid(path, format!("duplicate entry for {s:?} action {a}")));
        }
        q.set(&s, a, v)?;
    }
    if seen.iter().any(|x| !x) {
        return Err(invalid(path, "table is missing (state, action) entries"));
    }
    Ok(q)
}

pub fn write_env_qtables<E: Environment>(
    dir: &Path,
    env: &E,
    q_sim: &QTable<E::Sim>,
    q_real: &QTable<E::Real>,
) -> Result<()> {
    write_qtable(&dir.join("q_sim.csv"), env.sim_fields(), env.action_names(), q_sim, |s| env.sim_values(s))?;
    write_qtable(&dir.join("q_real.csv"), env.real_fields(), env.action_names(), q_real, |s| env.real_values(s))
}

pub fn read_env_qtables<E: Environment>(dir: &Path, env: &E) -> Result<(QTable<E::Sim>, QTable<E::Real>)> {
    let n = env.num_actions();
    let q_sim = read_qtable(&dir.join("q_sim.csv"), env.sim_fields(), n, |v| env.sim_from_values(v))?;
    let q_real = read_qtable(&dir.join("q_real.csv"), env.real_fields(), n, |v| env.real_from_values(v))?;
    Ok((q_sim, q_real))
}

// ---- ground truth ----

pub fn write_truth<E: Environment>(path: &Path, env: &E, truth: &BlindSpotTruth<E::Sim, E::Real>) -> Result<()> {
    let mut w = csv_writer(create(path)?);
    let mut header = owned(env.sim_fields());
    header.push("blind_spot".into());
    header.extend(env.real_fields().iter().map(|f| format!("witness_{f}")));
    w.write_record(&header)?;
    for (s, e) in truth.iter() {
        let mut rec: Vec<String> = values_to_strings(&env.sim_values(s)).collect();
        rec.push(u8::from(e.blind_spot).to_string());
        match &e.witness {
            Some(r) => rec.extend(values_to_strings(&env.real_values(r))),
            None => rec.extend(env.real_fields().iter().map(|_| String::new())),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---- feedback ----

fn feedback_header(env_fields: &[&str]) -> Vec<String> {
    let mut h = vec!["protocol".to_string()];
    h.extend(owned(env_fields));
    h.extend(["label", "episode", "step", "real"].map(String::from));
    h
}

pub fn write_feedback<E: Environment>(path: &Path, env: &E, d: &FeedbackDataset<E::Real, E::Sim>) -> Result<()> {
    let mut out = create(path)?;
    write_meta(
        &mut out,
        &[
            ("version", SCHEMA_VERSION.to_string()),
            ("domain", env.name().to_string()),
            ("protocol", d.protocol.code().to_string()),
            ("seed", d.seed.to_string()),
            ("budget", d.budget.to_string()),
        ],
    )?;
    let mut w = csv_writer(out);
    w.write_record(feedback_header(env.sim_fields()))?;
    for e in d.events() {
        let mut rec = vec![d.protocol.code().to_string()];
        rec.extend(values_to_strings(&env.sim_values(&e.sim)));
        rec.extend([e.label.to_string(), e.episode.to_string(), e.step.to_string()]);
        rec.push(env.real_values(&e.real).iter().map(i64::to_string).collect::<Vec<_>>().join(";"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feedback<E: Environment>(path: &Path, env: &E) -> Result<FeedbackDataset<E::Real, E::Sim>> {
    let meta = read_meta(path)?;
    check_version(&meta, path)?;
    let domain = meta_field(&meta, "domain", path)?;
    if domain != env.name() {
        return Err(invalid(path, format!("feedback is for {domain}, not {}", env.name())));
    }
    let protocol: Protocol = meta_field(&meta, "protocol", path)?.parse().map_err(|e| invalid(path, format!("{e}")))?;
    let seed: u64 = parse(path, 0, "seed", meta_field(&meta, "seed", path)?)?;
    let budget: usize = parse(path, 0, "budget", meta_field(&meta, "budget", path)?)?;
    let nf = env.sim_fields().len();
    let mut r = csv_reader(open(path)?);
    check_header(path, r.headers()?, &feedback_header(env.sim_fields()))?;
    let mut events = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().collect();
        if cells[0] != protocol.code() {
            return Err(invalid(path, format!("row {i}: protocol {} disagrees with metadata", cells[0])));
        }
        let sim = env.sim_from_values(&parse_ints(path, i, &cells[1..1 + nf])?).map_err(|e| invalid(path, format!("row {i}: {e}")))?;
        let label: Label = parse(path, i, "label", cells[1 + nf])?;
        let episode: u32 = parse(path, i, "episode", cells[2 + nf])?;
        let step: u32 = parse(path, i, "step", cells[3 + nf])?;
        let real_cells: Vec<&str> = cells[4 + nf].split(';').collect();
        let real = env.real_from_values(&parse_ints(path, i, &real_cells)?).map_err(|e| invalid(path, format!("row {i}: {e}")))?;
        if env.observe(&real) != sim {
            return Err(invalid(path, format!("row {i}: real state does not project onto the sim state")));
        }
        events.push(LabelEvent { real, sim, label, episode, step });
    }
    Ok(FeedbackDataset::from_events(protocol, seed, budget, events)?)
}

// ---- aggregated labels ----

/// Contents of an aggregated-label file.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregatedFile<S: Ord> {
    Aggregated(AggregatedDataset<S>),
    /// One row per raw label.
    AllLabels(Vec<(S, Label)>),
}

fn aggregated_header(fields: &[&str]) -> Vec<String> {
    let mut h = owned(fields);
    h.extend(["label", "confidence", "posterior"].map(String::from));
    h
}

fn write_aggregated_rows<E: Environment>(
    path: &Path,
    env: &E,
    method: Aggregator,
    seed: u64,
    rows: impl Iterator<Item = (E::Sim, Label, f64, f64)>,
) -> Result<()> {
    let mut out = create(path)?;
    write_meta(
        &mut out,
        &[
            ("version", SCHEMA_VERSION.to_string()),
            ("domain", env.name().to_string()),
            ("method", method.code().to_string()),
            ("seed", seed.to_string()),
        ],
    )?;
    let mut w = csv_writer(out);
    w.write_record(aggregated_header(env.sim_fields()))?;
    for (s, label, confidence, posterior) in rows {
        let mut rec: Vec<String> = values_to_strings(&env.sim_values(&s)).collect();
        rec.extend([label.to_string(), float(confidence), float(posterior)]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `seed` is the seed of the feedback the labels came from.
pub fn write_aggregated<E: Environment>(path: &Path, env: &E, d: &AggregatedDataset<E::Sim>, seed: u64) -> Result<()> {
    write_aggregated_rows(path, env, d.method, seed, d.entries.iter().map(|(s, a)| (*s, a.label, a.confidence, a.posterior)))
}

pub fn write_all_labels<E: Environment>(path: &Path, env: &E, labels: &[(E::Sim, Label)], seed: u64) -> Result<()> {
    write_aggregated_rows(path, env, Aggregator::AllLabels, seed, labels.iter().map(|(s, l)| (*s, *l, 1.0, f64::from(*l))))
}

/// The labels and the seed of the feedback they came from.
pub fn read_aggregated<E: Environment>(path: &Path, env: &E) -> Result<(AggregatedFile<E::Sim>, u64)> {
    let meta = read_meta(path)?;
    check_version(&meta, path)?;
    let domain = meta_field(&meta, "domain", path)?;
    if domain != env.name() {
        return Err(invalid(path, format!("labels are for {domain}, not {}", env.name())));
    }
    let seed: u64 = parse(path, 0, "seed", meta_field(&meta, "seed", path)?)?;
    let method: Aggregator = meta_field(&meta, "method", path)?.parse().map_err(|e| invalid(path, format!("{e}")))?;
    let nf = env.sim_fields().len();
    let mut r = csv_reader(open(path)?);
    check_header(path, r.headers()?, &aggregated_header(env.sim_fields()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let cells: Vec<&str> = rec.iter().collect();
        let s = env.sim_from_values(&parse_ints(path, i, &cells[..nf])?).map_err(|e| invalid(path, format!("row {i}: {e}")))?;
        let label: Label = parse(path, i, "label", cells[nf])?;
        let confidence: f64 = parse(path, i, "confidence", cells[nf + 1])?;
        let posterior: f64 = parse(path, i, "posterior", cells[nf + 2])?;
        rows.push((s, AggregatedLabel { label, confidence, posterior }));
    }
    if method == Aggregator::AllLabels {
        return Ok((AggregatedFile::AllLabels(rows.into_iter().map(|(s, a)| (s, a.label)).collect()), seed));
    }
    let n = rows.len();
    let entries: BTreeMap<_, _> = rows.into_iter().collect();
    if entries.len() != n {
        return Err(invalid(path, "duplicate states"));
    }
    Ok((AggregatedFile::Aggregated(AggregatedDataset { method, entries, diagnostics: None }), seed))
}

// ---- bias heatmaps ----

pub fn write_heatmap<E: Environment>(path: &Path, env: &E, counts: &BTreeMap<E::Sim, usize>) -> Result<()> {
    let mut w = csv_writer(create(path)?);
    let mut header = owned(env.sim_fields());
    header.push("count".into());
    w.write_record(&header)?;
    for (s, c) in counts {
        let mut rec: Vec<String> = values_to_strings(&env.sim_values(s)).collect();
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

// ---- models ----

/// Hash of the ordered feature names; a model only applies to states with
/// the same schema.
pub fn schema_hash(names: &[String]) -> String {
    let mut h = Sha256::new();
    for n in names {
        h.update(n.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    n_trees: usize,
    max_depth: Option<usize>,
    min_samples_leaf: usize,
    max_features: usize,
    bootstrap: bool,
}

/// Parallel node arrays; `feature` is -1 on leaves.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    feature: Vec<i64>,
    threshold: Vec<f64>,
    left: Vec<usize>,
    right: Vec<usize>,
    value: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    feature_names: Vec<String>,
    schema_hash: String,
    threshold: f64,
    training_prior: f64,
    degenerate: bool,
    seed: u64,
    params: ParamsFile,
    trees: Vec<TreeFile>,
}

fn tree_file(t: &Tree) -> TreeFile {
    let mut f = TreeFile { feature: vec![], threshold: vec![], left: vec![], right: vec![], value: vec![] };
    for n in t.nodes() {
        match *n {
            Node::Leaf { prob } => {
                f.feature.push(-1);
                f.threshold.push(0.0);
                f.left.push(0);
                f.right.push(0);
                f.value.push(prob);
            }
            Node::Split { feature, threshold, left, right } => {
                f.feature.push(feature as i64);
                f.threshold.push(threshold);
                f.left.push(left);
                f.right.push(right);
                f.value.push(0.0);
            }
        }
    }
    f
}

fn tree_from_file(f: &TreeFile, n_features: usize) -> std::result::Result<Tree, String> {
    let n = f.feature.len();
    if [f.threshold.len(), f.left.len(), f.right.len(), f.value.len()].iter().any(|&l| l != n) {
        return Err("node arrays differ in length".into());
    }
    let nodes = (0..n)
        .map(|i| {
            if f.feature[i] < 0 {
                Node::Leaf { prob: f.value[i] }
            } else {
                Node::Split { feature: f.feature[i] as usize, threshold: f.threshold[i], left: f.left[i], right: f.right[i] }
            }
        })
        .collect();
    Tree::from_nodes(nodes, n_features).map_err(|e| e.to_string())
}

pub fn model_to_json(m: &BlindSpotModel) -> Result<String> {
    let p = m.forest.params();
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: SCHEMA_VERSION,
        schema_hash: schema_hash(&m.feature_names),
        feature_names: m.feature_names.clone(),
        threshold: m.threshold,
        training_prior: m.training_prior,
        degenerate: m.degenerate,
        seed: m.forest.seed(),
        params: ParamsFile {
            n_trees: p.n_trees,
            max_depth: p.max_depth,
            min_samples_leaf: p.min_samples_leaf,
            max_features: p.max_features,
            bootstrap: p.bootstrap,
        },
        trees: m.forest.trees().iter().map(tree_file).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json(text: &str, path: &Path) -> Result<BlindSpotModel> {
    let f: ModelFile = serde_json::from_str(text).map_err(|e| invalid(path, e.to_string()))?;
    if f.format != MODEL_FORMAT {
        return Err(invalid(path, format!("not a model file (format `{}`)", f.format)));
    }
    if f.version != SCHEMA_VERSION {
        return Err(FormatError::Version { path: path.to_path_buf(), found: f.version, expected: SCHEMA_VERSION }.into());
    }
    if f.schema_hash != schema_hash(&f.feature_names) {
        return Err(invalid(path, "schema hash does not match the feature names"));
    }
    let n_features = f.feature_names.len();
    let params = ForestParams {
        n_trees: f.params.n_trees,
        max_depth: f.params.max_depth,
        min_samples_leaf: f.params.min_samples_leaf,
        max_features: f.params.max_features,
        bootstrap: f.params.bootstrap,
    };
    let trees = f
        .trees
        .iter()
        .enumerate()
        .map(|(i, t)| tree_from_file(t, n_features).map_err(|e| invalid(path, format!("tree {i}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let forest = Forest::from_parts(params, n_features, f.seed, trees).map_err(|e| invalid(path, e.to_string()))?;
    Ok(BlindSpotModel {
        forest,
        threshold: f.threshold,
        training_prior: f.training_prior,
        degenerate: f.degenerate,
        feature_names: f.feature_names,
    })
}

pub fn save_model(path: &Path, m: &BlindSpotModel) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(model_to_json(m)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<BlindSpotModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    model_from_json(&text, path)
}
