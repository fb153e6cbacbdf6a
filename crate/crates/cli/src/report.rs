//! The evaluation report (`report.csv`) and its summary tables.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::FormatError;
use crate::formats::SCHEMA_VERSION;

fn six<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match x {
        Some(v) => s.serialize_str(&format!("{v:.6}")),
        None => s.serialize_str(""),
    }
}

/// One evaluation result. Classifier columns are blank on baseline rows and
/// OIL columns are blank when OIL was not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub schema_version: u32,
    pub domain: String,
    pub oracle: String,
    pub protocol: String,
    pub aggregator: String,
    pub budget: Option<usize>,
    pub seed: u64,
    pub condition: String,
    #[serde(serialize_with = "six")]
    pub seen_f1: Option<f64>,
    #[serde(serialize_with = "six")]
    pub unseen_f1: Option<f64>,
    pub n_seen: Option<usize>,
    pub n_unseen: Option<usize>,
    #[serde(serialize_with = "six")]
    pub threshold: Option<f64>,
    #[serde(serialize_with = "six")]
    pub calibration_gap: Option<f64>,
    pub degenerate: Option<bool>,
    #[serde(serialize_with = "six")]
    pub oil_reward: Option<f64>,
    #[serde(serialize_with = "six")]
    pub oil_reward_std: Option<f64>,
    #[serde(serialize_with = "six")]
    pub query_rate: Option<f64>,
}

pub const COLUMNS: [&str; 18] = [
    "schema_version",
    "domain",
    "oracle",
    "protocol",
    "aggregator",
    "budget",
    "seed",
    "condition",
    "seen_f1",
    "unseen_f1",
    "n_seen",
    "n_unseen",
    "threshold",
    "calibration_gap",
    "degenerate",
    "oil_reward",
    "oil_reward_std",
    "query_rate",
];

pub fn write_report<W: Write>(w: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).has_headers(false).from_writer(w);
    w.write_record(COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_report(std::io::BufWriter::new(f), rows)
}

pub fn load_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(FormatError::Invalid { path: path.to_path_buf(), message: "unexpected report columns".into() }.into());
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        let row: ReportRow = rec.map_err(|e| FormatError::Invalid { path: path.to_path_buf(), message: format!("row {i}: {e}") })?;
        if row.schema_version != SCHEMA_VERSION {
            return Err(
                FormatError::Version { path: path.to_path_buf(), found: row.schema_version, expected: SCHEMA_VERSION }.into()
            );
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Mean and population standard deviation over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Some(Stat { mean, std: var.sqrt(), n: xs.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellId {
    pub domain: String,
    pub oracle: String,
    pub condition: String,
    pub protocol: String,
    pub aggregator: String,
    pub budget: Option<usize>,
}

impl CellId {
    fn of(r: &ReportRow) -> Self {
        CellId {
            domain: r.domain.clone(),
            oracle: r.oracle.clone(),
            condition: r.condition.clone(),
            protocol: r.protocol.clone(),
            aggregator: r.aggregator.clone(),
            budget: r.budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryLine {
    pub cell: CellId,
    pub seeds: usize,
    /// Seen and unseen F1 (classifier table) or reward and query percentage
    /// (OIL table).
    pub first: Option<Stat>,
    pub second: Option<Stat>,
}

/// The two summary tables: feedback type x {seen, unseen} F1 and
/// condition x {reward, % queries}.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub classifier: Vec<SummaryLine>,
    pub oil: Vec<SummaryLine>,
    pub warnings: Vec<String>,
}

fn summarize(
    rows: &[&ReportRow],
    first: impl Fn(&ReportRow) -> Option<f64>,
    second: impl Fn(&ReportRow) -> Option<f64>,
    expected: &BTreeMap<(String, String), BTreeSet<u64>>,
    full_grid: bool,
    warnings: &mut Vec<String>,
) -> Vec<SummaryLine> {
    let mut groups: BTreeMap<CellId, Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(CellId::of(r)).or_default().push(r);
    }
    if full_grid {
        // every (protocol, aggregator, budget) combination that occurs anywhere
        // in a (domain, oracle) block is expected in that block
        let mut axes: BTreeMap<(String, String, String), (BTreeSet<String>, BTreeSet<String>, BTreeSet<Option<usize>>)> =
            BTreeMap::new();
        for c in groups.keys() {
            let e = axes.entry((c.domain.clone(), c.oracle.clone(), c.condition.clone())).or_default();
            e.0.insert(c.protocol.clone());
            e.1.insert(c.aggregator.clone());
            e.2.insert(c.budget);
        }
        for ((domain, oracle, condition), (ps, aggs, bs)) in axes {
            for p in &ps {
                for a in &aggs {
                    for &b in &bs {
                        let id = CellId {
                            domain: domain.clone(),
                            oracle: oracle.clone(),
                            condition: condition.clone(),
                            protocol: p.clone(),
                            aggregator: a.clone(),
                            budget: b,
                        };
                        groups.entry(id).or_default();
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for (cell, rs) in groups {
        let name = format!(
            "{}/{}/{}/{}/{}/{}",
            cell.domain,
            cell.oracle,
            cell.condition,
            cell.protocol,
            cell.aggregator,
            cell.budget.map(|b| b.to_string()).unwrap_or_default()
        );
        let seeds: BTreeSet<u64> = rs.iter().map(|r| r.seed).collect();
        if let Some(all) = expected.get(&(cell.domain.clone(), cell.oracle.clone())) {
            if seeds.len() < all.len() {
                warnings.push(format!("{name}: {} of {} seeds present", seeds.len(), all.len()));
            }
        }
        let xs: Vec<f64> = rs.iter().filter_map(|r| first(r)).collect();
        let ys: Vec<f64> = rs.iter().filter_map(|r| second(r)).collect();
        if !rs.is_empty() && xs.len() < rs.len() && !xs.is_empty() {
            warnings.push(format!("{name}: values missing for some seeds"));
        }
        out.push(SummaryLine { cell, seeds: seeds.len(), first: Stat::of(&xs), second: Stat::of(&ys) });
    }
    out
}

/// Pivot the report into per-seed means and standard deviations.
pub fn compare_conditions(rows: &[ReportRow]) -> Summary {
    let mut expected: BTreeMap<(String, String), BTreeSet<u64>> = BTreeMap::new();
    for r in rows {
        expected.entry((r.domain.clone(), r.oracle.clone())).or_default().insert(r.seed);
    }
    let mut warnings = Vec::new();
    let model: Vec<&ReportRow> = rows.iter().filter(|r| r.seen_f1.is_some() || r.condition == "model").collect();
    let classifier = summarize(&model, |r| r.seen_f1, |r| r.unseen_f1, &expected, true, &mut warnings);
    let oil_rows: Vec<&ReportRow> = rows.iter().filter(|r| r.oil_reward.is_some()).collect();
    let oil = summarize(&oil_rows, |r| r.oil_reward, |r| r.query_rate.map(|q| 100.0 * q), &expected, false, &mut warnings);
    for line in &classifier {
        if line.seeds == 0 {
            warnings.push(format!(
                "missing cell {}/{}/{}/{}/{}",
                line.cell.domain,
                line.cell.oracle,
                line.cell.protocol,
                line.cell.aggregator,
                line.cell.budget.map(|b| b.to_string()).unwrap_or_default()
            ));
        }
    }
    Summary { classifier, oil, warnings }
}

fn stat_cells(s: Option<Stat>) -> [String; 2] {
    match s {
        Some(s) => [format!("{:.6}", s.mean), format!("{:.6}", s.std)],
        None => [String::new(), String::new()],
    }
}

fn table<W: Write>(w: W, lines: &[SummaryLine], first: &str, second: &str, with_condition: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let mut header = vec!["domain", "oracle"];
    if with_condition {
        header.push("condition");
    }
    let (fm, fs, sm, ss) = (format!("{first}_mean"), format!("{first}_std"), format!("{second}_mean"), format!("{second}_std"));
    header.extend(["protocol", "aggregator", "budget", "seeds", &fm, &fs, &sm, &ss]);
    w.write_record(&header)?;
    for l in lines {
        let c = &l.cell;
        let mut rec = vec![c.domain.clone(), c.oracle.clone()];
        if with_condition {
            rec.push(c.condition.clone());
        }
        rec.extend([c.protocol.clone(), c.aggregator.clone(), c.budget.map(|b| b.to_string()).unwrap_or_default()]);
        rec.push(l.seeds.to_string());
        rec.extend(stat_cells(l.first));
        rec.extend(stat_cells(l.second));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

impl Summary {
    pub fn write_classifier<W: Write>(&self, w: W) -> Result<()> {
        table(w, &self.classifier, "seen_f1", "unseen_f1", false)
    }

    pub fn write_oil<W: Write>(&self, w: W) -> Result<()> {
        table(w, &self.oil, "reward", "query_pct", true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn row(condition: &str, seed: u64) -> ReportRow {
        let model = condition == "model";
        ReportRow {
            schema_version: SCHEMA_VERSION,
            domain: "catcher".into(),
            oracle: "strict".into(),
            protocol: if model { "R-A".into() } else { String::new() },
            aggregator: if model { "ds".into() } else { String::new() },
            budget: if model { Some(1000) } else { None },
            seed,
            condition: condition.into(),
            seen_f1: model.then_some(0.5),
            unseen_f1: None,
            n_seen: model.then_some(10),
            n_unseen: model.then_some(0),
            threshold: model.then_some(0.25),
            calibration_gap: model.then_some(0.5),
            degenerate: model.then_some(false),
            oil_reward: Some(if condition == "always-query" { 10.0 } else { -3.0 }),
            oil_reward_std: Some(1.0),
            query_rate: Some(match condition {
                "always-query" => 1.0,
                "never-query" => 0.0,
                _ => 0.2,
            }),
        }
    }

    #[test]
    fn report_round_trip() {
        let rows = vec![row("model", 0), row("never-query", 0), row("always-query", 0)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("report.csv");
        save_report(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&COLUMNS.join(",")));
        assert!(text.contains(",0.500000,,10,0,0.250000,"));
        assert_eq!(load_report(&p).unwrap(), rows);
    }

    #[test]
    fn one_row_gives_one_cell() {
        let s = compare_conditions(&[row("model", 0)]);
        assert_eq!(s.classifier.len(), 1);
        let st = s.classifier[0].first.unwrap();
        assert_eq!((st.mean, st.std, st.n), (0.5, 0.0, 1));
        assert!(s.classifier[0].second.is_none());
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn always_query_is_full_rate() {
        let rows = [row("always-query", 0), row("always-query", 1), row("never-query", 0), row("never-query", 1)];
        let s = compare_conditions(&rows);
        let aq = s.oil.iter().find(|l| l.cell.condition == "always-query").unwrap();
        assert_eq!(aq.second.unwrap().mean, 100.0);
        let nq = s.oil.iter().find(|l| l.cell.condition == "never-query").unwrap();
        assert_eq!(nq.second.unwrap().mean, 0.0);
    }

    #[test]
    fn missing_cells_become_blank_rows() {
        let mut a = row("model", 0);
        let mut b = row("model", 1);
        b.budget = Some(2000);
        a.seen_f1 = Some(0.25);
        b.aggregator = "mv".into();
        let s = compare_conditions(&[a, b]);
        // 1 protocol x 2 aggregators x 2 budgets
        assert_eq!(s.classifier.len(), 4);
        let blanks = s.classifier.iter().filter(|l| l.seeds == 0).count();
        assert_eq!(blanks, 2);
        assert!(s.warnings.iter().any(|w| w.starts_with("missing cell")));
        let mut out = Vec::new();
        s.write_classifier(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("catcher,strict,R-A,ds,2000,0,,,,"));
    }

    #[test]
    fn column_order_matches_schema() {
        let mut out = Vec::new();
        compare_conditions(&[row("model", 0)]).write_classifier(&mut out).unwrap();
        let header = String::from_utf8(out).unwrap().lines().next().unwrap().to_string();
        assert_eq!(
            header,
            "domain,oracle,protocol,aggregator,budget,seeds,seen_f1_mean,seen_f1_std,unseen_f1_mean,unseen_f1_std"
        );
        let mut out = Vec::new();
        compare_conditions(&[row("model", 0)]).write_oil(&mut out).unwrap();
        let header = String::from_utf8(out).unwrap().lines().next().unwrap().to_string();
        assert_eq!(
            header,
            "domain,oracle,condition,protocol,aggregator,budget,seeds,reward_mean,reward_std,query_pct_mean,query_pct_std"
        );
    }

    #[test]
    fn stat_is_population_std() {
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 2));
        assert!(Stat::of(&[]).is_none());
    }
}
