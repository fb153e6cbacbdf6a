//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs the default Catcher and FlappyBird configs at full scale, so expect
//! several minutes in an optimised build. Exits 0 regardless of the verdicts
//! unless `BLINDSPOT_ACCEPTANCE_STRICT` is set.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use blindspot::config::{AggregatorKind, ExperimentConfig, OracleKind};
use blindspot::pipeline::{catcher_pair, flappy_pair, run_cell, CellKey, Prepared, Replicate};
use blindspot::sweep;
use blindspot_core::aggregate::{self, DsConfig, DsVariant, NoiseModel};
use blindspot_core::env::Environment;
use blindspot_core::feedback::{Collector, Protocol};
use blindspot_core::oracle::ground_truth_blind_spots;
use blindspot_core::rl;
use blindspot_core::seed;
use rand::Rng;

const LARGEST: usize = 8000;
const BUDGETS: [usize; 4] = [1000, 2000, 4000, 8000];

struct Verdict {
    id: usize,
    pass: bool,
    detail: String,
    secs: f64,
}

fn config(name: &str) -> Result<ExperimentConfig> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    Ok(ExperimentConfig::load(&path)?)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- criterion 1

/// Blind spots by a plain double loop over sim and real states.
fn brute_force_truth<E: Environment>(
    env: &E,
    pi: &rl::Policy<E::Sim>,
    q_real: &rl::QTable<E::Real>,
    delta: Option<f64>,
) -> Result<BTreeMap<E::Sim, bool>> {
    let reals = env.real_states()?;
    let mut out = BTreeMap::new();
    for sim in env.sim_states()? {
        let a = pi.act(&sim)?;
        let mut blind = false;
        for real in &reals {
            if env.observe(real) != sim {
                continue;
            }
            let row = q_real.row(real).context("real state missing from Q_real")?;
            let best = rl::argmax(row);
            let dq = rl::max_value(row) - row[a];
            let ok = a == best || delta.is_some_and(|d| dq < d);
            blind |= !ok;
        }
        out.insert(sim, blind);
    }
    Ok(out)
}

fn criterion_1() -> Result<(bool, String)> {
    let cfg = config("catcher.toml")?;
    let pair = catcher_pair(&cfg)?;
    let n_real = pair.target.real_states()?.len();
    ensure!(n_real <= 20_000, "config has {n_real} real states");
    let p = Prepared::new(pair, &cfg, &[OracleKind::Strict, OracleKind::Lenient])?;
    let env = &p.pair.target;
    let mut pass = true;
    let mut parts = vec![format!("|S_real|={n_real}")];
    for (kind, setup) in &p.oracles {
        let t = Instant::now();
        let truth = ground_truth_blind_spots(env, &p.pi_sim, &setup.oracle)?;
        let secs = t.elapsed().as_secs_f64();
        let reference = brute_force_truth(env, &p.pi_sim, &p.q_real, setup.oracle.acceptable().delta())?;
        let agree = reference.iter().filter(|(s, &b)| truth.is_blind_spot(s) == Some(b)).count();
        let ok = agree == reference.len() && truth.len() == reference.len() && secs < 10.0;
        pass &= ok;
        parts.push(format!(
            "{}: {agree}/{} agree, {} blind, {secs:.3}s",
            kind.name(),
            reference.len(),
            truth.blind_spot_count()
        ));
    }
    Ok((pass, parts.join("; ")))
}

// ---------------------------------------------------------------- criterion 2

/// Exact marginals by summing over every joint assignment of the latent classes.
fn exact_posteriors(noise: &NoiseModel, labels: &[Vec<u8>]) -> Vec<f64> {
    let n = labels.len();
    let lik = |z: usize, ls: &[u8]| -> f64 {
        let p = if z == 1 { noise.prior } else { 1.0 - noise.prior };
        ls.iter().fold(p, |acc, &l| acc * noise.confusion[z][l as usize])
    };
    let mut total = 0.0;
    let mut blind = vec![0.0; n];
    for mask in 0..(1usize << n) {
        let joint: f64 = (0..n).map(|i| lik((mask >> i) & 1, &labels[i])).product();
        total += joint;
        for (i, b) in blind.iter_mut().enumerate() {
            if (mask >> i) & 1 == 1 {
                *b += joint;
            }
        }
    }
    blind.into_iter().map(|b| b / total).collect()
}

fn criterion_2() -> Result<(bool, String)> {
    let mut rng = seed::rng(2);
    let mut worst_err: f64 = 0.0;
    let mut worst_drop: f64 = 0.0;
    let mut constrained_bad = 0;
    let mut datasets = 0;
    for i in 0..40 {
        let variant = if i % 2 == 0 { DsVariant::Original } else { DsVariant::Constrained };
        let prior = rng.gen_range(0.1..0.9);
        let e01 = if variant == DsVariant::Constrained { 0.0 } else { rng.gen_range(0.0..0.4) };
        let e11 = rng.gen_range(0.5..1.0);
        let n = rng.gen_range(2..=8);
        let mut labels: BTreeMap<usize, Vec<u8>> = BTreeMap::new();
        for s in 0..n {
            let z = rng.gen_bool(prior);
            let k = rng.gen_range(1..=6);
            let p1 = if z { e11 } else { e01 };
            labels.insert(s, (0..k).map(|_| u8::from(rng.gen_bool(p1))).collect());
        }
        let d = aggregate::dawid_skene(&labels, variant, &DsConfig::default())?;
        let diag = d.diagnostics.as_ref().context("DS diagnostics")?;
        let lists: Vec<Vec<u8>> = labels.values().cloned().collect();
        let exact = exact_posteriors(&diag.noise, &lists);
        for ((s, e), x) in d.entries.iter().zip(&exact) {
            worst_err = worst_err.max((e.posterior - x).abs());
            if variant == DsVariant::Constrained && labels[s].contains(&1) && !(e.label == 1 && e.confidence == 1.0) {
                constrained_bad += 1;
            }
        }
        for w in diag.objective.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        datasets += 1;
    }
    let pass = worst_err <= 1e-6 && worst_drop <= 0.0 && constrained_bad == 0;
    Ok((
        pass,
        format!(
            "{datasets} datasets, max posterior error {worst_err:.2e}, max objective drop {worst_drop:.2e}, \
             constrained violations {constrained_bad}"
        ),
    ))
}

// ---------------------------------------------------------- experiment cells

#[derive(Debug, Clone)]
struct ModelRecord {
    seen_f1: f64,
    gap: Option<f64>,
    oil: Option<(f64, f64)>,
}

#[derive(Debug, Default)]
struct Runs {
    models: BTreeMap<(OracleKind, Protocol, usize, u64, AggregatorKind), ModelRecord>,
    never: BTreeMap<u64, f64>,
    always: BTreeMap<u64, f64>,
    /// Blind-spot labels on truth-safe states, per protocol.
    false_positives: BTreeMap<Protocol, (usize, usize)>,
    errors: Vec<String>,
    secs: BTreeMap<&'static str, f64>,
}

impl Runs {
    fn f1s(&self, o: OracleKind, p: Protocol, b: usize, a: AggregatorKind) -> Vec<f64> {
        self.models.iter().filter(|(k, _)| (k.0, k.1, k.2, k.4) == (o, p, b, a)).map(|(_, m)| m.seen_f1).collect()
    }

    fn oil(&self, o: OracleKind, a: AggregatorKind) -> Vec<(f64, f64)> {
        self.models
            .iter()
            .filter(|(k, _)| (k.0, k.1, k.2, k.4) == (o, Protocol::Corrections, LARGEST, a))
            .filter_map(|(_, m)| m.oil)
            .collect()
    }
}

fn run_group<E: Environment + Sync>(
    p: &Prepared<E>,
    reps: &[Replicate<E>],
    cfg: &ExperimentConfig,
    cells: &[(OracleKind, Protocol, usize)],
    runs: &mut Runs,
) -> Result<()> {
    let mut quiet = cfg.clone();
    quiet.eval.oil_episodes = 0;
    for &(oracle, protocol, budget) in cells {
        for rep in reps {
            let key = CellKey { oracle, protocol, budget, seed: rep.seed };
            let c = if protocol == Protocol::Corrections { cfg } else { &quiet };
            let cell = run_cell(p, rep, c, key)?;
            if !protocol.has_action_mismatch_noise() {
                let truth = &p.setup(oracle)?.truth;
                let entry = runs.false_positives.entry(protocol).or_default();
                for e in cell.feedback.events().iter().filter(|e| e.label == 1) {
                    entry.1 += 1;
                    if truth.is_blind_spot(&e.sim) != Some(true) {
                        entry.0 += 1;
                    }
                }
            }
            for (kind, r) in cell.results {
                match r {
                    Ok(r) => {
                        let rec = ModelRecord {
                            seen_f1: r.seen_f1,
                            gap: r.calibration.map(|c| c.instance_gap()),
                            oil: r.oil.map(|o| (o.mean_reward, o.query_rate)),
                        };
                        runs.models.insert((oracle, protocol, budget, rep.seed, kind), rec);
                    }
                    Err(e) => runs.errors.push(format!("{} {}: {e}", key.label(), kind.name())),
                }
            }
        }
    }
    Ok(())
}

fn replicates<E: Environment + Sync>(p: &Prepared<E>, cfg: &ExperimentConfig, runs: &mut Runs) -> Result<Vec<Replicate<E>>> {
    let reps = cfg.seeds.iter().map(|&s| Replicate::new(p, cfg, s)).collect::<Result<Vec<_>>>()?;
    for r in &reps {
        runs.never.insert(r.seed, r.never.as_ref().context("no never-query run")?.mean_reward);
        runs.always.insert(r.seed, r.always.as_ref().context("no always-query run")?.mean_reward);
    }
    Ok(reps)
}

fn catcher_runs() -> Result<Runs> {
    use OracleKind::{Lenient, Strict};
    use Protocol::*;
    let cfg = config("catcher.toml")?;
    let mut runs = Runs::default();
    let t = Instant::now();
    let p = Prepared::new(catcher_pair(&cfg)?, &cfg, &[Strict, Lenient])?;
    let reps = replicates(&p, &cfg, &mut runs)?;
    runs.secs.insert("setup", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let budget_sweep: Vec<_> = BUDGETS.iter().map(|&b| (Strict, RandomActionMismatch, b)).collect();
    run_group(&p, &reps, &cfg, &budget_sweep, &mut runs)?;
    runs.secs.insert("budget sweep", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let rest = [
        (Strict, RandomAcceptable, LARGEST),
        (Strict, DemoAcceptable, LARGEST),
        (Strict, DemoActionMismatch, LARGEST),
        (Lenient, RandomAcceptable, LARGEST),
        (Lenient, RandomActionMismatch, LARGEST),
    ];
    run_group(&p, &reps, &cfg, &rest, &mut runs)?;
    runs.secs.insert("largest budget", t.elapsed().as_secs_f64());

    let t = Instant::now();
    run_group(&p, &reps, &cfg, &[(Strict, Corrections, LARGEST), (Lenient, Corrections, LARGEST)], &mut runs)?;
    runs.secs.insert("corrections", t.elapsed().as_secs_f64() + runs.secs["setup"]);
    Ok(runs)
}

fn flappy_runs() -> Result<Runs> {
    use OracleKind::{Lenient, Strict};
    let cfg = config("flappybird.toml")?;
    let mut runs = Runs::default();
    let t = Instant::now();
    let p = Prepared::new(flappy_pair(&cfg)?, &cfg, &[Strict, Lenient])?;
    let reps = replicates(&p, &cfg, &mut runs)?;
    let cells = [(Strict, Protocol::Corrections, LARGEST), (Lenient, Protocol::Corrections, LARGEST)];
    run_group(&p, &reps, &cfg, &cells, &mut runs)?;
    runs.secs.insert("corrections", t.elapsed().as_secs_f64());
    Ok(runs)
}

// ------------------------------------------------------------ criteria 3 - 9

fn criterion_3(r: &Runs) -> (bool, String) {
    use AggregatorKind::{Al, Ds, Mv};
    let mut pass = r.secs["budget sweep"] < 600.0;
    let mut parts = Vec::new();
    for b in BUDGETS {
        let f = |a| mean(&r.f1s(OracleKind::Strict, Protocol::RandomActionMismatch, b, a));
        let (ds, mv, al) = (f(Ds), f(Mv), f(Al));
        pass &= ds >= mv && ds >= al;
        if b == LARGEST {
            pass &= ds - al >= 0.05;
        }
        parts.push(format!("{b}: ds {ds:.3} mv {mv:.3} al {al:.3}"));
    }
    parts.push(format!("{:.0}s", r.secs["budget sweep"]));
    (pass, parts.join("; "))
}

fn criterion_4(r: &Runs) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [Protocol::RandomAcceptable, Protocol::RandomActionMismatch] {
        let strict = mean(&r.f1s(OracleKind::Strict, p, LARGEST, AggregatorKind::Ds));
        let lenient = mean(&r.f1s(OracleKind::Lenient, p, LARGEST, AggregatorKind::Ds));
        pass &= strict > lenient;
        if p == Protocol::RandomAcceptable {
            pass &= strict >= 0.90;
        }
        parts.push(format!("{}: strict {strict:.4} lenient {lenient:.4}", p.code()));
    }
    (pass, parts.join("; "))
}

fn criterion_5(r: &Runs) -> (bool, String) {
    let f = |p| mean(&r.f1s(OracleKind::Strict, p, LARGEST, AggregatorKind::Ds));
    let random = [Protocol::RandomAcceptable, Protocol::RandomActionMismatch];
    let correlated = [Protocol::DemoAcceptable, Protocol::DemoActionMismatch, Protocol::Corrections];
    let pass = random.iter().all(|&a| correlated.iter().all(|&b| f(a) > f(b)));
    let parts: Vec<_> = random.iter().chain(&correlated).map(|&p| format!("{} {:.3}", p.code(), f(p))).collect();
    (pass, parts.join(", "))
}

fn criterion_6(domains: &[(&str, &Runs)]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, r) in domains {
        let nq = mean(&r.never.values().copied().collect::<Vec<_>>());
        let aq = mean(&r.always.values().copied().collect::<Vec<_>>());
        pass &= r.secs["corrections"] < 900.0 && r.never.len() >= 5;
        let mut line = format!("{name} AQ {aq:.2} NQ {nq:.2}");
        for o in [OracleKind::Strict, OracleKind::Lenient] {
            let oil = r.oil(o, AggregatorKind::Ds);
            let reward = mean(&oil.iter().map(|x| x.0).collect::<Vec<_>>());
            let q = mean(&oil.iter().map(|x| x.1).collect::<Vec<_>>());
            pass &= oil.len() >= 5 && aq > reward && reward > nq && q <= 0.5;
            line += &format!(" {} model {reward:.2} q {:.1}%", o.name(), 100.0 * q);
        }
        parts.push(format!("{line} ({:.0}s)", r.secs["corrections"]));
    }
    (pass, parts.join("; "))
}

fn criterion_7() -> Result<(bool, String)> {
    fn check<E: Environment>(p: &Prepared<E>, seeds: &[u64]) -> Result<(usize, usize)> {
        let setup = p.setup(OracleKind::Strict)?;
        let c = Collector::new(&p.pair.target, &setup.oracle, &p.pi_sim);
        let (mut same, mut total) = (0, 0);
        for &s in seeds {
            for b in [500, 4000] {
                for (x, y) in [
                    (Protocol::RandomActionMismatch, Protocol::RandomAcceptable),
                    (Protocol::DemoActionMismatch, Protocol::DemoAcceptable),
                ] {
                    let seed = seed::derive(s, b as u64);
                    let (dx, dy) = (c.collect(x, b, seed)?, c.collect(y, b, seed)?);
                    total += 1;
                    same += usize::from(dx.events() == dy.events() && dx.labels() == dy.labels());
                }
            }
        }
        Ok((same, total))
    }
    let seeds = [0, 1, 2, 3, 4];
    let cfg = config("catcher.toml")?;
    let a = check(&Prepared::new(catcher_pair(&cfg)?, &cfg, &[OracleKind::Strict])?, &seeds)?;
    let cfg = config("flappybird.toml")?;
    let b = check(&Prepared::new(flappy_pair(&cfg)?, &cfg, &[OracleKind::Strict])?, &seeds)?;
    Ok((a.0 == a.1 && b.0 == b.1, format!("catcher {}/{} identical, flappybird {}/{} identical", a.0, a.1, b.0, b.1)))
}

fn criterion_8(domains: &[(&str, &Runs)]) -> (bool, String) {
    // aggregator -> (over, checked, worst gap)
    let mut per: BTreeMap<AggregatorKind, (usize, usize, f64)> = BTreeMap::new();
    let mut uncalibrated = 0;
    for (_, r) in domains {
        for (k, m) in &r.models {
            match m.gap {
                Some(g) => {
                    let e = per.entry(k.4).or_default();
                    e.0 += usize::from(g > 1.0 + 1e-9);
                    e.1 += 1;
                    e.2 = e.2.max(g);
                }
                None => uncalibrated += 1,
            }
        }
    }
    let pass = per.values().all(|e| e.0 == 0);
    let parts: Vec<_> = per.iter().map(|(a, e)| format!("{} {}/{} off (max gap {:.2})", a.name(), e.0, e.1, e.2)).collect();
    (pass, format!("{}; {uncalibrated} single-class models skipped", parts.join(", ")))
}

fn criterion_9(domains: &[(&str, &Runs)]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, r) in domains {
        for (p, (fp, ones)) in &r.false_positives {
            pass &= *fp == 0;
            parts.push(format!("{name} {}: {fp} of {ones}", p.code()));
        }
    }
    (pass, parts.join(", "))
}

// --------------------------------------------------------------- criterion 10

fn criterion_10() -> Result<(bool, String)> {
    let mut cfg = config("catcher.toml")?;
    cfg.seeds = vec![0, 1];
    cfg.budgets = vec![500, 2000];
    cfg.model.n_trials = 5;
    cfg.eval.oil_episodes = 20;
    let dir = tempfile::tempdir()?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    sweep::run_sweep(&cfg, &a)?;
    sweep::run_sweep(&cfg, &b)?;
    let mut identical = 0;
    let files = ["report.csv", "noise.csv", "tables/truth_strict.csv", "tables/truth_lenient.csv"];
    for f in files {
        identical += usize::from(std::fs::read(a.join(f))? == std::fs::read(b.join(f))?);
    }
    let rows = std::fs::read_to_string(a.join("report.csv"))?.lines().count() - 1;
    Ok((identical == files.len(), format!("{identical}/{} files identical, {rows} report rows", files.len())))
}

// ----------------------------------------------------------------------- main

fn main() {
    let mut verdicts: Vec<Verdict> = Vec::new();
    let mut record = |id: usize, t: Instant, r: Result<(bool, String)>| {
        let (pass, detail) = r.unwrap_or_else(|e| (false, format!("error: {e:#}")));
        let v = Verdict { id, pass, detail, secs: t.elapsed().as_secs_f64() };
        println!("criterion {:>2}: {} {} [{:.1}s]", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail, v.secs);
        verdicts.push(v);
    };
    let t = Instant::now();
    record(1, t, criterion_1());
    let t = Instant::now();
    record(2, t, criterion_2());

    let t = Instant::now();
    let catcher = catcher_runs();
    let catcher_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let flappy = flappy_runs();
    let flappy_secs = t.elapsed().as_secs_f64();
    println!("experiment runs: catcher {catcher_secs:.0}s, flappybird {flappy_secs:.0}s");
    match (&catcher, &flappy) {
        (Ok(c), Ok(f)) => {
            for e in c.errors.iter().chain(&f.errors) {
                println!("  failed model: {e}");
            }
            let both = [("catcher", c), ("flappybird", f)];
            let clean = c.errors.is_empty() && f.errors.is_empty();
            let with_errors = |(pass, detail): (bool, String)| -> Result<(bool, String)> { Ok((pass && clean, detail)) };
            record(3, Instant::now(), with_errors(criterion_3(c)));
            record(4, Instant::now(), with_errors(criterion_4(c)));
            record(5, Instant::now(), with_errors(criterion_5(c)));
            record(6, Instant::now(), with_errors(criterion_6(&both)));
            record(7, Instant::now(), criterion_7());
            record(8, Instant::now(), with_errors(criterion_8(&both)));
            record(9, Instant::now(), with_errors(criterion_9(&both)));
        }
        _ => {
            let msg = [catcher.as_ref().err(), flappy.as_ref().err()]
                .into_iter()
                .flatten()
                .map(|e| format!("{e:#}"))
                .collect::<Vec<_>>()
                .join("; ");
            for id in [3, 4, 5, 6, 8, 9] {
                record(id, Instant::now(), Err(anyhow::anyhow!("experiment run failed: {msg}")));
            }
            record(7, Instant::now(), criterion_7());
        }
    }
    let t = Instant::now();
    record(10, t, criterion_10());

    verdicts.sort_by_key(|v| v.id);
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} criteria pass", verdicts.len());
    if passed < verdicts.len() && std::env::var_os("BLINDSPOT_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
