use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blindspot::config::ExperimentConfig;
use blindspot::report;
use blindspot::sweep;

const SMALL: &str = r#"
seeds = [0, 1]
budgets = [200, 400, 800]
protocols = ["R-A", "D-AM"]
aggregators = ["ds", "mv"]
oracles = ["strict"]

[model]
n_trials = 2
n_trees = [10]

[eval]
importance_rollouts = 50
oil_episodes = 5

[catcher]
width = 5
height = 5
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_blindspot"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    run(&["sweep", "--config", cfg, "--out", "a"], dir.path());
    run(&["sweep", "--config", cfg, "--out", "b"], dir.path());
    for f in ["report.csv", "noise.csv", "heatmaps/strict_D-AM_400_1.csv", "tables/truth_strict.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    // re-running into the same directory is idempotent
    let before = std::fs::read(dir.path().join("a/report.csv")).unwrap();
    run(&["sweep", "--config", cfg, "--out", "a"], dir.path());
    assert_eq!(std::fs::read(dir.path().join("a/report.csv")).unwrap(), before);
}

#[test]
fn sweep_rows_follow_the_grid() {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = sweep::run_sweep(&cfg, dir.path()).unwrap();
    assert!(outcome.failed.is_empty(), "{:?}", outcome.failed);
    let mut written = Vec::new();
    report::write_report(&mut written, &outcome.rows).unwrap();
    assert_eq!(written, std::fs::read(dir.path().join("report.csv")).unwrap());
    let rows = report::load_report(&dir.path().join("report.csv")).unwrap();
    assert_eq!(rows.len(), outcome.rows.len());
    let model_rows: Vec<_> = rows.iter().filter(|r| r.condition == "model").collect();
    // 2 protocols x 3 budgets x 2 seeds x 2 aggregators
    assert_eq!(model_rows.len(), 24);
    for p in ["R-A", "D-AM"] {
        for seed in [0, 1] {
            let n = model_rows.iter().filter(|r| r.protocol == p && r.seed == seed && r.aggregator == "ds").count();
            assert_eq!(n, 3, "{p} seed {seed}");
        }
    }
    // one never-query and one always-query row per seed
    assert_eq!(rows.iter().filter(|r| r.condition == "never-query").count(), 2);
    assert!(rows.iter().filter(|r| r.condition == "always-query").all(|r| r.query_rate == Some(1.0)));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["cells"], 12);
    assert_eq!(manifest["failed"].as_array().unwrap().len(), 0);
    // the resolved config reproduces the run
    let written = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(written.hash(), cfg.hash());
}

#[test]
fn verbs_reproduce_a_sweep_cell() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    run(&["sweep", "--config", cfg, "--out", "sweep"], dir.path());
    run(&["train", "--config", cfg, "--out", "step"], dir.path());
    run(
        &[
            "collect", "--config", cfg, "--tables", "step/tables", "--protocol", "D-AM", "--budget", "400", "--seed", "1", "--out",
            "step/fb.csv",
        ],
        dir.path(),
    );
    run(&["aggregate", "--config", cfg, "--input", "step/fb.csv", "--aggregator", "mv", "--out", "step/agg.csv"], dir.path());
    run(&["fit", "--config", cfg, "--input", "step/agg.csv", "--out", "step/model.json"], dir.path());
    run(
        &[
            "evaluate", "--config", cfg, "--tables", "step/tables", "--model", "step/model.json", "--feedback", "step/fb.csv",
            "--seed", "1", "--aggregator", "mv", "--out", "step/eval.csv",
        ],
        dir.path(),
    );
    let sweep_rows = report::load_report(&dir.path().join("sweep/report.csv")).unwrap();
    let expected = sweep_rows
        .iter()
        .find(|r| r.protocol == "D-AM" && r.budget == Some(400) && r.seed == 1 && r.aggregator == "mv")
        .unwrap();
    let got = &report::load_report(&dir.path().join("step/eval.csv")).unwrap()[0];
    // the model file does not carry calibration diagnostics
    assert_eq!(got.calibration_gap, None);
    let mut got = got.clone();
    got.calibration_gap = expected.calibration_gap;
    assert_eq!(&got, expected);
}

#[test]
fn report_verb_writes_summaries() {
    let (dir, cfg) = setup();
    let cfg = cfg.to_str().unwrap();
    run(&["sweep", "--config", cfg, "--out", "s"], dir.path());
    let out = run(&["report", "--config", cfg, "--out", "s"], dir.path());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("domain,oracle,protocol,aggregator,budget,seeds,seen_f1_mean"));
    let oil = std::fs::read_to_string(dir.path().join("s/summary_oil.csv")).unwrap();
    let aq = oil.lines().find(|l| l.contains("always-query")).unwrap();
    assert!(aq.ends_with(",100.000000,0.000000"), "{aq}");
    let classifier = std::fs::read_to_string(dir.path().join("s/summary_classifier.csv")).unwrap();
    // 2 protocols x 2 aggregators x 3 budgets plus header
    assert_eq!(classifier.lines().count(), 13);
}

#[test]
fn invalid_config_exits_nonzero_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    for (text, field) in [
        ("aggregators = [\"dss\"]", "aggregators"),
        ("[model]\nfolds = 1", "model.folds"),
        ("seeds = []", "seeds"),
        ("[catcher]\nwidth = 1", "catcher"),
    ] {
        let p = dir.path().join("bad.toml");
        std::fs::write(&p, text).unwrap();
        let out = bin().args(["sweep", "--config", p.to_str().unwrap(), "--out"]).arg(dir.path().join("o")).output().unwrap();
        assert!(!out.status.success(), "{text}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains(field), "{text}: {err}");
        assert!(!dir.path().join("o").exists(), "no compute before validation");
    }
    let out = bin().args(["collect", "--protocol", "X", "--budget", "5"]).output().unwrap();
    assert!(!out.status.success());
}
