use super::*;
use alloc::vec;
use proptest::prelude::*;

fn inst(features: Vec<f64>, label: Label, origin: usize) -> Instance {
    Instance::new(features, label, 1.0, origin)
}

fn imbalanced(safe: usize, blind: usize) -> TrainingSet {
    let rows = (0..safe + blind).map(|i| inst(vec![i as f64], u8::from(i >= safe), i)).collect();
    TrainingSet::new(1, rows).unwrap()
}

fn xor_set() -> TrainingSet {
    let mut rows = Vec::new();
    for x in 0..8 {
        for y in 0..8 {
            for _ in 0..2 {
                let label = u8::from((x < 4) != (y < 4));
                rows.push(inst(vec![x as f64, y as f64], label, rows.len()));
            }
        }
    }
    TrainingSet::new(2, rows).unwrap()
}

#[test]
fn oversampling_balances_classes() {
    let out = oversample(&imbalanced(90, 10), 1).unwrap();
    assert!(!out.degenerate);
    assert_eq!(out.set.class_counts(), (90, 90));
    for x in &out.set.instances()[100..] {
        assert_eq!(x.label, BLIND_SPOT);
        assert!(x.origin >= 90);
    }
    let balanced = imbalanced(50, 50);
    assert_eq!(oversample(&balanced, 1).unwrap().set, balanced);
    let single = imbalanced(5, 0);
    let out = oversample(&single, 1).unwrap();
    assert!(out.degenerate);
    assert_eq!(out.set, single);
    assert!(oversample(&imbalanced(0, 0), 1).is_err());
}

#[test]
fn training_set_rejects_bad_instances() {
    assert!(TrainingSet::new(2, vec![inst(vec![1.0], 0, 0)]).is_err());
    assert!(TrainingSet::new(1, vec![inst(vec![f64::NAN], 0, 0)]).is_err());
    assert!(TrainingSet::new(1, vec![Instance::new(vec![1.0], 0, 0.0, 0)]).is_err());
    assert!(TrainingSet::new(1, vec![inst(vec![1.0], 2, 0)]).is_err());
}

#[test]
fn folds_are_stratified_partitions() {
    let ts = imbalanced(31, 8);
    let folds = stratified_folds(&ts, 3, 4);
    let mut all: Vec<usize> = folds.concat();
    all.sort_unstable();
    assert_eq!(all, (0..39).collect::<Vec<_>>());
    for f in &folds {
        let ones = f.iter().filter(|&&i| ts.instances()[i].label == 1).count();
        assert!((2..=3).contains(&ones));
    }
}

#[test]
fn calibration_split_is_stratified_and_disjoint() {
    let ts = imbalanced(70, 30);
    let (train, calib) = calibration_split(&ts, 0.3, 2).unwrap();
    assert_eq!(calib.class_counts(), (21, 9));
    assert_eq!(train.class_counts(), (49, 21));
    let train_origins: Vec<usize> = train.instances().iter().map(|x| x.origin).collect();
    assert!(calib.instances().iter().all(|x| !train_origins.contains(&x.origin)));
}

#[test]
fn validation_and_calibration_data_never_see_duplicates() {
    // origins are unique in the input, so any repeated origin is an oversampling copy
    let ts = imbalanced(60, 9);
    let (train, calib) = calibration_split(&ts, 0.3, 7).unwrap();
    let mut origins: Vec<usize> = calib.instances().iter().map(|x| x.origin).collect();
    origins.sort_unstable();
    origins.dedup();
    assert_eq!(origins.len(), calib.len());
    let balanced = oversample(&train, 1).unwrap().set;
    assert!(balanced.instances().iter().all(|x| calib.instances().iter().all(|c| c.origin != x.origin)));
    for (k, valid) in stratified_folds(&train, 3, 5).iter().enumerate() {
        let rest: Vec<usize> = (0..train.len()).filter(|i| !valid.contains(i)).collect();
        let fold_train = oversample(&train.subset(&rest), k as u64).unwrap().set;
        for i in valid {
            let o = train.instances()[*i].origin;
            assert!(fold_train.instances().iter().all(|x| x.origin != o));
        }
    }
}

#[test]
fn f1_zero_division_is_zero() {
    assert_eq!(f1_score(&[false, false], &[false, false]), 0.0);
    assert_eq!(f1_score(&[true, false], &[true, true]), 2.0 / 3.0);
}

#[test]
fn single_trial_search_returns_its_config() {
    let cfg = SearchConfig { n_trials: 1, ..Default::default() };
    let ts = xor_set();
    let out = hyperparameter_search(&ts, &cfg, 3).unwrap();
    let mut rng = seed::rng(seed::derive(3, seed::tag("configs")));
    assert_eq!(out.best, cfg.space.sample(2, &mut rng));
    assert_eq!(out.trials.len(), 1);
    assert_eq!(hyperparameter_search(&ts, &cfg, 3).unwrap(), out);
    assert!(hyperparameter_search(&ts, &SearchConfig { n_trials: 0, ..cfg }, 3).is_err());
}

#[test]
fn search_prefers_depth_when_it_is_required() {
    let cfg = SearchConfig {
        space: SearchSpace { n_trees: vec![5], max_depth: vec![Some(1), Some(4)], min_samples_leaf: vec![1], max_features: vec![2] },
        n_trials: 8,
        folds: 3,
    };
    let out = hyperparameter_search(&xor_set(), &cfg, 0).unwrap();
    assert!(out.trials.iter().any(|(p, _)| p.max_depth == Some(1)));
    assert_eq!(out.best.max_depth, Some(4));
    assert!(out.best_score > 0.9);
}

#[test]
fn calibration_examples() {
    let probs = [0.9, 0.8, 0.1, 0.05];
    let c = calibrate_threshold(&probs, 0.5).unwrap();
    assert!(c.threshold > 0.1 && c.threshold <= 0.8);
    assert_eq!(c.predicted_fraction(), 0.5);
    let none = calibrate_threshold(&probs, 0.0).unwrap();
    assert_eq!((none.threshold, none.predicted_positive), (1.0, 0));
    let all = calibrate_threshold(&probs, 1.0).unwrap();
    assert_eq!((all.threshold, all.predicted_positive), (0.05, 4));
    assert!(calibrate_threshold(&[], 0.5).is_err());
    assert!(calibrate_threshold(&probs, 1.5).is_err());
}

#[test]
fn all_safe_target_prefers_largest_threshold() {
    let c = calibrate_threshold(&[0.0, 0.0, 0.0], 1.0).unwrap();
    assert_eq!(c.threshold, 0.0);
    let c = calibrate_threshold(&[0.0, 0.2], 0.0).unwrap();
    assert_eq!(c.threshold, 1.0);
}

#[test]
fn degenerate_input_gives_constant_model() {
    let ts = imbalanced(0, 4);
    let m = train_model(&ts, &["x"], &TrainConfig::default(), 0).unwrap();
    assert!(m.model.degenerate);
    assert_eq!(m.model.threshold, 0.5);
    let p = m.model.predict(&[123.0]).unwrap();
    assert_eq!(p, Prediction { probability: 1.0, blind_spot: true });
    let safe = train_model(&imbalanced(3, 0), &["x"], &TrainConfig::default(), 0).unwrap();
    assert!(!safe.model.predict(&[0.0]).unwrap().blind_spot);
}

#[test]
fn train_model_is_deterministic_and_calibrated() {
    let cfg = TrainConfig { search: SearchConfig { n_trials: 4, ..Default::default() }, ..Default::default() };
    let mut rows = Vec::new();
    for x in 0..12 {
        for y in 0..12 {
            rows.push(inst(vec![x as f64, y as f64], u8::from(x >= 9 && y >= 5), rows.len()));
        }
    }
    let ts = TrainingSet::new(2, rows).unwrap();
    let a = train_model(&ts, &["x", "y"], &cfg, 8).unwrap();
    assert_eq!(a, train_model(&ts, &["x", "y"], &cfg, 8).unwrap());
    let cal = a.report.calibration.unwrap();
    assert!(cal.instance_gap() <= 1.0, "{cal:?}");
    let correct = ts.instances().iter().filter(|x| a.model.predict(&x.features).unwrap().blind_spot == (x.label == 1)).count();
    assert!(correct as f64 >= 0.97 * ts.len() as f64, "{correct}");
    assert!(train_model(&ts, &["x"], &cfg, 8).is_err());
    assert!(a.model.predict(&[1.0]).is_err());
}

proptest! {
    #[test]
    fn oversampled_sets_are_balanced(safe in 1usize..40, blind in 1usize..40, seed in any::<u64>()) {
        let out = oversample(&imbalanced(safe, blind), seed).unwrap().set;
        let (z, o) = out.class_counts();
        prop_assert_eq!(z, o);
        prop_assert_eq!(out.len(), 2 * safe.max(blind));
    }

    #[test]
    fn raising_the_threshold_never_adds_positives(
        probs in prop::collection::vec(0.0f64..=1.0, 1..50),
        t1 in 0.0f64..=1.0,
        t2 in 0.0f64..=1.0,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let count = |t: f64| probs.iter().filter(|&&p| p >= t).count();
        prop_assert!(count(hi) <= count(lo));
    }

    #[test]
    fn calibration_gap_is_within_one_instance_for_distinct_probabilities(
        raw in prop::collection::btree_set(0u32..1000, 1..60),
        target in 0.0f64..=1.0,
    ) {
        let probs: Vec<f64> = raw.into_iter().map(|p| p as f64 / 1000.0).collect();
        let c = calibrate_threshold(&probs, target).unwrap();
        prop_assert!(c.instance_gap() <= 0.5 + 1e-9);
        let expected = probs.iter().filter(|&&p| p >= c.threshold).count();
        prop_assert_eq!(expected, c.predicted_positive);
    }
}
