mod common;

use std::fs;

use common::*;
use linkfed_core::harness::{emit_reports, run_experiment, run_on_dataset, stratified_folds};
use linkfed_core::{ErStrategy, Error, ExperimentConfig, Learner, LossKind, RunReport};

fn small_config() -> ExperimentConfig {
    ExperimentConfig { shared: vec![0], folds: 3, iters: 50, seed: 4, ..Default::default() }
}

#[test]
fn fold_assignment_is_stratified_and_complete() {
    let ds = random_dataset(&mut rng(1), 3, 53);
    let assign = stratified_folds(&ds, 5, 9);
    for f in 0..5 {
        let size = assign.iter().filter(|&&a| a == f).count();
        assert!((10..=11).contains(&size));
        let pos = (0..53).filter(|&i| assign[i] == f && ds.labels()[i].is_positive()).count();
        let want = ds.count_positive() as f64 / 5.0;
        assert!((pos as f64 - want).abs() <= 1.0);
    }
}

#[test]
fn one_report_per_fold() {
    let ds = random_dataset(&mut rng(2), 4, 60);
    let rep = run_on_dataset(&small_config(), &ds).unwrap();
    assert_eq!(rep.folds.len(), 3);
    assert_eq!(rep.folds.iter().map(|f| f.test_size).sum::<usize>(), 60);
    for f in &rep.folds {
        assert_eq!(f.train_size + f.test_size, 60);
        assert!(f.partition.anchor.contains(&0));
    }
}

#[test]
fn ideal_and_greedy_agree_without_noise() {
    let ds = random_dataset(&mut rng(3), 4, 60);
    for learner in [Learner::Taylor, Learner::Boost] {
        let base = ExperimentConfig { learner, shared: vec![0, 1], ..small_config() };
        let greedy = run_on_dataset(&ExperimentConfig { er: ErStrategy::Greedy, ..base.clone() }, &ds).unwrap();
        let ideal = run_on_dataset(&ExperimentConfig { er: ErStrategy::Ideal, ..base }, &ds).unwrap();
        assert_eq!(greedy.mean_test_error, ideal.mean_test_error);
        assert_eq!(greedy.mean_class_mismatch_rate, 0.0);
        assert_eq!(greedy.margin_curve, ideal.margin_curve);
    }
}

#[test]
fn reruns_are_identical_and_seeds_matter() {
    let ds = random_dataset(&mut rng(4), 4, 60);
    let cfg = ExperimentConfig { noise_p: 0.4, bound_audit: true, learner: Learner::Taylor, ..small_config() };
    let a = run_on_dataset(&cfg, &ds).unwrap();
    let b = run_on_dataset(&cfg, &ds).unwrap();
    assert_eq!(a, b);
    let c = run_on_dataset(&ExperimentConfig { seed: 5, ..cfg }, &ds).unwrap();
    assert_ne!(a.folds, c.folds);
}

#[test]
fn reports_round_trip_and_files_are_written() {
    let ds = random_dataset(&mut rng(5), 4, 45);
    let cfg = ExperimentConfig { bound_audit: true, learner: Learner::Taylor, loss: LossKind::Square, ..small_config() };
    let rep = run_on_dataset(&cfg, &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_reports(&rep, dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["report.json", "margins.csv", "bounds.json"]);
    let back: RunReport = serde_json::from_str(&fs::read_to_string(&files[0]).unwrap()).unwrap();
    assert_eq!(back, rep);
    let csv = fs::read_to_string(&files[1]).unwrap();
    assert_eq!(csv.lines().count(), rep.margin_curve.len() + 1);
    let bounds: serde_json::Value = serde_json::from_str(&fs::read_to_string(&files[2]).unwrap()).unwrap();
    assert_eq!(bounds.as_array().unwrap().len(), 3);
}

#[test]
fn margins_file_keeps_header_without_bounds() {
    let ds = random_dataset(&mut rng(6), 3, 30);
    let mut rep = run_on_dataset(&small_config(), &ds).unwrap();
    rep.margin_curve.clear();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_reports(&rep, dir.path()).unwrap();
    assert_eq!(files.len(), 2);
    assert_eq!(fs::read_to_string(dir.path().join("margins.csv")).unwrap(), "margin,cumulative_error\n");
}

#[test]
fn config_errors_are_not_data_errors() {
    let ds = random_dataset(&mut rng(7), 3, 30);
    let bad = ExperimentConfig { folds: 1, ..small_config() };
    let err = run_on_dataset(&bad, &ds).unwrap_err();
    assert!(matches!(err, Error::Config(_)) && !err.is_data_error());
    let bad = ExperimentConfig { shared: vec![7], ..small_config() };
    assert!(run_on_dataset(&bad, &ds).is_err());
    let bad = ExperimentConfig { peer_b_unlabeled: true, er: ErStrategy::PerClass, ..small_config() };
    assert!(run_on_dataset(&bad, &ds).is_err());
    let missing = ExperimentConfig { data: "/nonexistent.csv".into(), label_col: "y".into(), ..small_config() };
    assert!(run_experiment(&missing).unwrap_err().is_data_error());
}
