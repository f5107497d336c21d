mod common;

use common::*;
use linkfed_core::dataset::{vertical_split, PartitionSpec, PeerLabels};
use linkfed_core::er::{
    greedy_er, greedy_er_learned_classes, greedy_er_noisy_classes, greedy_er_per_class, ideal_er, run_strategy,
};
use linkfed_core::nalgebra::DMatrix;
use linkfed_core::{ErStrategy, Error, Label, LabeledDataset, VerticalSplit};
use proptest::prelude::*;
use rand::Rng;

fn split(ds: &LabeledDataset, shared: Vec<usize>, labels: PeerLabels, seed: u64) -> VerticalSplit {
    let d = ds.dim();
    let spec = PartitionSpec { anchor: (0..d / 2).collect(), shuffle: (d / 2..d).collect(), shared, labels_on_peer_b: labels };
    let mut s = vertical_split(ds, &spec).unwrap();
    s.shuffle_peer_b(seed);
    s
}

fn is_identity(pi: &[usize]) -> bool {
    pi.iter().enumerate().all(|(i, &p)| i == p)
}

fn is_bijection(pi: &[usize]) -> bool {
    let mut seen = vec![false; pi.len()];
    pi.iter().all(|&p| p < pi.len() && !std::mem::replace(&mut seen[p], true))
}

#[test]
fn clean_distinct_shared_vectors_recover_the_alignment() {
    for seed in 0..10 {
        let ds = random_dataset(&mut rng(seed), 4, 20);
        let s = split(&ds, vec![0, 2], PeerLabels::Clean, seed);
        for strategy in [ErStrategy::Greedy, ErStrategy::PerClass, ErStrategy::Ideal] {
            let out = run_strategy(&s, strategy, 0).unwrap();
            assert!(is_identity(&out.induced_permutation), "{strategy}");
            assert_eq!(out.class_mismatch_rate, 0.0);
            assert_eq!(&out.dataset, s.ideal());
        }
    }
}

#[test]
fn identical_shared_vectors_still_give_a_bijection() {
    let mut ds = random_dataset(&mut rng(3), 3, 12);
    let mut x = ds.features().clone();
    x.row_mut(0).fill(1.0);
    ds = LabeledDataset::from_parts(x, ds.labels().to_vec()).unwrap();
    let s = split(&ds, vec![0], PeerLabels::Clean, 4);
    let out = run_strategy(&s, ErStrategy::Greedy, 0).unwrap();
    assert!(is_bijection(&out.induced_permutation));
}

#[test]
fn empty_shared_set_is_an_error() {
    let ds = random_dataset(&mut rng(1), 3, 10);
    let s = split(&ds, vec![], PeerLabels::Clean, 1);
    assert!(matches!(greedy_er(&s.peer_a, &s.peer_b), Err(Error::NoSharedFeatures)));
}

#[test]
fn per_class_requires_peer_labels() {
    let ds = random_dataset(&mut rng(1), 3, 10);
    let s = split(&ds, vec![0], PeerLabels::Absent, 1);
    assert!(matches!(greedy_er_per_class(&s.peer_a, &s.peer_b), Err(Error::MissingPeerLabels)));
    assert!(greedy_er_learned_classes(&s.peer_a, &s.peer_b, 3).is_ok());
}

#[test]
fn one_surplus_positive_is_matched_across_classes() {
    let x = DMatrix::from_row_slice(2, 4, &[1.0, 0.2, -0.3, -1.0, 0.1, 1.0, 0.7, -0.4]);
    let ds = LabeledDataset::from_parts(x, vec![Label::POS, Label::POS, Label::NEG, Label::NEG]).unwrap();
    let mut s = split(&ds, vec![0, 1], PeerLabels::Clean, 0);
    s.peer_b.labels = Some(vec![Label::POS, Label::POS, Label::POS, Label::NEG]);
    let link = greedy_er_per_class(&s.peer_a, &s.peer_b).unwrap();
    assert_eq!(link.diagnostics.residual_pairs, 1);
    let out = s.resolve(&link).unwrap();
    assert!(is_bijection(&out.induced_permutation));
    // enumerate: the residual pair is the only one joining different classes
    let b_labels = s.peer_b.labels.as_ref().unwrap();
    let cross = link.b_for_a.iter().enumerate().filter(|&(i, &j)| ds.labels()[i] != b_labels[j]).count();
    assert_eq!(cross, 1);
}

#[test]
fn separable_shared_features_make_learned_classes_equal_per_class() {
    let m = 30;
    let mut r = rng(5);
    let labels: Vec<Label> = (0..m).map(|i| Label::from_sign(i % 3 != 0)).collect();
    let x = DMatrix::from_fn(4, m, |j, i| {
        let y = labels[i].value();
        match j {
            0 => y * r.random_range(1.0..2.0),
            1 => y * r.random_range(1.0..2.0),
            _ => r.random_range(-1.0..1.0),
        }
    });
    let ds = LabeledDataset::from_parts(x, labels).unwrap();
    let s = split(&ds, vec![0, 1], PeerLabels::Clean, 9);
    let per_class = greedy_er_per_class(&s.peer_a, &s.peer_b).unwrap();
    let learned = greedy_er_learned_classes(&s.peer_a, &s.peer_b, 3).unwrap();
    assert_eq!(learned.b_for_a, per_class.b_for_a);
}

#[test]
fn equal_similarities_keep_every_pair_at_the_median() {
    let m = 10;
    let x = DMatrix::from_fn(3, m, |j, i| if j == 0 { 1.0 } else { i as f64 });
    let labels = (0..m).map(|i| Label::from_sign(i % 2 == 0)).collect();
    let ds = LabeledDataset::from_parts(x, labels).unwrap();
    let s = split(&ds, vec![0], PeerLabels::Absent, 2);
    let link = greedy_er_learned_classes(&s.peer_a, &s.peer_b, 20).unwrap();
    assert_eq!(link.diagnostics.kept_after_median, Some(m));
    assert_eq!(link.diagnostics.k_used, Some(m));
}

#[test]
fn zero_label_noise_matches_per_class() {
    let ds = random_dataset(&mut rng(6), 4, 40);
    let s = split(&ds, vec![0, 3], PeerLabels::Clean, 6);
    let a = greedy_er_per_class(&s.peer_a, &s.peer_b).unwrap();
    let b = greedy_er_noisy_classes(&s.peer_a, &s.peer_b, 0.0, 17).unwrap();
    assert_eq!(a.b_for_a, b.b_for_a);
    assert_eq!(b.diagnostics.label_swaps, Some(0));
}

#[test]
fn label_swap_count_contract() {
    let m = 100;
    let mut r = rng(7);
    let x = DMatrix::from_fn(2, m, |_, _| r.random_range(-1.0..1.0));
    let labels = (0..m).map(|i| Label::from_sign(i < 50)).collect();
    let ds = LabeledDataset::from_parts(x, labels).unwrap();
    let s = split(&ds, vec![0], PeerLabels::Clean, 1);
    let link = greedy_er_noisy_classes(&s.peer_a, &s.peer_b, 0.2, 3).unwrap();
    assert_eq!(link.diagnostics.label_swaps, Some(20));
}

#[test]
fn ideal_resolution_is_the_identity() {
    let ds = random_dataset(&mut rng(8), 5, 25);
    let s = split(&ds, vec![1], PeerLabels::Absent, 8);
    let out = ideal_er(&s).unwrap();
    assert!(is_identity(&out.induced_permutation));
    assert_eq!(&out.dataset, &ds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_strategy_is_bijective_and_keeps_anchor_rows(seed in 0u64..10_000, which in 0usize..5, p in 0.0f64..0.6) {
        let mut r = rng(seed);
        let ds = dyadic_dataset(&mut r, 4, 30);
        let mut s = split(&ds, vec![0, 3], PeerLabels::Clean, seed);
        s.peer_b = linkfed_core::dataset::apply_neighbor_noise(&s.peer_b, &linkfed_core::NoiseConfig::new(p, seed).unwrap());
        let strategy = [
            ErStrategy::Greedy,
            ErStrategy::PerClass,
            ErStrategy::Learned { k: 3 },
            ErStrategy::Noisy { p_prime: 0.1 },
            ErStrategy::Ideal,
        ][which];
        let out = run_strategy(&s, strategy, seed).unwrap();
        prop_assert!(is_bijection(&out.induced_permutation));
        for i in 0..30 {
            for j in 0..2 {
                prop_assert_eq!(out.dataset.features()[(j, i)], ds.features()[(j, i)]);
            }
        }
        prop_assert_eq!(out.dataset.labels(), ds.labels());
    }

    #[test]
    fn clean_per_class_never_crosses_classes(seed in 0u64..10_000, p in 0.0f64..1.0) {
        let mut r = rng(seed);
        let ds = random_dataset(&mut r, 3, 40);
        let mut s = split(&ds, vec![0], PeerLabels::Clean, seed);
        s.peer_b = linkfed_core::dataset::apply_neighbor_noise(&s.peer_b, &linkfed_core::NoiseConfig::new(p, seed).unwrap());
        let out = run_strategy(&s, ErStrategy::PerClass, 0).unwrap();
        prop_assert_eq!(out.class_mismatch_rate, 0.0);
        prop_assert_eq!(out.diagnostics.residual_pairs, 0);
    }
}
