#![allow(dead_code)]

use std::path::PathBuf;

use linkfed_core::losses::{LossKind, SourceLoss, TaylorLossSpec};
use linkfed_core::nalgebra::DMatrix;
use linkfed_core::permdiag::conservative_gamma;
use linkfed_core::{Label, LabeledDataset, RowBlocks};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

/// Uniform [-1, 1] entries; both classes present.
pub fn random_dataset(r: &mut ChaCha8Rng, d: usize, m: usize) -> LabeledDataset {
    let x = DMatrix::from_fn(d, m, |_, _| r.random_range(-1.0..1.0));
    let mut y: Vec<Label> = (0..m).map(|_| Label::from_sign(r.random_bool(0.5))).collect();
    y[0] = Label::POS;
    y[1] = Label::NEG;
    LabeledDataset::from_parts(x, y).unwrap()
}

/// Entries in multiples of 1/4, so sums are exact.
pub fn dyadic_dataset(r: &mut ChaCha8Rng, d: usize, m: usize) -> LabeledDataset {
    let x = DMatrix::from_fn(d, m, |_, _| r.random_range(-8i32..=8) as f64 / 4.0);
    let mut y: Vec<Label> = (0..m).map(|_| Label::from_sign(r.random_bool(0.5))).collect();
    y[0] = Label::POS;
    y[1] = Label::NEG;
    let mut x = x;
    x[(0, 0)] = 1.0;
    LabeledDataset::from_parts(x, y).unwrap()
}

/// Non-empty anchor and shuffle row sets.
pub fn random_blocks(r: &mut ChaCha8Rng, d: usize) -> RowBlocks {
    let mut rows: Vec<usize> = (0..d).collect();
    rows.shuffle(r);
    let cut = r.random_range(1..d);
    let mut anchor = rows[..cut].to_vec();
    let mut shuffle = rows[cut..].to_vec();
    anchor.sort_unstable();
    shuffle.sort_unstable();
    RowBlocks::new(anchor, shuffle, d).unwrap()
}

/// Composition of `swaps` random transpositions.
pub fn random_permutation(r: &mut ChaCha8Rng, m: usize, swaps: usize) -> Vec<usize> {
    let mut pi: Vec<usize> = (0..m).collect();
    for _ in 0..swaps {
        let u = r.random_range(0..m);
        let mut v = r.random_range(0..m);
        while v == u {
            v = r.random_range(0..m);
        }
        pi.swap(u, v);
    }
    pi
}

pub fn random_loss(r: &mut ChaCha8Rng) -> SourceLoss {
    let kinds = [LossKind::Square, LossKind::Logistic, LossKind::Matsushita];
    SourceLoss::registry(kinds[r.random_range(0..3)])
}

/// Taylor spec from `loss` with γ a multiple of the conservative calibrated value.
pub fn calibrated_spec(r: &mut ChaCha8Rng, s: &LabeledDataset, loss: &SourceLoss, negative_c: bool) -> TaylorLossSpec {
    let c = if negative_c { -loss.f2 / 2.0 } else { loss.f2 / 2.0 };
    let g = conservative_gamma(s.max_norm(), loss, 2.0 * c, 1.0) * r.random_range(1.0..3.0);
    TaylorLossSpec::new(loss.f0, loss.f1, c, g, DMatrix::identity(s.dim(), s.dim())).unwrap()
}

pub struct Instance {
    pub s: LabeledDataset,
    pub blocks: RowBlocks,
    pub pi: Vec<usize>,
    pub loss: SourceLoss,
    pub spec: TaylorLossSpec,
}

pub fn random_instance(seed: u64, max_m: usize, max_d: usize, max_swaps: usize, negative_c: bool) -> Instance {
    let mut r = rng(seed);
    let m = r.random_range(12..=max_m);
    let d = r.random_range(2..=max_d);
    let s = random_dataset(&mut r, d, m);
    let blocks = random_blocks(&mut r, d);
    let swaps = r.random_range(1..=max_swaps);
    let pi = random_permutation(&mut r, m, swaps);
    let loss = random_loss(&mut r);
    let spec = calibrated_spec(&mut r, &s, &loss, negative_c);
    Instance { s, blocks, pi, loss, spec }
}
