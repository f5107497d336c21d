//! Entity-resolution strategies over two peer views.
//!
//! Strategies only see peer views and return a [`Linkage`] in peer-local indices;
//! [`VerticalSplit::resolve`] maps it onto the hidden ground truth.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledDataset, PeerView, VerticalSplit};
use crate::error::{Error, Result};
use crate::matching::{cosine_matrix, greedy_match, CandidatePairSet, Matching};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ErStrategy {
    Greedy,
    PerClass,
    Learned { k: usize },
    Noisy { p_prime: f64 },
    Ideal,
}

impl ErStrategy {
    /// Whether peer B must hold labels.
    pub fn needs_peer_labels(&self) -> bool {
        matches!(self, Self::PerClass | Self::Noisy { .. })
    }
}

impl FromStr for ErStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown ER strategy {s:?}"));
        match s.split_once(':') {
            None => match s {
                "greedy" => Ok(Self::Greedy),
                "per-class" => Ok(Self::PerClass),
                "ideal" => Ok(Self::Ideal),
                _ => Err(bad()),
            },
            Some(("learned", k)) => {
                let k: usize = k.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(Error::Config("learned:k needs k >= 1".into()));
                }
                Ok(Self::Learned { k })
            }
            Some(("noisy", p)) => {
                let p_prime: f64 = p.parse().map_err(|_| bad())?;
                if !(0.0..=0.5).contains(&p_prime) {
                    return Err(Error::Config(format!("noisy:p' needs p' in [0, 0.5], got {p_prime}")));
                }
                Ok(Self::Noisy { p_prime })
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for ErStrategy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ErStrategy> for String {
    fn from(s: ErStrategy) -> String {
        s.to_string()
    }
}

impl fmt::Display for ErStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Greedy => f.write_str("greedy"),
            Self::PerClass => f.write_str("per-class"),
            Self::Learned { k } => write!(f, "learned:{k}"),
            Self::Noisy { p_prime } => write!(f, "noisy:{p_prime}"),
            Self::Ideal => f.write_str("ideal"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErDiagnostics {
    /// Pairs linked by the cross-class pass over leftovers.
    pub residual_pairs: usize,
    /// Pairs surviving the median filter (learned classes).
    pub kept_after_median: Option<usize>,
    /// Effective k after clamping (learned classes).
    pub k_used: Option<usize>,
    /// Label swaps actually applied (noisy classes).
    pub label_swaps: Option<usize>,
}

/// A bijection from peer A's records to peer B's local records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linkage {
    pub b_for_a: Vec<usize>,
    pub diagnostics: ErDiagnostics,
}

impl Linkage {
    fn from_matching(mat: &Matching, m: usize, diagnostics: ErDiagnostics) -> Result<Self> {
        let mut b_for_a = vec![usize::MAX; m];
        for p in &mat.pairs {
            b_for_a[p.a] = p.b;
        }
        if b_for_a.contains(&usize::MAX) {
            return Err(Error::NotPermutation("matching left records unlinked".into()));
        }
        Ok(Self { b_for_a, diagnostics })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSample {
    pub dataset: LabeledDataset,
    pub induced_permutation: Vec<usize>,
    pub class_mismatch_rate: f64,
    pub diagnostics: ErDiagnostics,
}

/// Fraction of i with y_i != y_{π(i)}.
pub fn class_mismatch_rate(labels: &[Label], pi: &[usize]) -> f64 {
    let bad = pi.iter().enumerate().filter(|&(i, &p)| labels[i] != labels[p]).count();
    bad as f64 / pi.len() as f64
}

impl VerticalSplit {
    pub fn resolve(&self, linkage: &Linkage) -> Result<ResolvedSample> {
        let pi: Vec<usize> = linkage.b_for_a.iter().map(|&j| self.b_record[j]).collect();
        crate::permdiag::check_permutation(&pi)?;
        let dataset = self.ideal.with_permuted_rows(&self.partition.shuffle, &pi)?;
        Ok(ResolvedSample {
            class_mismatch_rate: class_mismatch_rate(self.ideal.labels(), &pi),
            dataset,
            induced_permutation: pi,
            diagnostics: linkage.diagnostics.clone(),
        })
    }
}

/// Ground-truth join: π = identity.
pub fn ideal_er(split: &VerticalSplit) -> Result<ResolvedSample> {
    let mut b_for_a = vec![0; split.b_record.len()];
    for (j, &rec) in split.b_record.iter().enumerate() {
        b_for_a[rec] = j;
    }
    split.resolve(&Linkage { b_for_a, diagnostics: ErDiagnostics::default() })
}

fn shared_similarity(a: &PeerView, b: &PeerView) -> Result<DMatrix<f64>> {
    if a.shared.nrows() == 0 || b.shared.nrows() == 0 {
        return Err(Error::NoSharedFeatures);
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    cosine_matrix(&a.shared, &b.shared)
}

pub fn greedy_er(a: &PeerView, b: &PeerView) -> Result<Linkage> {
    let sim = shared_similarity(a, b)?;
    let mat = greedy_match(&CandidatePairSet::complete(&sim)?);
    Linkage::from_matching(&mat, a.len(), ErDiagnostics::default())
}

pub fn greedy_er_per_class(a: &PeerView, b: &PeerView) -> Result<Linkage> {
    let b_labels = b.labels.as_ref().ok_or(Error::MissingPeerLabels)?;
    let sim = shared_similarity(a, b)?;
    per_class(a, b_labels, &sim, ErDiagnostics::default())
}

fn per_class(a: &PeerView, b_labels: &[Label], sim: &DMatrix<f64>, mut diag: ErDiagnostics) -> Result<Linkage> {
    let a_labels = a.labels.as_ref().ok_or_else(|| Error::InvalidParameter("peer A holds no labels".into()))?;
    let m = a.len();
    let class = |labels: &[Label], pos: bool| -> Vec<usize> {
        (0..labels.len()).filter(|&i| labels[i].is_positive() == pos).collect()
    };
    let mut pairs = Vec::with_capacity(m);
    for pos in [true, false] {
        let cand = CandidatePairSet::restricted(sim, &class(a_labels, pos), &class(b_labels, pos))?;
        pairs.extend(greedy_match(&cand).pairs);
    }
    let mut used_a = vec![false; m];
    let mut used_b = vec![false; m];
    for p in &pairs {
        used_a[p.a] = true;
        used_b[p.b] = true;
    }
    let left_a: Vec<usize> = (0..m).filter(|&i| !used_a[i]).collect();
    let left_b: Vec<usize> = (0..m).filter(|&j| !used_b[j]).collect();
    assert_eq!(left_a.len(), left_b.len(), "per-class matching stranded unequal residual sets");
    if !left_a.is_empty() {
        let residual = greedy_match(&CandidatePairSet::restricted(sim, &left_a, &left_b)?);
        diag.residual_pairs = residual.len();
        pairs.extend(residual.pairs);
    }
    let total = pairs.iter().map(|p| p.score).sum();
    let mat = Matching { pairs, total_similarity: total, unmatched_a: vec![], unmatched_b: vec![] };
    Linkage::from_matching(&mat, m, diag)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Labels for peer B predicted by a confident greedy pass then k-NN inside peer B.
pub fn learn_peer_labels(a: &PeerView, b: &PeerView, k: usize, sim: &DMatrix<f64>) -> Result<(Vec<Label>, ErDiagnostics)> {
    let a_labels = a.labels.as_ref().ok_or_else(|| Error::InvalidParameter("peer A holds no labels".into()))?;
    let m = a.len();
    let mat = greedy_match(&CandidatePairSet::complete(sim)?);
    let mut scores: Vec<f64> = mat.pairs.iter().map(|p| p.score).collect();
    let cut = median(&mut scores);
    let mut known: Vec<Option<Label>> = vec![None; m];
    for p in mat.pairs.iter().filter(|p| p.score >= cut) {
        known[p.b] = Some(a_labels[p.a]);
    }
    let pool: Vec<usize> = (0..m).filter(|&j| known[j].is_some()).collect();
    let k_used = k.min(pool.len());
    if k_used < k {
        log::warn!("k = {k} exceeds labeled pool of {}; clamped", pool.len());
    }
    let view = b.full_view();
    let mut labels = Vec::with_capacity(m);
    for j in 0..m {
        if let Some(l) = known[j] {
            labels.push(l);
            continue;
        }
        let mut dist: Vec<(f64, usize)> = pool
            .iter()
            .map(|&q| ((view.column(j) - view.column(q)).norm_squared(), q))
            .collect();
        dist.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let vote: f64 = dist[..k_used].iter().map(|&(_, q)| known[q].unwrap().value()).sum();
        labels.push(Label::from_sign(vote >= 0.0));
    }
    let diag = ErDiagnostics { kept_after_median: Some(pool.len()), k_used: Some(k_used), ..Default::default() };
    Ok((labels, diag))
}

pub fn greedy_er_learned_classes(a: &PeerView, b: &PeerView, k: usize) -> Result<Linkage> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let sim = shared_similarity(a, b)?;
    let (labels, diag) = learn_peer_labels(a, b, k, &sim)?;
    per_class(a, &labels, &sim, diag)
}

/// Swap `round(m p')` random (+, -) label pairs in peer B, then match per class.
pub fn greedy_er_noisy_classes(a: &PeerView, b: &PeerView, p_prime: f64, seed: u64) -> Result<Linkage> {
    if !(0.0..=0.5).contains(&p_prime) {
        return Err(Error::InvalidParameter(format!("p' = {p_prime} outside [0, 0.5]")));
    }
    let mut labels = b.labels.clone().ok_or(Error::MissingPeerLabels)?;
    let sim = shared_similarity(a, b)?;
    let swaps = swap_labels(&mut labels, p_prime, seed);
    let diag = ErDiagnostics { label_swaps: Some(swaps), ..Default::default() };
    per_class(a, &labels, &sim, diag)
}

fn swap_labels(labels: &mut [Label], p_prime: f64, seed: u64) -> usize {
    let target = (labels.len() as f64 * p_prime).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    for _ in 0..target {
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_positive()).collect();
        let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_positive()).collect();
        let (Some(&i), Some(&j)) = (pos.choose(&mut rng), neg.choose(&mut rng)) else {
            break;
        };
        labels[i] = Label::NEG;
        labels[j] = Label::POS;
        done += 1;
    }
    done
}

/// Run one strategy end to end and resolve against the hidden alignment.
pub fn run_strategy(split: &VerticalSplit, strategy: ErStrategy, seed: u64) -> Result<ResolvedSample> {
    let (a, b) = (&split.peer_a, &split.peer_b);
    let linkage = match strategy {
        ErStrategy::Ideal => return ideal_er(split),
        ErStrategy::Greedy => greedy_er(a, b)?,
        ErStrategy::PerClass => greedy_er_per_class(a, b)?,
        ErStrategy::Learned { k } => greedy_er_learned_classes(a, b, k)?,
        ErStrategy::Noisy { p_prime } => greedy_er_noisy_classes(a, b, p_prime, seed)?,
    };
    split.resolve(&linkage)
}
