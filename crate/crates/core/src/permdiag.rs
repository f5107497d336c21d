//! Transposition factorization of the induced permutation and the accuracy/size diagnostics built on it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledDataset};
use crate::error::{Error, Result};
use crate::losses::{LinearModel, SourceLoss, TaylorLossSpec};

/// Random directions used to estimate infima over unit vectors.
pub const CALIBRATION_DIRECTIONS: usize = 256;

/// Elementary swaps whose replay on the identity yields the permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranspositionSequence {
    pub swaps: Vec<(usize, usize)>,
    pub t_plus: usize,
    m: usize,
}

impl TranspositionSequence {
    pub fn len(&self) -> usize {
        self.swaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.swaps.is_empty()
    }

    pub fn size(&self) -> usize {
        self.m
    }

    pub fn rho(&self) -> f64 {
        if self.swaps.is_empty() {
            0.0
        } else {
            self.t_plus as f64 / self.swaps.len() as f64
        }
    }

    /// Apply the swaps in order to the identity arrangement.
    pub fn replay(&self) -> Vec<usize> {
        let mut arr: Vec<usize> = (0..self.m).collect();
        for &(u, v) in &self.swaps {
            arr.swap(u, v);
        }
        arr
    }
}

/// Checks that `pi` is a bijection on 0..len.
pub fn check_permutation(pi: &[usize]) -> Result<()> {
    let mut seen = vec![false; pi.len()];
    for &p in pi {
        if p >= pi.len() {
            return Err(Error::NotPermutation(format!("entry {p} out of range")));
        }
        if seen[p] {
            return Err(Error::NotPermutation(format!("entry {p} repeated")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Minimal factorization: one swap fewer than the length of each cycle.
pub fn factorize(pi: &[usize], labels: &[Label]) -> Result<TranspositionSequence> {
    check_permutation(pi)?;
    if labels.len() != pi.len() {
        return Err(Error::DimensionMismatch { expected: pi.len(), got: labels.len() });
    }
    let m = pi.len();
    let mut arr: Vec<usize> = (0..m).collect();
    let mut pos: Vec<usize> = (0..m).collect();
    let mut swaps = Vec::new();
    for i in 0..m {
        if arr[i] != pi[i] {
            let j = pos[pi[i]];
            swaps.push((i, j));
            let (ai, aj) = (arr[i], arr[j]);
            arr.swap(i, j);
            pos[ai] = j;
            pos[aj] = i;
        }
    }
    let t_plus = swaps.iter().filter(|&&(u, v)| labels[u] != labels[v]).count();
    Ok(TranspositionSequence { swaps, t_plus, m })
}

/// Which feature rows are anchor rows (the rest are shuffled).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowBlocks {
    pub anchor: Vec<usize>,
    pub shuffle: Vec<usize>,
}

impl RowBlocks {
    pub fn new(anchor: Vec<usize>, shuffle: Vec<usize>, d: usize) -> Result<Self> {
        let mut seen = vec![false; d];
        for &j in anchor.iter().chain(&shuffle) {
            if j >= d || seen[j] {
                return Err(Error::InvalidPartition(format!("bad row {j}")));
            }
            seen[j] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidPartition("rows not covered".into()));
        }
        Ok(Self { anchor, shuffle })
    }

    pub fn anchor_norm(&self, v: &DVector<f64>) -> f64 {
        self.anchor.iter().map(|&j| v[j] * v[j]).sum::<f64>().sqrt()
    }

    pub fn shuffle_norm(&self, v: &DVector<f64>) -> f64 {
        self.shuffle.iter().map(|&j| v[j] * v[j]).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alpha {
    Bounded(f64),
    UnboundedViolation,
}

impl Alpha {
    pub fn value(self) -> Option<f64> {
        match self {
            Alpha::Bounded(a) => Some(a),
            Alpha::UnboundedViolation => None,
        }
    }
}

/// α from T ≤ (m/ξ)^((1-α)/2).
pub fn alpha_for(t: usize, m: usize, xi: f64) -> Alpha {
    if t <= 1 {
        return Alpha::Bounded(1.0);
    }
    if xi == 0.0 {
        return Alpha::Bounded(1.0);
    }
    let ratio = m as f64 / xi;
    if ratio <= 1.0 {
        return Alpha::UnboundedViolation;
    }
    let a = 1.0 - 2.0 * (t as f64).ln() / ratio.ln();
    if a <= 0.0 {
        Alpha::UnboundedViolation
    } else {
        Alpha::Bounded(a.min(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyProfile {
    pub epsilon: f64,
    pub tau: f64,
    pub xi: f64,
    pub alpha: Alpha,
}

/// Norms of the per-step differences that define the exact ε = 0 profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNorms {
    pub anchor_diff: Vec<f64>,
    pub shuffle_diff: Vec<f64>,
    pub displacement: Vec<f64>,
}

/// Walk the swaps, yielding for each step the anchor difference a_t, the
/// pre-swap shuffle difference b_t (both full-length) and the arrangement after the swap.
pub(crate) fn walk_steps<F>(x: &DMatrix<f64>, seq: &TranspositionSequence, blocks: &RowBlocks, mut visit: F)
where
    F: FnMut(usize, &DVector<f64>, &DVector<f64>, &[usize]),
{
    let d = x.nrows();
    let mut arr: Vec<usize> = (0..seq.size()).collect();
    for (t, &(u, v)) in seq.swaps.iter().enumerate() {
        let mut a = DVector::zeros(d);
        for &j in &blocks.anchor {
            a[j] = x[(j, u)] - x[(j, v)];
        }
        let mut b = DVector::zeros(d);
        for &j in &blocks.shuffle {
            b[j] = x[(j, arr[u])] - x[(j, arr[v])];
        }
        arr.swap(u, v);
        visit(t, &a, &b, &arr);
    }
}

fn shuffle_displacement(x: &DMatrix<f64>, blocks: &RowBlocks, i: usize, src: usize) -> f64 {
    blocks
        .shuffle
        .iter()
        .map(|&j| (x[(j, src)] - x[(j, i)]).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn step_norms(s: &LabeledDataset, seq: &TranspositionSequence, blocks: &RowBlocks) -> StepNorms {
    let x = s.features();
    let mut out = StepNorms { anchor_diff: vec![], shuffle_diff: vec![], displacement: vec![] };
    // only columns u, v change at step t; track the running max over all columns
    let mut running = 0.0f64;
    walk_steps(x, seq, blocks, |t, a, b, arr| {
        let (u, v) = seq.swaps[t];
        out.anchor_diff.push(a.norm());
        out.shuffle_diff.push(b.norm());
        running = running
            .max(shuffle_displacement(x, blocks, u, arr[u]))
            .max(shuffle_displacement(x, blocks, v, arr[v]));
        out.displacement.push(running);
    });
    out
}

/// Exact minimal τ at ε = 0, with ξ and α.
pub fn estimate_accuracy(s: &LabeledDataset, seq: &TranspositionSequence, blocks: &RowBlocks) -> AccuracyProfile {
    let x_star = s.max_norm();
    let norms = step_norms(s, seq, blocks);
    let tau = norms
        .anchor_diff
        .iter()
        .chain(&norms.shuffle_diff)
        .chain(&norms.displacement)
        .fold(0.0f64, |acc, v| acc.max(*v))
        .min(3.0 * x_star);
    let xi = tau / x_star;
    AccuracyProfile { epsilon: 0.0, tau, xi, alpha: alpha_for(seq.len(), s.len(), xi) }
}

/// Best (ε, τ) found by scanning ε over a grid with τ fitted to sampled directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledAccuracy {
    pub epsilon: f64,
    pub tau: f64,
    pub xi: f64,
    pub directions: usize,
}

/// Estimate only: sampled directions bound the supremum from below.
pub fn refine_accuracy_sampled(
    s: &LabeledDataset,
    seq: &TranspositionSequence,
    blocks: &RowBlocks,
    directions: usize,
    seed: u64,
) -> SampledAccuracy {
    let x = s.features();
    let d = s.dim();
    let x_star = s.max_norm();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ws: Vec<DVector<f64>> = (0..directions).map(|_| random_unit_vector(d, &mut rng)).collect();
    // (lhs, scale) pairs: need |lhs| <= eps * scale + tau for every pair
    let mut constraints: Vec<(f64, f64)> = Vec::new();
    walk_steps(x, seq, blocks, |t, a, b, arr| {
        let (u, v) = seq.swaps[t];
        for w in &ws {
            let stretch = x.column(u).dot(w).abs().max(x.column(v).dot(w).abs());
            constraints.push((a.dot(w).abs(), stretch));
            constraints.push((b.dot(w).abs(), stretch));
            for &i in &[u, v] {
                let mut diff = 0.0;
                for &j in &blocks.shuffle {
                    diff += (x[(j, arr[i])] - x[(j, i)]) * w[j];
                }
                constraints.push((diff.abs(), x.column(i).dot(w).abs()));
            }
        }
    });
    let mut best = SampledAccuracy { epsilon: 0.0, tau: 0.0, xi: f64::INFINITY, directions };
    for k in 0..=20 {
        let eps = k as f64 / 20.0;
        let tau = constraints.iter().map(|&(l, sc)| (l - eps * sc).max(0.0)).fold(0.0, f64::max);
        let xi = eps + tau / x_star;
        if xi < best.xi {
            best = SampledAccuracy { epsilon: eps, tau, xi, directions };
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyParams {
    pub delta_theta: f64,
    pub delta_perm: f64,
    pub delta_set: f64,
    pub c_of_m: Option<f64>,
    pub x_star: f64,
}

pub fn compute_key_params(
    theta0: &LinearModel,
    s: &LabeledDataset,
    profile: &AccuracyProfile,
    seq: &TranspositionSequence,
) -> KeyParams {
    let x_star = s.max_norm();
    let m = s.len() as f64;
    let delta_theta = theta0.norm() * x_star;
    let delta_set = (s.mean_operator() / (m * x_star)).norm();
    if seq.is_empty() {
        return KeyParams { delta_theta, delta_perm: 0.0, delta_set, c_of_m: Some(0.0), x_star };
    }
    let delta_perm = profile.xi.sqrt() * seq.rho() / 4.0;
    let c_of_m = profile.alpha.value().map(|a| (profile.xi / m).powf(a));
    KeyParams { delta_theta, delta_perm, delta_set, c_of_m, x_star }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClauseResult {
    pub pass: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub a: ClauseResult,
    pub b: ClauseResult,
    /// Direction-sampled estimate of U(sign c).
    pub u_estimate: f64,
    /// Direction-sampled estimate of the smallest mean squared stretch.
    pub m_min_estimate: f64,
    pub directions: usize,
}

impl CalibrationReport {
    pub fn passes(&self) -> bool {
        self.a.pass && self.b.pass
    }
}

/// Principal axes of XXᵀ followed by `extra` seeded random unit vectors.
pub fn direction_set(x: &DMatrix<f64>, extra: usize, seed: u64) -> Vec<DVector<f64>> {
    let eig = SymmetricEigen::new(x * x.transpose());
    let mut dirs: Vec<DVector<f64>> = eig.eigenvectors.column_iter().map(|c| c.into_owned()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dirs.extend((0..extra).map(|_| random_unit_vector(x.nrows(), &mut rng)));
    dirs
}

/// Mean and variance of the stretches |xᵢᵀw| along a unit w.
fn stretch_moments(x: &DMatrix<f64>, w: &DVector<f64>) -> (f64, f64) {
    let s = x.transpose() * w;
    let m = s.len() as f64;
    let mean = s.iter().map(|v| v.abs()).sum::<f64>() / m;
    let sq = s.iter().map(|v| v * v).sum::<f64>() / m;
    (sq, (sq - mean * mean).max(0.0))
}

pub fn check_calibration(
    s: &LabeledDataset,
    spec: &TaylorLossSpec,
    profile: &AccuracyProfile,
    loss: &SourceLoss,
    seed: u64,
) -> CalibrationReport {
    let x = s.features();
    let x_star = s.max_norm();
    let c = spec.curvature();
    let dirs = direction_set(x, CALIBRATION_DIRECTIONS, seed);
    let mut u = f64::INFINITY;
    let mut m_min = f64::INFINITY;
    for w in &dirs {
        let (mean_sq, var) = stretch_moments(x, w);
        m_min = m_min.min(mean_sq);
        let val = if c > 0.0 {
            c * (1.0 - profile.epsilon).powi(2) * var
        } else {
            c * ((1.0 + profile.epsilon).powi(2) * mean_sq + profile.tau * profile.tau)
        };
        u = u.min(val);
    }
    let lhs = x_star * x_star / (u / 2.0 + spec.gamma * spec.reg_eig_min());
    let rhs = 0.5 * (1.0 / loss.f1.abs()).min(1.0 / (2.0 * c.abs()));
    let a = ClauseResult { pass: lhs > 0.0 && lhs <= rhs, margin: rhs - lhs };
    let mb = s.len() as f64 - 4.0 * profile.xi;
    let b = ClauseResult { pass: mb >= 0.0, margin: mb };
    CalibrationReport { a, b, u_estimate: u, m_min_estimate: m_min, directions: dirs.len() }
}

/// Smallest γ meeting clause (a) when U is taken as 0.
pub fn conservative_gamma(x_star: f64, loss: &SourceLoss, curvature: f64, reg_eig_min: f64) -> f64 {
    2.0 * x_star * x_star * loss.f1.abs().max(2.0 * curvature.abs()) / reg_eig_min
}

/// Uniform direction on the unit sphere.
pub fn random_unit_vector<R: Rng>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}
