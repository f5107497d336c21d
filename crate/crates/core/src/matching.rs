//! Cosine similarity, the greedy matcher and an exact Hungarian oracle.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ORACLE_CAP: usize = 64;

/// a·b / (‖a‖‖b‖), or 0 when either vector is null.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.is_empty() {
        return Err(Error::InvalidParameter("empty vectors".into()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Pairwise cosine between the columns of `a` (rows of the result) and of `b`.
pub fn cosine_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch { expected: a.nrows(), got: b.nrows() });
    }
    let an: Vec<f64> = a.column_iter().map(|c| c.norm()).collect();
    let bn: Vec<f64> = b.column_iter().map(|c| c.norm()).collect();
    let mut out = a.transpose() * b;
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            let den = an[i] * bn[j];
            out[(i, j)] = if den == 0.0 { 0.0 } else { (out[(i, j)] / den).clamp(-1.0, 1.0) };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

/// Candidate links between an A side of `n_a` records and a B side of `n_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePairSet {
    n_a: usize,
    n_b: usize,
    pairs: Vec<ScoredPair>,
}

impl CandidatePairSet {
    pub fn new(n_a: usize, n_b: usize, pairs: Vec<ScoredPair>) -> Result<Self> {
        for p in &pairs {
            if p.a >= n_a || p.b >= n_b {
                return Err(Error::InvalidParameter(format!("pair ({}, {}) out of range", p.a, p.b)));
            }
            if !p.score.is_finite() {
                return Err(Error::InvalidParameter("non-finite similarity".into()));
            }
        }
        Ok(Self { n_a, n_b, pairs })
    }

    /// Every (i, j) pair of a score matrix.
    pub fn complete(scores: &DMatrix<f64>) -> Result<Self> {
        let mut pairs = Vec::with_capacity(scores.len());
        for i in 0..scores.nrows() {
            for j in 0..scores.ncols() {
                pairs.push(ScoredPair { a: i, b: j, score: scores[(i, j)] });
            }
        }
        Self::new(scores.nrows(), scores.ncols(), pairs)
    }

    /// Pairs of `rows_a` x `rows_b`, indices kept global.
    pub fn restricted(scores: &DMatrix<f64>, rows_a: &[usize], rows_b: &[usize]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(rows_a.len() * rows_b.len());
        for &i in rows_a {
            for &j in rows_b {
                pairs.push(ScoredPair { a: i, b: j, score: scores[(i, j)] });
            }
        }
        Self::new(scores.nrows(), scores.ncols(), pairs)
    }

    pub fn pairs(&self) -> &[ScoredPair] {
        &self.pairs
    }

    pub fn sides(&self) -> (usize, usize) {
        (self.n_a, self.n_b)
    }

    /// Same pairs with every score mapped through `f`.
    pub fn map_scores(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let pairs = self.pairs.iter().map(|p| ScoredPair { score: f(p.score), ..*p }).collect();
        Self::new(self.n_a, self.n_b, pairs)
    }

    fn dense(&self) -> Result<DMatrix<f64>> {
        let n = self.n_a;
        if self.n_b != n || self.pairs.len() != n * n {
            return Err(Error::Unbalanced);
        }
        let mut w = DMatrix::from_element(n, n, f64::NAN);
        for p in &self.pairs {
            w[(p.a, p.b)] = p.score;
        }
        if w.iter().any(|v| v.is_nan()) {
            return Err(Error::Unbalanced);
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<ScoredPair>,
    pub total_similarity: f64,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl Matching {
    fn from_pairs(pairs: Vec<ScoredPair>, n_a: usize, n_b: usize, involved_a: &[bool], involved_b: &[bool]) -> Self {
        let mut used_a = vec![false; n_a];
        let mut used_b = vec![false; n_b];
        for p in &pairs {
            used_a[p.a] = true;
            used_b[p.b] = true;
        }
        let unmatched_a = (0..n_a).filter(|&i| involved_a[i] && !used_a[i]).collect();
        let unmatched_b = (0..n_b).filter(|&j| involved_b[j] && !used_b[j]).collect();
        let total_similarity = pairs.iter().map(|p| p.score).sum();
        Self { pairs, total_similarity, unmatched_a, unmatched_b }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Repeatedly take the best remaining pair; ties go to the lowest A index, then lowest B index.
pub fn greedy_match(s: &CandidatePairSet) -> Matching {
    let (n_a, n_b) = s.sides();
    let mut order: Vec<&ScoredPair> = s.pairs.iter().collect();
    order.sort_by(|p, q| q.score.total_cmp(&p.score).then(p.a.cmp(&q.a)).then(p.b.cmp(&q.b)));
    let mut used_a = vec![false; n_a];
    let mut used_b = vec![false; n_b];
    let mut involved_a = vec![false; n_a];
    let mut involved_b = vec![false; n_b];
    let mut chosen = Vec::new();
    for p in order {
        involved_a[p.a] = true;
        involved_b[p.b] = true;
        if !used_a[p.a] && !used_b[p.b] {
            used_a[p.a] = true;
            used_b[p.b] = true;
            chosen.push(*p);
        }
    }
    chosen.sort_by_key(|p| (p.a, p.b));
    Matching::from_pairs(chosen, n_a, n_b, &involved_a, &involved_b)
}

/// Maximum-weight perfect matching on a balanced complete instance.
pub fn hungarian_match(s: &CandidatePairSet, cap: usize) -> Result<Matching> {
    let n = s.sides().0;
    if n > cap {
        return Err(Error::OracleCap { size: n, cap });
    }
    let w = s.dense()?;
    let assign = assignment_min_cost(&w.map(|v| -v));
    let pairs = (0..n).map(|i| ScoredPair { a: i, b: assign[i], score: w[(i, assign[i])] }).collect();
    let all = vec![true; n];
    Ok(Matching::from_pairs(pairs, n, n, &all, &all))
}

// Shortest augmenting path with potentials; returns column for each row.
fn assignment_min_cost(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let inf = f64::INFINITY;
    // 1-based, index 0 is the virtual row/column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}
