//! Labeled samples, the two-peer vertical split and the shared-feature noise process.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class label, stored as +1 / -1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Label(i8);

impl Label {
    pub const POS: Label = Label(1);
    pub const NEG: Label = Label(-1);

    pub fn from_sign(positive: bool) -> Self {
        if positive {
            Self::POS
        } else {
            Self::NEG
        }
    }

    pub fn value(self) -> f64 {
        self.0 as f64
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn flipped(self) -> Self {
        Label(-self.0)
    }
}

/// Observations as columns of a d x m matrix with one label each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: DMatrix<f64>,
    labels: Vec<Label>,
    feature_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<Label>, feature_names: Vec<String>) -> Result<Self> {
        let (d, m) = features.shape();
        if d < 1 || m < 2 {
            return Err(Error::InvalidDataset(format!("need d >= 1 and m >= 2, got d={d}, m={m}")));
        }
        if labels.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: labels.len() });
        }
        if feature_names.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: feature_names.len() });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        let ds = Self { features, labels, feature_names };
        if ds.max_norm() <= 0.0 {
            return Err(Error::InvalidDataset("all observations are zero".into()));
        }
        Ok(ds)
    }

    /// Build with generated names `f0..f{d-1}`.
    pub fn from_parts(features: DMatrix<f64>, labels: Vec<Label>) -> Result<Self> {
        let names = (0..features.nrows()).map(|j| format!("f{j}")).collect();
        Self::new(features, labels, names)
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn len(&self) -> usize {
        self.features.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn observation(&self, i: usize) -> DVector<f64> {
        self.features.column(i).into_owned()
    }

    /// X_*: the largest column norm.
    pub fn max_norm(&self) -> f64 {
        self.features
            .column_iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }

    /// Σ y_i x_i, summed in column order.
    pub fn mean_operator(&self) -> DVector<f64> {
        let mut mu = DVector::zeros(self.dim());
        for (col, y) in self.features.column_iter().zip(&self.labels) {
            mu.axpy(y.value(), &col, 1.0);
        }
        mu
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|y| y.is_positive()).count()
    }

    /// x̂_i takes the `rows` entries of x_{pi(i)}; other rows and labels stay put.
    pub fn with_permuted_rows(&self, rows: &[usize], pi: &[usize]) -> Result<Self> {
        if pi.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: pi.len() });
        }
        let mut x = self.features.clone();
        for (i, &src) in pi.iter().enumerate() {
            for &r in rows {
                x[(r, i)] = self.features[(r, src)];
            }
        }
        Self::new(x, self.labels.clone(), self.feature_names.clone())
    }

    /// Keep the listed observations, in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let features = self.features.select_columns(idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.feature_names.clone())
    }
}

/// Parse a headered CSV; the label column's lexicographically larger value becomes +1.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        // data rows are 1-based below the header
        let row = r + 1;
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(Error::BlankCell { row, column: headers[j].clone() });
            }
            if j == label_idx {
                raw_labels.push(cell.to_string());
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                    row,
                    column: headers[j].clone(),
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonNumeric { row, column: headers[j].clone(), value: cell.to_string() });
                }
                values.push(v);
            }
        }
    }

    let distinct: BTreeSet<&String> = raw_labels.iter().collect();
    if distinct.len() != 2 {
        return Err(Error::LabelCardinality(distinct.len()));
    }
    let positive = *distinct.iter().next_back().unwrap();
    let labels = raw_labels.iter().map(|l| Label::from_sign(l == positive)).collect();
    let m = raw_labels.len();
    // values are row-major m x d; transpose into d x m
    let features = DMatrix::from_row_slice(m, names.len(), &values).transpose();
    LabeledDataset::new(features, labels, names)
}

/// Whether and how peer B holds labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerLabels {
    Absent,
    Clean,
    Noisy(f64),
}

/// Feature rows owned by each peer plus the shared matching rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub anchor: Vec<usize>,
    pub shuffle: Vec<usize>,
    pub shared: Vec<usize>,
    pub labels_on_peer_b: PeerLabels,
}

impl PartitionSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        let mut seen = vec![false; d];
        for &j in self.anchor.iter().chain(&self.shuffle) {
            if j >= d {
                return Err(Error::InvalidPartition(format!("feature index {j} out of range (d={d})")));
            }
            if seen[j] {
                return Err(Error::InvalidPartition(format!("feature {j} assigned twice")));
            }
            seen[j] = true;
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!("feature {j} assigned to neither peer")));
        }
        if let Some(&j) = self.shared.iter().find(|&&j| j >= d) {
            return Err(Error::InvalidPartition(format!("shared index {j} out of range (d={d})")));
        }
        let distinct: BTreeSet<_> = self.shared.iter().collect();
        if distinct.len() != self.shared.len() {
            return Err(Error::InvalidPartition("duplicate shared index".into()));
        }
        if let PeerLabels::Noisy(p) = self.labels_on_peer_b {
            if !(0.0..=0.5).contains(&p) {
                return Err(Error::InvalidPartition(format!("label noise {p} outside [0, 0.5]")));
            }
        }
        Ok(())
    }
}

/// What one peer sees: its own rows, its copy of the shared rows, maybe labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerView {
    pub owned_rows: Vec<usize>,
    pub owned: DMatrix<f64>,
    pub shared_rows: Vec<usize>,
    pub shared: DMatrix<f64>,
    pub labels: Option<Vec<Label>>,
}

impl PeerView {
    pub fn len(&self) -> usize {
        self.owned.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Shared vector of local record `j`.
    pub fn shared_vector(&self, j: usize) -> DVector<f64> {
        self.shared.column(j).into_owned()
    }

    /// Shared rows followed by owned rows that are not shared.
    pub fn full_view(&self) -> DMatrix<f64> {
        let extra: Vec<usize> = (0..self.owned_rows.len())
            .filter(|&r| !self.shared_rows.contains(&self.owned_rows[r]))
            .collect();
        let mut out = DMatrix::zeros(self.shared.nrows() + extra.len(), self.len());
        out.rows_mut(0, self.shared.nrows()).copy_from(&self.shared);
        for (k, &r) in extra.iter().enumerate() {
            out.row_mut(self.shared.nrows() + k).copy_from(&self.owned.row(r));
        }
        out
    }

    fn permute_columns(&mut self, order: &[usize]) {
        self.owned = self.owned.select_columns(order);
        self.shared = self.shared.select_columns(order);
        if let Some(labels) = &mut self.labels {
            *labels = order.iter().map(|&j| labels[j]).collect();
        }
    }
}

/// The two peer views plus the private ground-truth alignment.
#[derive(Debug, Clone)]
pub struct VerticalSplit {
    pub peer_a: PeerView,
    pub peer_b: PeerView,
    pub(crate) b_record: Vec<usize>,
    pub(crate) ideal: LabeledDataset,
    pub(crate) partition: PartitionSpec,
}

pub fn vertical_split(ds: &LabeledDataset, spec: &PartitionSpec) -> Result<VerticalSplit> {
    spec.validate(ds.dim())?;
    let x = ds.features();
    let shared = x.select_rows(&spec.shared);
    let peer_a = PeerView {
        owned_rows: spec.anchor.clone(),
        owned: x.select_rows(&spec.anchor),
        shared_rows: spec.shared.clone(),
        shared: shared.clone(),
        labels: Some(ds.labels().to_vec()),
    };
    let b_labels = match spec.labels_on_peer_b {
        PeerLabels::Absent => None,
        PeerLabels::Clean | PeerLabels::Noisy(_) => Some(ds.labels().to_vec()),
    };
    let peer_b = PeerView {
        owned_rows: spec.shuffle.clone(),
        owned: x.select_rows(&spec.shuffle),
        shared_rows: spec.shared.clone(),
        shared,
        labels: b_labels,
    };
    Ok(VerticalSplit {
        peer_a,
        peer_b,
        b_record: (0..ds.len()).collect(),
        ideal: ds.clone(),
        partition: spec.clone(),
    })
}

impl VerticalSplit {
    /// Randomly reorder peer B's records, keeping the hidden alignment in sync.
    pub fn shuffle_peer_b(&mut self, seed: u64) {
        let mut order: Vec<usize> = (0..self.b_record.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        self.peer_b.permute_columns(&order);
        self.b_record = order.iter().map(|&j| self.b_record[j]).collect();
    }

    pub fn ideal(&self) -> &LabeledDataset {
        &self.ideal
    }

    pub fn partition(&self) -> &PartitionSpec {
        &self.partition
    }

    /// Rebuild X from both peers' owned rows along the true alignment.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let m = self.ideal.len();
        let mut x = DMatrix::zeros(self.ideal.dim(), m);
        for (k, &row) in self.peer_a.owned_rows.iter().enumerate() {
            x.row_mut(row).copy_from(&self.peer_a.owned.row(k));
        }
        for (j, &rec) in self.b_record.iter().enumerate() {
            for (k, &row) in self.peer_b.owned_rows.iter().enumerate() {
                x[(row, rec)] = self.peer_b.owned[(k, j)];
            }
        }
        x
    }
}

/// Probability and seed for the shared-feature neighbor noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub p: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("noise probability {p} outside [0, 1]")));
        }
        Ok(Self { p, seed })
    }
}

/// u = 10 for features with more than 20 recorded values, else 2.
pub fn neighbor_radius(distinct_values: usize) -> usize {
    if distinct_values > 20 {
        10
    } else {
        2
    }
}

/// Sorted distinct indices a cell at sorted index `i` may move to.
pub fn neighbor_window(i: usize, distinct_values: usize) -> Vec<usize> {
    let u = neighbor_radius(distinct_values);
    let lo = i.saturating_sub(u);
    let hi = (i + u).min(distinct_values.saturating_sub(1));
    (lo..=hi).filter(|&k| k != i).collect()
}

/// Noisify the shared rows of a view; owned rows and labels are untouched.
pub fn apply_neighbor_noise(view: &PeerView, cfg: &NoiseConfig) -> PeerView {
    let mut out = view.clone();
    if cfg.p <= 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for r in 0..view.shared.nrows() {
        let mut values: Vec<f64> = view.shared.row(r).iter().copied().collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let k = values.len();
        for j in 0..view.len() {
            if !rng.random_bool(cfg.p) {
                continue;
            }
            let current = view.shared[(r, j)];
            let i = values.binary_search_by(|v| v.total_cmp(&current)).expect("observed value");
            let window = neighbor_window(i, k);
            if let Some(&pick) = window.choose(&mut rng) {
                out.shared[(r, j)] = values[pick];
            }
        }
    }
    out
}
