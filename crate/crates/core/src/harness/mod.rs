//! Cross-validated experiments: split, noise, resolve, learn, evaluate, audit.

pub mod immunity;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{audit, AuditOptions, BoundReport};
use crate::dataset::{
    apply_neighbor_noise, load_csv, vertical_split, LabeledDataset, NoiseConfig, PartitionSpec, PeerLabels,
};
use crate::er::{run_strategy, ErDiagnostics, ErStrategy};
use crate::error::{Error, Result};
use crate::losses::{boost_linear, solve_taylor, LinearModel, LossKind, SourceLoss, TaylorLossSpec};
use crate::permdiag::{conservative_gamma, RowBlocks};

use immunity::{immunity_from_points, CurvePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Learner {
    Taylor,
    Boost,
}

impl FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taylor" => Ok(Self::Taylor),
            "boost" => Ok(Self::Boost),
            other => Err(Error::Config(format!("unknown learner {other:?}"))),
        }
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Taylor => "taylor",
            Self::Boost => "boost",
        })
    }
}

/// Flat experiment description; every key is optional in the TOML file except `data` and `label_col`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: PathBuf,
    pub label_col: String,
    /// Explicit anchor rows; with `shuffle` unset the non-shared rest is split at random.
    pub anchor: Option<Vec<usize>>,
    pub shuffle: Option<Vec<usize>>,
    pub shared: Vec<usize>,
    pub noise_p: f64,
    pub seed: u64,
    pub er: ErStrategy,
    /// Force peer B's labels absent; strategies needing them then fail.
    pub peer_b_unlabeled: bool,
    pub learner: Learner,
    pub iters: usize,
    pub gamma: Option<f64>,
    pub loss: LossKind,
    pub folds: usize,
    pub bound_audit: bool,
    pub delta: f64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            label_col: String::new(),
            anchor: None,
            shuffle: None,
            shared: Vec::new(),
            noise_p: 0.0,
            seed: 0,
            er: ErStrategy::Greedy,
            peer_b_unlabeled: false,
            learner: Learner::Boost,
            iters: 1000,
            gamma: None,
            loss: LossKind::Logistic,
            folds: 5,
            bound_audit: false,
            delta: 0.05,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.folds < 2 {
            return cfg(format!("folds must be >= 2, got {}", self.folds));
        }
        if self.iters == 0 {
            return cfg("iters must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise_p) {
            return cfg(format!("noise_p {} outside [0, 1]", self.noise_p));
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return cfg(format!("gamma must be positive, got {g}"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return cfg(format!("delta {} outside (0, 1)", self.delta));
        }
        if self.shared.is_empty() && self.er != ErStrategy::Ideal {
            return cfg(format!("strategy {} needs at least one shared feature", self.er));
        }
        if self.peer_b_unlabeled && self.er.needs_peer_labels() {
            return cfg(format!("strategy {} needs labels on peer B", self.er));
        }
        if let Some(&j) = self.shared.iter().find(|&&j| j >= d) {
            return cfg(format!("shared feature {j} out of range (d={d})"));
        }
        match (&self.anchor, &self.shuffle) {
            (Some(a), Some(s)) => {
                let spec = PartitionSpec {
                    anchor: a.clone(),
                    shuffle: s.clone(),
                    shared: self.shared.clone(),
                    labels_on_peer_b: PeerLabels::Absent,
                };
                spec.validate(d).map_err(|e| Error::Config(e.to_string()))
            }
            (None, None) => Ok(()),
            _ => cfg("anchor and shuffle must be given together".into()),
        }
    }

    fn peer_labels(&self) -> PeerLabels {
        match self.er {
            ErStrategy::PerClass => PeerLabels::Clean,
            ErStrategy::Noisy { p_prime } => PeerLabels::Noisy(p_prime),
            _ => PeerLabels::Absent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPartition {
    pub anchor: Vec<usize>,
    pub shuffle: Vec<usize>,
    pub shared: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub partition: FoldPartition,
    pub test_error: f64,
    pub class_mismatch_rate: f64,
    pub er: ErDiagnostics,
    pub immunity_errors: usize,
    pub minimal_immunity_margin: Option<f64>,
    pub bounds: Option<BoundReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub m: usize,
    pub d: usize,
    pub er: ErStrategy,
    pub learner: Learner,
    pub loss: LossKind,
    pub noise_p: f64,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub mean_test_error: f64,
    pub mean_class_mismatch_rate: f64,
    /// Mean over folds with a finite minimal margin.
    pub minimal_immunity_margin: Option<f64>,
    /// Folds whose errors reach the top margin.
    pub saturated_folds: usize,
    /// Pooled over every fold's training examples.
    pub margin_curve: Vec<CurvePoint>,
}

/// splitmix64 finalizer used to derive independent sub-seeds.
fn sub_seed(seed: u64, fold: usize, stream: u64) -> u64 {
    let mut z = seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-class shuffled round-robin assignment; returns the fold of each example.
pub fn stratified_folds(ds: &LabeledDataset, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![0; ds.len()];
    let mut next = 0;
    for pos in [true, false] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels()[i].is_positive() == pos).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assign[i] = next % folds;
            next += 1;
        }
    }
    assign
}

fn fold_partition(cfg: &ExperimentConfig, d: usize, seed: u64) -> FoldPartition {
    if let (Some(a), Some(s)) = (&cfg.anchor, &cfg.shuffle) {
        return FoldPartition { anchor: a.clone(), shuffle: s.clone(), shared: cfg.shared.clone() };
    }
    let mut rest: Vec<usize> = (0..d).filter(|j| !cfg.shared.contains(j)).collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let half = rest.len() / 2;
    let mut anchor = cfg.shared.clone();
    anchor.extend_from_slice(&rest[..half]);
    anchor.sort_unstable();
    let mut shuffle = rest[half..].to_vec();
    shuffle.sort_unstable();
    FoldPartition { anchor, shuffle, shared: cfg.shared.clone() }
}

fn taylor_spec(cfg: &ExperimentConfig, train: &LabeledDataset) -> Result<(TaylorLossSpec, SourceLoss)> {
    let loss = SourceLoss::registry(cfg.loss);
    let probe = TaylorLossSpec::from_loss(&loss, 1.0, train.dim())?;
    let gamma = cfg
        .gamma
        .unwrap_or_else(|| conservative_gamma(train.max_norm(), &loss, probe.curvature(), probe.reg_eig_min()));
    Ok((TaylorLossSpec::from_loss(&loss, gamma, train.dim())?, loss))
}

fn fit(cfg: &ExperimentConfig, ds: &LabeledDataset, spec: &TaylorLossSpec, iters: usize) -> Result<LinearModel> {
    match cfg.learner {
        Learner::Taylor => solve_taylor(ds, spec),
        Learner::Boost => Ok(boost_linear(ds, iters)?.model),
    }
}

struct FoldOutcome {
    report: FoldReport,
    points: Vec<(f64, bool)>,
}

fn run_fold(cfg: &ExperimentConfig, ds: &LabeledDataset, assign: &[usize], fold: usize) -> Result<FoldOutcome> {
    let train_idx: Vec<usize> = (0..ds.len()).filter(|&i| assign[i] != fold).collect();
    let test_idx: Vec<usize> = (0..ds.len()).filter(|&i| assign[i] == fold).collect();
    let train = ds.select(&train_idx)?;
    let test = ds.select(&test_idx)?;

    let part = fold_partition(cfg, ds.dim(), sub_seed(cfg.seed, fold, 1));
    let spec = PartitionSpec {
        anchor: part.anchor.clone(),
        shuffle: part.shuffle.clone(),
        shared: part.shared.clone(),
        labels_on_peer_b: cfg.peer_labels(),
    };
    let mut split = vertical_split(&train, &spec)?;
    split.shuffle_peer_b(sub_seed(cfg.seed, fold, 2));
    let noise = NoiseConfig::new(cfg.noise_p, sub_seed(cfg.seed, fold, 3))?;
    split.peer_b = apply_neighbor_noise(&split.peer_b, &noise);
    let resolved = run_strategy(&split, cfg.er, sub_seed(cfg.seed, fold, 4))?;

    let (taylor, loss) = taylor_spec(cfg, &train)?;
    let theta_t = fit(cfg, &resolved.dataset, &taylor, cfg.iters)?;
    let theta0 = fit(cfg, &train, &taylor, 2 * cfg.iters)?;
    let test_error = theta_t.error_rate(&test);

    let points: Vec<(f64, bool)> = theta0
        .margins(&train)
        .into_iter()
        .zip(theta_t.margins(&train))
        .map(|(z0, zt)| (z0, zt <= 0.0))
        .collect();
    let imm = immunity_from_points(&points);

    let bounds = if cfg.bound_audit {
        let blocks = RowBlocks::new(part.anchor.clone(), part.shuffle.clone(), train.dim())?;
        let opts = AuditOptions { seed: sub_seed(cfg.seed, fold, 5), delta: cfg.delta, ..Default::default() };
        Some(audit(&train, &blocks, &resolved.induced_permutation, &taylor, &loss, &opts)?)
    } else {
        None
    };

    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            train_size: train.len(),
            test_size: test.len(),
            partition: part,
            test_error,
            class_mismatch_rate: resolved.class_mismatch_rate,
            er: resolved.diagnostics,
            immunity_errors: imm.errors,
            minimal_immunity_margin: imm.minimal_margin,
            bounds,
        },
        points,
    })
}

/// Load the configured CSV and run every fold.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let ds = load_csv(&cfg.data, &cfg.label_col)?;
    run_on_dataset(cfg, &ds)
}

pub fn run_on_dataset(cfg: &ExperimentConfig, ds: &LabeledDataset) -> Result<RunReport> {
    cfg.validate(ds.dim())?;
    if ds.len() < 2 * cfg.folds {
        return Err(Error::Config(format!("{} examples cannot fill {} folds", ds.len(), cfg.folds)));
    }
    let assign = stratified_folds(ds, cfg.folds, sub_seed(cfg.seed, 0, 0));
    let outcomes: Vec<FoldOutcome> = (0..cfg.folds)
        .into_par_iter()
        .map(|f| run_fold(cfg, ds, &assign, f))
        .collect::<Result<_>>()?;

    let k = outcomes.len() as f64;
    let mean_test_error = outcomes.iter().map(|o| o.report.test_error).sum::<f64>() / k;
    let mean_class_mismatch_rate = outcomes.iter().map(|o| o.report.class_mismatch_rate).sum::<f64>() / k;
    let finite: Vec<f64> = outcomes.iter().filter_map(|o| o.report.minimal_immunity_margin).collect();
    let minimal_immunity_margin =
        if finite.is_empty() { None } else { Some(finite.iter().sum::<f64>() / finite.len() as f64) };
    let pooled: Vec<(f64, bool)> = outcomes.iter().flat_map(|o| o.points.iter().copied()).collect();

    Ok(RunReport {
        dataset: cfg.data.display().to_string(),
        m: ds.len(),
        d: ds.dim(),
        er: cfg.er,
        learner: cfg.learner,
        loss: cfg.loss,
        noise_p: cfg.noise_p,
        seed: cfg.seed,
        saturated_folds: outcomes.len() - finite.len(),
        folds: outcomes.into_iter().map(|o| o.report).collect(),
        mean_test_error,
        mean_class_mismatch_rate,
        minimal_immunity_margin,
        margin_curve: immunity_from_points(&pooled).curve,
    })
}

/// Write report.json, margins.csv and (when audited) bounds.json into `dir`.
pub fn emit_reports(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(&path, json + "\n").map_err(io(&path))?;
    written.push(path);

    let path = dir.join("margins.csv");
    let mut csv = String::from("margin,cumulative_error\n");
    for p in &report.margin_curve {
        csv.push_str(&format!("{:?},{:?}\n", p.margin, p.cumulative_error));
    }
    fs::write(&path, csv).map_err(io(&path))?;
    written.push(path);

    let bounds: Vec<&BoundReport> = report.folds.iter().filter_map(|f| f.bounds.as_ref()).collect();
    if !bounds.is_empty() {
        let path = dir.join("bounds.json");
        let json = serde_json::to_string_pretty(&bounds).expect("bounds serialize");
        fs::write(&path, json + "\n").map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
