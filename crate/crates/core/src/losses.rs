//! Source losses, the ridge-regularized Taylor loss and its closed-form minimizer, and linear boosting.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Square,
    Logistic,
    Matsushita,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(Self::Square),
            "logistic" => Ok(Self::Logistic),
            "matsushita" => Ok(Self::Matsushita),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Square => "square",
            Self::Logistic => "logistic",
            Self::Matsushita => "matsushita",
        })
    }
}

/// A margin loss F with its value, slope and curvature at 0.
#[derive(Debug, Clone)]
pub struct SourceLoss {
    pub name: String,
    eval: fn(f64) -> f64,
    pub f0: f64,
    pub f1: f64,
    pub f2: f64,
    pub convex: bool,
    rspl: bool,
}

fn logistic(z: f64) -> f64 {
    // ln(1 + e^{-z}) without overflow
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn matsushita(z: f64) -> f64 {
    (-z + (1.0 + z * z).sqrt()) / 2.0
}

fn square(z: f64) -> f64 {
    (1.0 - z).powi(2) / 4.0
}

impl SourceLoss {
    pub fn registry(kind: LossKind) -> Self {
        let (eval, f0, f2): (fn(f64) -> f64, f64, f64) = match kind {
            LossKind::Logistic => (logistic, std::f64::consts::LN_2, 0.25),
            LossKind::Matsushita => (matsushita, 0.5, 0.5),
            LossKind::Square => (square, 0.25, 0.5),
        };
        Self { name: kind.to_string(), eval, f0, f1: -0.5, f2, convex: true, rspl: true }
    }

    /// A loss outside the registry; never treated as an RSPL.
    pub fn custom(name: &str, eval: fn(f64) -> f64, f0: f64, f1: f64, f2: f64, convex: bool) -> Self {
        Self { name: name.to_string(), eval, f0, f1, f2, convex, rspl: false }
    }

    pub fn value(&self, z: f64) -> f64 {
        (self.eval)(z)
    }

    pub fn is_rspl(&self) -> bool {
        self.rspl
    }
}

/// Floor λ° + F''(0)·X̂_*²/2 for γ·λ_min(Γ).
pub fn pick_lambda_star(loss: &SourceLoss, lambda_circle: f64, x_hat_star: f64) -> Result<f64> {
    if !loss.is_rspl() {
        return Err(Error::NotRspl(loss.name.clone()));
    }
    if lambda_circle <= 0.0 {
        return Err(Error::InvalidParameter("lambda_circle must be positive".into()));
    }
    Ok(lambda_circle + loss.f2 * x_hat_star * x_hat_star / 2.0)
}

/// Coefficients of a + (b/m)Σz + (c/m)Σz² + γθᵀΓθ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaylorLossSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub gamma: f64,
    pub regularizer: DMatrix<f64>,
    reg_eig_min: f64,
    reg_eig_max: f64,
}

impl TaylorLossSpec {
    pub fn new(a: f64, b: f64, c: f64, gamma: f64, regularizer: DMatrix<f64>) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
        }
        if !regularizer.is_square() {
            return Err(Error::InvalidRegularizer("not square".into()));
        }
        let asym = (&regularizer - regularizer.transpose()).amax();
        if asym > 1e-10 {
            return Err(Error::InvalidRegularizer(format!("asymmetry {asym:e}")));
        }
        let eig = SymmetricEigen::new(regularizer.clone()).eigenvalues;
        let reg_eig_min = eig.min();
        let reg_eig_max = eig.max();
        if reg_eig_min <= 0.0 {
            return Err(Error::InvalidRegularizer(format!("smallest eigenvalue {reg_eig_min:e}")));
        }
        Ok(Self { a, b, c, gamma, regularizer, reg_eig_min, reg_eig_max })
    }

    /// a = F(0), b = F'(0), c = F''(0)/2, Γ = I.
    pub fn from_loss(loss: &SourceLoss, gamma: f64, d: usize) -> Result<Self> {
        Self::new(loss.f0, loss.f1, loss.f2 / 2.0, gamma, DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.regularizer.nrows()
    }

    /// Coefficient of XXᵀ in the first-order condition (twice `c`).
    pub fn curvature(&self) -> f64 {
        2.0 * self.c
    }

    pub fn sign(&self) -> f64 {
        self.c.signum()
    }

    /// -b / |2c|
    pub fn nu(&self) -> f64 {
        -self.b / self.curvature().abs()
    }

    /// 2mγ / |2c|
    pub fn nu_prime(&self, m: usize) -> f64 {
        2.0 * m as f64 * self.gamma / self.curvature().abs()
    }

    pub fn reg_eig_min(&self) -> f64 {
        self.reg_eig_min
    }

    pub fn reg_eig_max(&self) -> f64 {
        self.reg_eig_max
    }

    /// sign(c)·XXᵀ + ν'Γ.
    pub fn system_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.c == 0.0 {
            return Err(Error::ZeroCurvature);
        }
        if x.nrows() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.nrows() });
        }
        Ok(x * x.transpose() * self.sign() + &self.regularizer * self.nu_prime(x.ncols()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub theta: DVector<f64>,
}

impl LinearModel {
    pub fn new(theta: DVector<f64>) -> Self {
        Self { theta }
    }

    pub fn zeros(d: usize) -> Self {
        Self { theta: DVector::zeros(d) }
    }

    pub fn is_null(&self) -> bool {
        self.theta.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.theta.norm()
    }

    /// y_i θᵀx_i for every observation.
    pub fn margins(&self, ds: &LabeledDataset) -> Vec<f64> {
        let raw = ds.features().transpose() * &self.theta;
        raw.iter().zip(ds.labels()).map(|(s, y)| s * y.value()).collect()
    }

    /// Fraction with non-positive margin.
    pub fn error_rate(&self, ds: &LabeledDataset) -> f64 {
        let m = self.margins(ds);
        m.iter().filter(|&&z| z <= 0.0).count() as f64 / m.len() as f64
    }
}

fn check_dims(ds: &LabeledDataset, theta: &DVector<f64>, spec: &TaylorLossSpec) -> Result<()> {
    if theta.len() != ds.dim() {
        return Err(Error::DimensionMismatch { expected: ds.dim(), got: theta.len() });
    }
    if spec.dim() != ds.dim() {
        return Err(Error::DimensionMismatch { expected: ds.dim(), got: spec.dim() });
    }
    Ok(())
}

pub fn taylor_loss_value(ds: &LabeledDataset, model: &LinearModel, spec: &TaylorLossSpec) -> Result<f64> {
    check_dims(ds, &model.theta, spec)?;
    let m = ds.len() as f64;
    let z = model.margins(ds);
    let s1: f64 = z.iter().sum();
    let s2: f64 = z.iter().map(|v| v * v).sum();
    let ridge = spec.gamma * model.theta.dot(&(&spec.regularizer * &model.theta));
    Ok(spec.a + spec.b / m * s1 + spec.c / m * s2 + ridge)
}

pub fn taylor_gradient(ds: &LabeledDataset, model: &LinearModel, spec: &TaylorLossSpec) -> Result<DVector<f64>> {
    check_dims(ds, &model.theta, spec)?;
    let m = ds.len() as f64;
    let x = ds.features();
    let xxt_theta = x * (x.transpose() * &model.theta);
    Ok(ds.mean_operator() * (spec.b / m) + xxt_theta * (2.0 * spec.c / m)
        + &spec.regularizer * &model.theta * (2.0 * spec.gamma))
}

/// Closed-form minimizer θ* = ν (sign(c)XXᵀ + ν'Γ)⁻¹ μ.
pub fn solve_taylor(ds: &LabeledDataset, spec: &TaylorLossSpec) -> Result<LinearModel> {
    let sys = spec.system_matrix(ds.features())?;
    let low = SymmetricEigen::new(sys.clone()).eigenvalues.min();
    if low <= 0.0 {
        return Err(Error::Indefinite(low));
    }
    let chol = sys.cholesky().ok_or(Error::Indefinite(low))?;
    let theta = chol.solve(&ds.mean_operator()) * spec.nu();
    if theta.is_empty() || theta.iter().all(|v| *v == 0.0) {
        log::warn!("taylor optimum is the null vector (mean operator vanishes)");
    }
    if spec.c > 0.0 {
        let cap = spec.b.abs() * ds.max_norm() / (2.0 * spec.gamma * spec.reg_eig_min);
        debug_assert!(theta.norm() <= cap * (1.0 + 1e-9), "optimum norm exceeds ridge cap");
    }
    Ok(LinearModel::new(theta))
}

/// Result of coordinate boosting: the model and the exponential loss after each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostFit {
    pub model: LinearModel,
    pub exp_loss: Vec<f64>,
    pub rounds: usize,
}

const EDGE_CLAMP: f64 = 1.0 - 1e-10;

/// AdaBoost over single-feature weak learners on [-1,1]-scaled coordinates.
pub fn boost_linear(ds: &LabeledDataset, iterations: usize) -> Result<BoostFit> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be >= 1".into()));
    }
    let (d, m) = (ds.dim(), ds.len());
    let x = ds.features();
    let scale: Vec<f64> = (0..d).map(|j| x.row(j).amax()).collect();
    // h[j][i] = y_i x_ij / s_j in [-1, 1]
    let h: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            (0..m)
                .map(|i| if scale[j] > 0.0 { ds.labels()[i].value() * x[(j, i)] / scale[j] } else { 0.0 })
                .collect()
        })
        .collect();
    let mut scaled_theta = vec![0.0; d];
    let mut margin = vec![0.0; m];
    let mut exp_loss = vec![1.0];
    let mut rounds = 0;
    for _ in 0..iterations {
        let w: Vec<f64> = margin.iter().map(|z: &f64| (-z).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut best = (0, 0.0f64);
        for (j, hj) in h.iter().enumerate() {
            let r = hj.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / total;
            if r.abs() > best.1.abs() {
                best = (j, r);
            }
        }
        let (j, r) = best;
        if r.abs() < 1e-12 {
            break;
        }
        let r = r.clamp(-EDGE_CLAMP, EDGE_CLAMP);
        let step = 0.5 * ((1.0 + r) / (1.0 - r)).ln();
        scaled_theta[j] += step;
        for (z, hij) in margin.iter_mut().zip(&h[j]) {
            *z += step * hij;
        }
        exp_loss.push(margin.iter().map(|z| (-z).exp()).sum::<f64>() / m as f64);
        rounds += 1;
    }
    let theta = DVector::from_iterator(
        d,
        (0..d).map(|j| if scale[j] > 0.0 { scaled_theta[j] / scale[j] } else { 0.0 }),
    );
    Ok(BoostFit { model: LinearModel::new(theta), exp_loss, rounds })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginEntry {
    pub margin: f64,
    pub label: Label,
    pub index: usize,
}

/// Margins sorted ascending, ties by index.
pub fn margin_profile(model: &LinearModel, ds: &LabeledDataset) -> Vec<MarginEntry> {
    let mut out: Vec<MarginEntry> = model
        .margins(ds)
        .into_iter()
        .zip(ds.labels())
        .enumerate()
        .map(|(index, (margin, &label))| MarginEntry { margin, label, index })
        .collect();
    out.sort_by(|p, q| p.margin.total_cmp(&q.margin).then(p.index.cmp(&q.index)));
    out
}
