//! Drift recursion between the ideal and the entity-resolved optimum, and the bound right-hand sides.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::harness::immunity::margin_immunity_analysis;
use crate::losses::{solve_taylor, taylor_loss_value, LinearModel, SourceLoss, TaylorLossSpec};
use crate::permdiag::{
    check_calibration, compute_key_params, direction_set, estimate_accuracy, factorize, walk_steps,
    AccuracyProfile, Alpha, CalibrationReport, KeyParams, RowBlocks, TranspositionSequence,
    CALIBRATION_DIRECTIONS,
};

pub const DEFAULT_CHAIN_CAP: usize = 64;
pub const DEFAULT_DIM_CAP: usize = 256;

/// One swap of the chain, indexed from 1.
#[derive(Debug, Clone)]
pub struct DriftStep {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub u: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct DriftChain {
    sign: f64,
    nu: f64,
    /// V_0..V_T by dense inversion.
    pub v_direct: Vec<DMatrix<f64>>,
    /// V_0..V_T by the double Sherman-Morrison update.
    pub v_incremental: Vec<DMatrix<f64>>,
    /// Steps 1..T.
    pub steps: Vec<DriftStep>,
    /// Λ_0..Λ_{T-1}.
    pub big_lambda: Vec<DMatrix<f64>>,
    /// ε_0..ε_{T-1}.
    pub epsilon: Vec<DVector<f64>>,
    /// λ_0..λ_{T-1}.
    pub small_lambda: Vec<DVector<f64>>,
    /// H_{T,j} for j = 0..T.
    pub h_to_end: Vec<DMatrix<f64>>,
}

fn inverse(m: DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    m.try_inverse().ok_or(Error::NotInvertible { step, detail: "singular system matrix".into() })
}

pub fn build_drift_chain(
    s: &LabeledDataset,
    blocks: &RowBlocks,
    seq: &TranspositionSequence,
    spec: &TaylorLossSpec,
) -> Result<DriftChain> {
    build_drift_chain_capped(s, blocks, seq, spec, DEFAULT_CHAIN_CAP, DEFAULT_DIM_CAP)
}

pub fn build_drift_chain_capped(
    s: &LabeledDataset,
    blocks: &RowBlocks,
    seq: &TranspositionSequence,
    spec: &TaylorLossSpec,
    chain_cap: usize,
    dim_cap: usize,
) -> Result<DriftChain> {
    let (d, m) = (s.dim(), s.len());
    if seq.len() > chain_cap {
        return Err(Error::ChainCap { what: "T", got: seq.len(), cap: chain_cap });
    }
    if d > dim_cap {
        return Err(Error::ChainCap { what: "d", got: d, cap: dim_cap });
    }
    if seq.size() != m {
        return Err(Error::DimensionMismatch { expected: m, got: seq.size() });
    }
    let sign = spec.sign();
    let nu = spec.nu();
    let x = s.features();
    let labels = s.labels();

    let mut v_direct = vec![inverse(spec.system_matrix(x)?, 0)?];
    let mut v_incremental = vec![v_direct[0].clone()];
    let mut steps = Vec::with_capacity(seq.len());
    let mut epsilon = Vec::with_capacity(seq.len());
    let mut failure = None;

    walk_steps(x, seq, blocks, |t, a, b, arr| {
        if failure.is_some() {
            return;
        }
        let step = t + 1;
        let prev = &v_incremental[t];
        let va = prev * a;
        let vb = prev * b;
        let (c0, c1, c2) = (a.dot(&va), a.dot(&vb), b.dot(&vb));
        let lead = (1.0 - sign * c1).powi(2);
        let den = lead - c0 * c2;
        let scale = lead.abs().max((c0 * c2).abs()).max(1.0);
        if lead.abs() <= 1e-12 * scale || den.abs() <= 1e-12 * scale {
            failure = Some(Error::NotInvertible {
                step,
                detail: format!("(1 - sign*c1)^2 = {lead:e}, c0*c2 = {:e}", c0 * c2),
            });
            return;
        }
        let ab = a * b.transpose();
        let cross = &ab + ab.transpose();
        let u = (a * a.transpose() * c2 + cross * (sign * (1.0 - sign * c1)) + b * b.transpose() * c0) / den;
        let next = prev + prev * &u * prev;
        v_incremental.push(next);

        let (pu, pv) = seq.swaps[t];
        // μ_{t+1} - μ_t = (y_v - y_u) b, exactly zero within a class
        let dy = labels[pv].value() - labels[pu].value();
        epsilon.push(b * dy);
        let mut xt = x.clone();
        for (i, &src) in arr.iter().enumerate() {
            for &r in &blocks.shuffle {
                xt[(r, i)] = x[(r, src)];
            }
        }
        match spec.system_matrix(&xt).and_then(|sys| inverse(sys, step)) {
            Ok(vd) => v_direct.push(vd),
            Err(e) => failure = Some(e),
        }
        steps.push(DriftStep { a: a.clone(), b: b.clone(), c0, c1, c2, u });
    });
    if let Some(e) = failure {
        return Err(e);
    }

    let big_lambda: Vec<DMatrix<f64>> = (0..steps.len()).map(|t| &v_incremental[t] * &steps[t].u).collect();
    let small_lambda: Vec<DVector<f64>> =
        (0..steps.len()).map(|t| &v_incremental[t + 1] * &epsilon[t] * nu).collect();
    let tt = steps.len();
    let mut h_to_end = vec![DMatrix::identity(d, d); tt + 1];
    for j in (0..tt).rev() {
        h_to_end[j] = &h_to_end[j + 1] * (DMatrix::identity(d, d) + &big_lambda[j]);
    }
    Ok(DriftChain { sign, nu, v_direct, v_incremental, steps, big_lambda, epsilon, small_lambda, h_to_end })
}

impl DriftChain {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// H_{i,j} = (I + Λ_{i-1}) ... (I + Λ_j); identity when i = j.
    pub fn h(&self, i: usize, j: usize) -> DMatrix<f64> {
        let d = self.v_direct[0].nrows();
        let mut out = DMatrix::identity(d, d);
        for k in j..i {
            out = (DMatrix::identity(d, d) + &self.big_lambda[k]) * out;
        }
        out
    }

    /// Largest relative Frobenius gap between incremental and dense V_t.
    pub fn sherman_morrison_error(&self) -> f64 {
        self.v_direct
            .iter()
            .zip(&self.v_incremental)
            .map(|(a, b)| (a - b).norm() / a.norm())
            .fold(0.0, f64::max)
    }

    /// Σ_t H_{T,t+1} λ_t + (H_{T,0} - I) θ0.
    pub fn predicted_drift(&self, theta0: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.h_to_end[0] * theta0 - theta0;
        for (t, lam) in self.small_lambda.iter().enumerate() {
            out += &self.h_to_end[t + 1] * lam;
        }
        out
    }

    /// Per-step spectral checks on Λ_t via the symmetric similar form V^{1/2} U V^{1/2}.
    pub fn step_diagnostics(&self) -> Vec<StepDiagnostics> {
        (0..self.len())
            .map(|t| {
                let st = &self.steps[t];
                let c_max = st.c0.abs().max(st.c1.abs()).max(st.c2.abs());
                let eig = SymmetricEigen::new(self.v_incremental[t].clone());
                let (lambda_max, min_eig_shifted) = if eig.eigenvalues.min() > 0.0 {
                    let root = &eig.eigenvectors
                        * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt))
                        * eig.eigenvectors.transpose();
                    let sym = &root * &st.u * &root;
                    let sym = (&sym + sym.transpose()) * 0.5;
                    let ev = SymmetricEigen::new(sym).eigenvalues;
                    (ev.amax(), 1.0 + ev.min())
                } else {
                    (f64::NAN, f64::NAN)
                };
                StepDiagnostics { step: t + 1, c_max, lambda_max, min_eig_shifted }
            })
            .collect()
    }

    pub fn v_max_eigenvalues(&self) -> Vec<f64> {
        self.v_incremental
            .iter()
            .map(|v| SymmetricEigen::new(v.clone()).eigenvalues.max())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    /// max(|c0|, |c1|, |c2|) at this step.
    pub c_max: f64,
    /// Spectral radius of Λ_{step-1}.
    pub lambda_max: f64,
    /// Smallest eigenvalue of I + Λ_{step-1}.
    pub min_eig_shifted: f64,
}

/// ‖(θT - θ0) - predicted‖ / ‖θ0‖.
pub fn verify_exact_drift(chain: &DriftChain, theta0: &LinearModel, theta_t: &LinearModel) -> f64 {
    let lhs = &theta_t.theta - &theta0.theta;
    let gap = (lhs - chain.predicted_drift(&theta0.theta)).norm();
    let n0 = theta0.norm();
    if n0 == 0.0 {
        gap
    } else {
        gap / n0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationBound {
    pub t_squared_form: f64,
    pub alpha_form: Option<f64>,
    pub rhs: f64,
}

pub fn deviation_bound(kp: &KeyParams, profile: &AccuracyProfile, t: usize, m: usize) -> Result<DeviationBound> {
    if kp.delta_theta == 0.0 {
        return Err(Error::Degenerate("delta_theta = 0, deviation ratio undefined".into()));
    }
    if t == 0 {
        return Ok(DeviationBound { t_squared_form: 0.0, alpha_form: Some(0.0), rhs: 0.0 });
    }
    let factor = 1.0 + kp.delta_perm / kp.delta_theta;
    let t_squared_form = profile.xi / m as f64 * (t * t) as f64 * factor;
    let alpha_form = kp.c_of_m.map(|c| c * factor);
    let rhs = alpha_form.map_or(t_squared_form, |a| a.min(t_squared_form));
    Ok(DeviationBound { t_squared_form, alpha_form, rhs })
}

/// Margin above which the resolved model must agree in sign with the ideal one.
pub fn immunity_threshold(kp: &KeyParams, profile: &AccuracyProfile, m: usize) -> Result<f64> {
    let alpha = profile
        .alpha
        .value()
        .ok_or_else(|| Error::Degenerate("alpha undefined (unbounded-violation)".into()))?;
    Ok((kp.delta_theta + kp.delta_perm) * (profile.xi / m as f64).powf(alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGapBound {
    pub rhs: f64,
    pub a: f64,
}

pub fn loss_gap_bound(kp: &KeyParams, spec: &TaylorLossSpec, loss: &SourceLoss, d: usize) -> Result<LossGapBound> {
    let c_of_m = kp.c_of_m.ok_or_else(|| Error::Degenerate("C(m) undefined".into()))?;
    let reg = d as f64 * spec.gamma * spec.reg_eig_max() / (kp.x_star * kp.x_star);
    let a = loss.f1.abs() * kp.delta_set
        + (3.0 * kp.delta_theta + 2.0 * kp.delta_perm) * (spec.curvature().abs() + reg);
    Ok(LossGapBound { rhs: c_of_m * (kp.delta_theta + kp.delta_perm) * a, a })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationBound {
    pub q: f64,
    pub penalty: f64,
    pub total: f64,
    pub lipschitz: f64,
    pub rademacher: f64,
    pub theta_radius: f64,
}

/// Radius of the ball holding every ridge optimum: |F'(0)| X_* / (2γ λ_min(Γ)).
pub fn theta_radius(spec: &TaylorLossSpec, loss: &SourceLoss, x_star: f64) -> f64 {
    loss.f1.abs() * x_star / (2.0 * spec.gamma * spec.reg_eig_min())
}

/// |b| X_* + 2|c| X_*² θ_*: Lipschitz constant of the per-example Taylor term in the margin-bounded ball.
pub fn default_lipschitz(spec: &TaylorLossSpec, loss: &SourceLoss, x_star: f64) -> f64 {
    spec.b.abs() * x_star + 2.0 * spec.c.abs() * x_star * x_star * theta_radius(spec, loss, x_star)
}

pub fn generalization_report(
    kp: &KeyParams,
    spec: &TaylorLossSpec,
    loss: &SourceLoss,
    m: usize,
    delta: f64,
    lipschitz: Option<f64>,
    ideal_loss: f64,
) -> Result<GeneralizationBound> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence delta {delta} outside (0, 1)")));
    }
    let gap = loss_gap_bound(kp, spec, loss, spec.dim())?;
    let c_of_m = kp.c_of_m.ok_or_else(|| Error::Degenerate("C(m) undefined".into()))?;
    let mf = m as f64;
    let radius = theta_radius(spec, loss, kp.x_star);
    let lip = lipschitz.unwrap_or_else(|| default_lipschitz(spec, loss, kp.x_star));
    let rademacher = kp.x_star * radius / mf.sqrt();
    let q = ideal_loss + 2.0 * lip * rademacher + ((2.0 / delta).ln() / (2.0 * mf)).sqrt();
    let penalty = c_of_m * (kp.delta_theta + kp.delta_perm) * (gap.a + 2.0 * lip / mf.sqrt());
    Ok(GeneralizationBound { q, penalty, total: q + penalty, lipschitz: lip, rademacher, theta_radius: radius })
}

/// Why a bound was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suppression {
    AlphaUnbounded,
    DegenerateOptimum,
    ChainCapExceeded,
    ChainNotInvertible,
}

impl fmt::Display for Suppression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// α as a number, or the marker string when the size condition fails.
fn ser_alpha<S: Serializer>(a: &Alpha, s: S) -> std::result::Result<S::Ok, S::Error> {
    match a {
        Alpha::Bounded(v) => s.serialize_f64(*v),
        Alpha::UnboundedViolation => s.serialize_str("unbounded-violation"),
    }
}

fn de_alpha<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Alpha, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Marker(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(Alpha::Bounded(v)),
        Raw::Marker(s) if s == "unbounded-violation" => Ok(Alpha::UnboundedViolation),
        Raw::Marker(s) => Err(serde::de::Error::custom(format!("bad alpha {s:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub residual: f64,
    pub sherman_morrison_error: f64,
    pub max_c: f64,
    pub max_lambda: f64,
    pub min_eig_shifted: f64,
    /// Eigenvalue sandwich on V_t (estimate, warning only).
    pub sandwich_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Empirical {
    pub deviation: f64,
    pub loss_gap: f64,
    pub min_immunity_margin: Option<f64>,
    pub flips_above_kappa: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub epsilon: f64,
    pub tau: f64,
    pub xi: f64,
    #[serde(serialize_with = "ser_alpha", deserialize_with = "de_alpha")]
    pub alpha: Alpha,
    pub rho: f64,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "T_plus")]
    pub t_plus: usize,
    pub delta_theta: f64,
    pub delta_perm: f64,
    pub delta_set: f64,
    pub c_of_m: Option<f64>,
    pub calibration: CalibrationReport,
    pub preconditions_hold: bool,
    pub deviation: Option<DeviationBound>,
    pub immunity_kappa_min: Option<f64>,
    pub loss_gap: Option<LossGapBound>,
    pub generalization: Option<GeneralizationBound>,
    pub empirical: Empirical,
    pub chain: Option<ChainSummary>,
    pub suppressed: Vec<Suppression>,
    /// Empirical quantities above their bound while every precondition held.
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    pub seed: u64,
    pub delta: f64,
    pub chain_cap: usize,
    pub dim_cap: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { seed: 0, delta: 0.05, chain_cap: DEFAULT_CHAIN_CAP, dim_cap: DEFAULT_DIM_CAP }
    }
}

/// Solve on S and on S with its shuffle block permuted by `pi`, then evaluate every bound.
pub fn audit(
    s: &LabeledDataset,
    blocks: &RowBlocks,
    pi: &[usize],
    spec: &TaylorLossSpec,
    loss: &SourceLoss,
    opts: &AuditOptions,
) -> Result<BoundReport> {
    let m = s.len();
    let resolved = s.with_permuted_rows(&blocks.shuffle, pi)?;
    let theta0 = solve_taylor(s, spec)?;
    let theta_t = solve_taylor(&resolved, spec)?;
    let seq = factorize(pi, s.labels())?;
    let profile = estimate_accuracy(s, &seq, blocks);
    let kp = compute_key_params(&theta0, s, &profile, &seq);
    let calibration = check_calibration(s, spec, &profile, loss, opts.seed);
    let mut suppressed = Vec::new();

    let deviation = match deviation_bound(&kp, &profile, seq.len(), m) {
        Ok(b) => Some(b),
        Err(_) => {
            suppressed.push(Suppression::DegenerateOptimum);
            None
        }
    };
    let alpha_ok = profile.alpha.value().is_some();
    if !alpha_ok {
        suppressed.push(Suppression::AlphaUnbounded);
    }
    let kappa = if alpha_ok { immunity_threshold(&kp, &profile, m).ok() } else { None };
    let loss_gap = if alpha_ok { loss_gap_bound(&kp, spec, loss, s.dim()).ok() } else { None };
    let ideal_loss = taylor_loss_value(s, &theta0, spec)?;
    let generalization =
        if alpha_ok { generalization_report(&kp, spec, loss, m, opts.delta, None, ideal_loss).ok() } else { None };

    let n0 = theta0.norm();
    let drift = (&theta_t.theta - &theta0.theta).norm();
    let deviation_emp = if n0 > 0.0 { drift / n0 } else { drift };
    let loss_gap_emp = taylor_loss_value(s, &theta_t, spec)? - ideal_loss;
    let immunity = margin_immunity_analysis(&theta0, &theta_t, s);
    let flips_above_kappa = kappa.map(|k| {
        theta0
            .margins(s)
            .iter()
            .zip(theta_t.margins(s))
            .filter(|(z0, zt)| **z0 > k && *zt <= 0.0)
            .count()
    });

    let chain = match build_drift_chain_capped(s, blocks, &seq, spec, opts.chain_cap, opts.dim_cap) {
        Ok(ch) => Some(summarize_chain(&ch, s, spec, &theta0, &theta_t, opts.seed)),
        Err(Error::ChainCap { .. }) => {
            suppressed.push(Suppression::ChainCapExceeded);
            None
        }
        Err(Error::NotInvertible { .. }) => {
            suppressed.push(Suppression::ChainNotInvertible);
            None
        }
        Err(e) => return Err(e),
    };

    let preconditions_hold = calibration.passes() && alpha_ok && n0 > 0.0;
    let mut violations = Vec::new();
    if preconditions_hold {
        if let Some(b) = &deviation {
            if deviation_emp > b.rhs {
                violations.push(format!("deviation {deviation_emp:e} > {:e}", b.rhs));
            }
        }
        if let Some(g) = &loss_gap {
            if loss_gap_emp > g.rhs {
                violations.push(format!("loss gap {loss_gap_emp:e} > {:e}", g.rhs));
            }
        }
        if let Some(f) = flips_above_kappa {
            if f > 0 {
                violations.push(format!("{f} sign flips above kappa_min"));
            }
        }
    }

    Ok(BoundReport {
        epsilon: profile.epsilon,
        tau: profile.tau,
        xi: profile.xi,
        alpha: profile.alpha,
        rho: seq.rho(),
        t: seq.len(),
        t_plus: seq.t_plus,
        delta_theta: kp.delta_theta,
        delta_perm: kp.delta_perm,
        delta_set: kp.delta_set,
        c_of_m: kp.c_of_m,
        calibration,
        preconditions_hold,
        deviation,
        immunity_kappa_min: kappa,
        loss_gap,
        generalization,
        empirical: Empirical {
            deviation: deviation_emp,
            loss_gap: loss_gap_emp,
            min_immunity_margin: immunity.minimal_margin,
            flips_above_kappa,
        },
        chain,
        suppressed,
        violations,
    })
}

fn summarize_chain(
    ch: &DriftChain,
    s: &LabeledDataset,
    spec: &TaylorLossSpec,
    theta0: &LinearModel,
    theta_t: &LinearModel,
    seed: u64,
) -> ChainSummary {
    let diag = ch.step_diagnostics();
    let fold = |f: fn(&StepDiagnostics) -> f64, init: f64, pick: fn(f64, f64) -> f64| {
        diag.iter().map(f).fold(init, pick)
    };
    let m = s.len() as f64;
    let x = s.features();
    let m_min = direction_set(x, CALIBRATION_DIRECTIONS, seed)
        .iter()
        .map(|w| (x.transpose() * w).map(|v| v * v).sum() / m)
        .fold(f64::INFINITY, f64::min);
    let cap = (1.0 / m) / (m_min + 2.0 * spec.gamma * spec.reg_eig_min() / spec.curvature().abs());
    let sandwich_holds = ch.sign() < 0.0 || ch.v_max_eigenvalues().iter().all(|&l| l <= cap * (1.0 + 1e-9));
    if !sandwich_holds {
        log::warn!("eigenvalue sandwich on V_t not met (estimate)");
    }
    ChainSummary {
        residual: verify_exact_drift(ch, theta0, theta_t),
        sherman_morrison_error: ch.sherman_morrison_error(),
        max_c: fold(|d| d.c_max, 0.0, f64::max),
        max_lambda: fold(|d| d.lambda_max, 0.0, f64::max),
        min_eig_shifted: if diag.is_empty() { 1.0 } else { fold(|d| d.min_eig_shifted, f64::INFINITY, f64::min) },
        sandwich_holds,
    }
}
