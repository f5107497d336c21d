//! Cumulative error of the resolved model above each ideal-model margin.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::losses::LinearModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub margin: f64,
    pub cumulative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImmunityAnalysis {
    pub curve: Vec<CurvePoint>,
    /// Largest ideal margin carrying an error; `None` when errors reach the top margin.
    pub minimal_margin: Option<f64>,
    pub errors: usize,
}

pub fn margin_immunity_analysis(theta0: &LinearModel, theta_t: &LinearModel, s: &LabeledDataset) -> ImmunityAnalysis {
    let points: Vec<(f64, bool)> = theta0
        .margins(s)
        .into_iter()
        .zip(theta_t.margins(s))
        .map(|(z0, zt)| (z0, zt <= 0.0))
        .collect();
    immunity_from_points(&points)
}

/// Same analysis from (ideal margin, resolved-model error) pairs.
pub fn immunity_from_points(points: &[(f64, bool)]) -> ImmunityAnalysis {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let errors = pts.iter().filter(|p| p.1).count();
    let mut curve = Vec::new();
    let mut above = errors;
    let mut k = 0;
    while k < pts.len() {
        let x = pts[k].0;
        let frac = if errors == 0 { 0.0 } else { above as f64 / errors as f64 };
        curve.push(CurvePoint { margin: x, cumulative_error: frac });
        while k < pts.len() && pts[k].0 == x {
            if pts[k].1 {
                above -= 1;
            }
            k += 1;
        }
    }
    let minimal_margin = match pts.iter().rev().find(|p| p.1) {
        None => pts.first().map(|p| p.0),
        Some(&(kappa, _)) if pts.last().is_some_and(|top| top.0 > kappa) => Some(kappa),
        Some(_) => None,
    };
    ImmunityAnalysis { curve, minimal_margin, errors }
}
