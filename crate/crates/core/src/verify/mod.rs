//! Numerical certificates for the necessary conditions satisfied by
//! minimizers and by the Lax-Oleinik evolution.

mod curve;
mod grid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{csv_row, fmt_f64};
use crate::model::ModelSpec;

pub use curve::{energy_e, erdmann_residual, herglotz_residual, weighted_time_derivative, EnergySamples};
pub use grid::{
    default_smoothness_threshold, dynamic_programming_check, viscosity_residual, ViscosityOptions,
};

/// Residual summary plus the per-sample table it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub name: String,
    pub sup_residual: f64,
    /// Root-mean-square of the sample residuals.
    pub l2_residual: f64,
    pub grid_n: usize,
    /// Column names of `details`; the last column is the residual.
    pub columns: Vec<String>,
    pub details: Vec<Vec<f64>>,
    /// Sample points skipped by the check (e.g. excluded kinks).
    #[serde(default)]
    pub excluded: usize,
}

impl ResidualReport {
    pub(crate) fn from_rows(name: &str, grid_n: usize, columns: &[&str], details: Vec<Vec<f64>>) -> Self {
        let residuals: Vec<f64> = details.iter().map(|r| *r.last().expect("row")).collect();
        let sup = residuals.iter().fold(0.0f64, |a, r| a.max(r.abs()));
        let l2 = if residuals.is_empty() {
            0.0
        } else {
            (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt()
        };
        ResidualReport {
            name: name.to_string(),
            sup_residual: sup,
            l2_residual: l2,
            grid_n,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            details,
            excluded: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per sample, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.details {
            out.push_str(&csv_row(row.iter().copied()));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        format!(
            "{}: sup={} l2={} N={} excluded={}",
            self.name,
            fmt_f64(self.sup_residual),
            fmt_f64(self.l2_residual),
            self.grid_n,
            self.excluded
        )
    }
}

/// Trapezoidal cumulative integral of `f` on the grid `s`.
pub fn cumulative_trapezoid(s: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(s.len());
    let mut acc = 0.0;
    for i in 0..s.len() {
        if i > 0 {
            acc += 0.5 * (s[i] - s[i - 1]) * (f[i] + f[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// Deviation of `g` from "an antiderivative of `f` plus a constant":
/// `sup |g − ∫f − mean(g − ∫f)|`.
pub fn dbr_constancy(s: &[f64], f: &[f64], g: &[f64]) -> Result<f64> {
    if s.len() != f.len() || s.len() != g.len() {
        return Err(Error::GridMismatch(format!(
            "sample lengths differ: s={}, f={}, g={}",
            s.len(),
            f.len(),
            g.len()
        )));
    }
    if s.is_empty() {
        return Err(Error::GridMismatch("empty grid".into()));
    }
    if s.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridMismatch("grid must be strictly increasing".into()));
    }
    let big_f = cumulative_trapezoid(s, f);
    let diff: Vec<f64> = g.iter().zip(&big_f).map(|(g, f)| g - f).collect();
    let mean = diff.iter().sum::<f64>() / diff.len() as f64;
    Ok(diff.iter().fold(0.0f64, |a, d| a.max((d - mean).abs())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCheck {
    pub pass: bool,
    /// Smallest decrease `f(ε_k) − f(ε_{k+1})` over consecutive grid points.
    pub margin: f64,
    /// `f(ε_max) − (−L(t, x, 0, u))`; must not be below `−1e-8`.
    pub limit_gap: f64,
    pub values: Vec<f64>,
}

/// Checks that `ε ↦ L_v(w)·w − L(w)`, `w = v/(1+ε)`, is non-increasing on
/// the sorted grid `eps_grid ⊂ (−1, ∞)` and stays above its limit `−L(t,x,0,u)`.
pub fn convexity_monotone_check(
    m: &ModelSpec,
    t: f64,
    x: &[f64],
    v: &[f64],
    u: f64,
    eps_grid: &[f64],
) -> Result<ConvexityCheck> {
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > -1.0)) {
        return Err(Error::InvalidInput(
            "eps grid must be non-empty and inside (-1, inf)".into(),
        ));
    }
    if eps_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("eps grid must be sorted".into()));
    }
    let values = eps_grid
        .iter()
        .map(|eps| {
            let w: Vec<f64> = v.iter().map(|c| c / (1.0 + eps)).collect();
            let d = m.lagrangian_derivs(t, x, &w, u)?;
            let l = m.lagrangian(t, x, &w, u)?;
            Ok(d.l_v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - l)
        })
        .collect::<Result<Vec<f64>>>()?;
    let margin = values
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    let margin = if margin.is_finite() { margin } else { 0.0 };
    let zero = vec![0.0; v.len()];
    let limit = -m.lagrangian(t, x, &zero, u)?;
    let limit_gap = values.last().expect("non-empty") - limit;
    let monotone = values.windows(2).all(|w| w[1] <= w[0] + 1e-10);
    Ok(ConvexityCheck {
        pass: monotone && limit_gap >= -1e-8,
        margin,
        limit_gap,
        values,
    })
}
