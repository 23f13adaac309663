//! Explicit a-priori bounds on minimizers and the search radius of the
//! Lax-Oleinik infimum. All constants use the quadratic envelopes of
//! [`AssumptionConstants`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssumptionConstants, ModelSpec};
use crate::varmin::MinimizeResult;

/// `sup_{s∈(0,t]} (e^{Ks} − 1)/s = (e^{Kt} − 1)/t`, zero when `K = 0`.
pub fn c_t(k: f64, t: f64) -> f64 {
    if k == 0.0 {
        0.0
    } else {
        (k * t).exp_m1() / t
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon must be positive, got {t}")));
    }
    Ok(())
}

/// `(F1, F2)` for horizon `t`, endpoint distance `R` and initial value `u`:
/// `|u_ξ − u| ≤ t·F1` and `∫|L| ≤ F2` on minimizers.
pub fn apriori_f1_f2(k: &AssumptionConstants, t: f64, r: f64, u: f64) -> Result<(f64, f64)> {
    check_t(t)?;
    let ekt = (k.k * t).exp();
    let f1 = 3.0 * c_t(k.k, t) * ekt * u.abs() + 2.0 * ekt * ekt * (k.thetabar0(r / t) + k.c0);
    let f2 = 2.0 * k.c0 + (1.0 + k.k * t) * f1;
    Ok((f1, f2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub t: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub u: f64,
    pub constants: AssumptionConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    #[serde(rename = "F1")]
    pub f1: f64,
    #[serde(rename = "F2")]
    pub f2: f64,
    #[serde(rename = "F3")]
    pub f3: f64,
    #[serde(rename = "F4")]
    pub f4: f64,
    #[serde(rename = "F5")]
    pub f5: f64,
    #[serde(rename = "F6")]
    pub f6: f64,
    #[serde(rename = "F7")]
    pub f7: f64,
    /// Bound on `ess sup |ξ̇|`.
    #[serde(rename = "F8")]
    pub f8: f64,
    /// Search radius, when a Lipschitz-in-the-large certificate was supplied.
    pub r_min: Option<f64>,
    pub inputs: BoundInputs,
}

/// Velocity bound chain. The essential-infimum speed bound entering `F3` is
/// `R/t`, and the action bound `F4` is `F2`.
pub fn lip_bound_chain(k: &AssumptionConstants, t: f64, r: f64, u: f64) -> Result<BoundsReport> {
    check_t(t)?;
    if !(r >= 0.0) {
        return Err(Error::InvalidInput(format!("R must be >= 0, got {r}")));
    }
    let (f1, f2) = apriori_f1_f2(k, t, r, u)?;
    let kk = k.k;
    let ekt = (kk * t).exp();
    let f3 = 2.0 * k.c0 + 3.0 * kk * f1 + k.thetabar0(2.0 * r / t) + k.c1;
    let f4 = f2;
    let f5 = ekt * (f3 + k.big_c1 * t + k.big_c2 * f4);
    let f6 = ekt * f5;
    let f7 = k.thetabar0(1.0) + k.c1 + kk * f1;
    let f8 = k.theta0_star(f6 + f7 + 1.0) + k.c0 + f7 + kk * f1;
    Ok(BoundsReport {
        f1,
        f2,
        f3,
        f4,
        f5,
        f6,
        f7,
        f8,
        r_min: None,
        inputs: BoundInputs {
            t,
            r,
            u,
            constants: *k,
        },
    })
}

/// Radius containing every minimizing source point `y` of the negative
/// Lax-Oleinik operator at target `x`, for data that is Lipschitz in the
/// large with constants `(κ1, κ2)`.
pub fn search_radius(
    k: &AssumptionConstants,
    t1: f64,
    t2: f64,
    kappa1: f64,
    kappa2: f64,
    phi_x_abs: f64,
) -> Result<f64> {
    if !(t2 > t1) {
        return Err(Error::InvalidInput(format!("need t1 < t2, got [{t1}, {t2}]")));
    }
    if !(kappa1 >= 0.0 && kappa2 >= 0.0) {
        return Err(Error::InvalidInput("kappa1 and kappa2 must be >= 0".into()));
    }
    let dt = t2 - t1;
    let c = 2.0 * k.k;
    let a = kappa2 + (2.0 * k.k * dt).exp();
    Ok(kappa1 + (k.c0 + k.thetabar0(0.0) + k.theta0_star(a) + phi_x_abs.abs() * c) * dt)
}

/// `K_ε = ε/δ(ε)` for each tabulated modulus pair.
pub fn lip_in_large_from_modulus(delta_of_eps: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    delta_of_eps
        .iter()
        .map(|&(eps, delta)| {
            if !(delta > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "modulus delta must be > 0, got {delta}"
                )));
            }
            Ok((eps, eps / delta))
        })
        .collect()
}

/// Largest sampled `δ` with `|x − y| < δ ⇒ |f(x) − f(y)| ≤ ε`: the smallest
/// distance between two samples whose values differ by more than `ε`.
/// Infinite when no pair does.
pub fn modulus_from_samples(points: &[Vec<f64>], values: &[f64], eps: f64) -> Result<f64> {
    if points.len() != values.len() {
        return Err(Error::GridMismatch(format!(
            "{} points but {} values",
            points.len(),
            values.len()
        )));
    }
    let mut delta = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if (values[i] - values[j]).abs() > eps {
                delta = delta.min(distance(&points[i], &points[j]));
            }
        }
    }
    Ok(delta)
}

/// `max ((|f(x) − f(y)| − ε)⁺ / |x − y|)` over sample pairs: the smallest `K`
/// with `|f(x) − f(y)| ≤ K|x − y| + ε` on the samples.
pub fn worst_lip_ratio(points: &[Vec<f64>], values: &[f64], eps: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = distance(&points[i], &points[j]);
            if d > 0.0 {
                worst = worst.max(((values[i] - values[j]).abs() - eps).max(0.0) / d);
            }
        }
    }
    worst
}

/// `max |f(x) − f(y)|/|x − y|` over sample pairs at distance at least `delta`:
/// the slope a Lipschitz-in-the-large constant has to match at scale `δ`.
pub fn coarse_lip_ratio(points: &[Vec<f64>], values: &[f64], delta: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d = distance(&points[i], &points[j]);
            if d >= delta && d > 0.0 {
                worst = worst.max((values[i] - values[j]).abs() / d);
            }
        }
    }
    worst
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Margins of a computed minimizer against `(F1, F2, F8)`; nonnegative means
/// the bound holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizerBoundCheck {
    pub u_deviation: f64,
    pub action_abs: f64,
    pub max_speed: f64,
    pub margin_f1: f64,
    pub margin_f2: f64,
    pub margin_f8: f64,
    pub report: BoundsReport,
}

impl MinimizerBoundCheck {
    pub fn holds(&self) -> bool {
        self.margin_f1 >= 0.0 && self.margin_f2 >= 0.0 && self.margin_f8 >= 0.0
    }
}

/// Evaluates the minimizer-side quantities bounded by the chain: `sup|u_ξ − u0|`,
/// `∫|L|` by the midpoint rule and the largest interval speed.
pub fn check_minimizer(m: &ModelSpec, res: &MinimizeResult, u0: f64) -> Result<MinimizerBoundCheck> {
    let c = &res.curve;
    let t = c.b() - c.a();
    let n = c.intervals();
    let x = c.node(0);
    let y = c.node(n);
    let r = distance(x, y);
    let report = lip_bound_chain(&m.constants, t, r, u0)?;
    let u_deviation = res.cara.u.iter().fold(0.0f64, |a, u| a.max((u - u0).abs()));
    let h = c.step();
    let mut action_abs = 0.0;
    for i in 0..n {
        let s = c.time(i) + 0.5 * h;
        let u = 0.5 * (res.cara.u[i] + res.cara.u[i + 1]);
        action_abs += h * m.lagrangian(s, &c.lerp(i, 0.5), &c.velocity(i), u)?.abs();
    }
    let max_speed = c.max_speed();
    Ok(MinimizerBoundCheck {
        u_deviation,
        action_abs,
        max_speed,
        margin_f1: t * report.f1 - u_deviation,
        margin_f2: report.f2 - action_abs,
        margin_f8: report.f8 - max_speed,
        report,
    })
}
