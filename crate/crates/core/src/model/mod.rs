//! Contact Lagrangians of the form
//!
//! ```text
//! L(t, x, v, u) = ½ v·Av − V(t, x) + g(u)
//! ```
//!
//! with a constant symmetric positive definite kinetic matrix `A`, a symbolic
//! potential `V` and a discount `g`. The Hamiltonian is the closed-form
//! Legendre transform `H(t, x, p, u) = ½ p·A⁻¹p + V(t, x) − g(u)`.

mod audit;
pub mod expr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use audit::{audit_assumptions, AuditBox, AuditReport, ConditionMargin};
pub use expr::{Expr, Var};

/// The `u`-coupling `g(u)` of the Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discount {
    /// `g(u) = −λu`
    Linear(f64),
    /// `g(u) = −κ tanh(u)`
    Saturating(f64),
}

impl Discount {
    pub fn value(self, u: f64) -> f64 {
        match self {
            Discount::Linear(lambda) => -lambda * u,
            Discount::Saturating(kappa) => -kappa * u.tanh(),
        }
    }

    pub fn slope(self, u: f64) -> f64 {
        match self {
            Discount::Linear(lambda) => -lambda,
            Discount::Saturating(kappa) => {
                let th = u.tanh();
                -kappa * (1.0 - th * th)
            }
        }
    }

    /// `sup_u |g'(u)|`.
    pub fn lipschitz(self) -> f64 {
        match self {
            Discount::Linear(lambda) => lambda.abs(),
            Discount::Saturating(kappa) => kappa.abs(),
        }
    }
}

/// Constants of the standing assumptions on `[a, b]`, with quadratic
/// envelopes `θ₀(r) = θ₀·r²` and `θ̄₀(r) = θ̄₀·r² + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    #[serde(rename = "K")]
    pub k: f64,
    pub c0: f64,
    pub c1: f64,
    pub theta0_coeff: f64,
    pub thetabar0_coeff: f64,
    #[serde(default)]
    pub thetabar0_offset: f64,
    #[serde(rename = "C1", default)]
    pub big_c1: f64,
    #[serde(rename = "C2", default)]
    pub big_c2: f64,
}

impl AssumptionConstants {
    /// Constants of the free Lagrangian `½|v|²`.
    pub fn free() -> Self {
        AssumptionConstants {
            k: 0.0,
            c0: 0.0,
            c1: 0.0,
            theta0_coeff: 0.5,
            thetabar0_coeff: 0.5,
            thetabar0_offset: 0.0,
            big_c1: 0.0,
            big_c2: 0.0,
        }
    }

    pub fn theta0(&self, r: f64) -> f64 {
        self.theta0_coeff * r * r
    }

    pub fn thetabar0(&self, r: f64) -> f64 {
        self.thetabar0_coeff * r * r + self.thetabar0_offset
    }

    /// Convex conjugate of `θ₀` on `[0, ∞)`: `a²/(4θ₀)`.
    pub fn theta0_star(&self, a: f64) -> f64 {
        a * a / (4.0 * self.theta0_coeff)
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("K", self.k),
            ("c0", self.c0),
            ("c1", self.c1),
            ("thetabar0_offset", self.thetabar0_offset),
            ("C1", self.big_c1),
            ("C2", self.big_c2),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("theta0_coeff", self.theta0_coeff),
            ("thetabar0_coeff", self.thetabar0_coeff),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A scalar field `V(t, x)` with precomputed symbolic partials.
#[derive(Debug, Clone)]
pub struct Potential {
    expr: Expr,
    d_t: Expr,
    d_x: Vec<Expr>,
}

impl Potential {
    pub fn new(expr: Expr, dim: usize) -> Result<Self> {
        if let Some(i) = expr.max_x_index() {
            if i >= dim {
                return Err(Error::VariableOutOfRange { index: i + 1, dim });
            }
        }
        let d_t = expr.derivative(Var::T);
        let d_x = (0..dim).map(|i| expr.derivative(Var::X(i))).collect();
        Ok(Potential { expr, d_t, d_x })
    }

    pub fn parse(source: &str, dim: usize) -> Result<Self> {
        Potential::new(Expr::parse(source)?, dim)
    }

    pub fn zero(dim: usize) -> Self {
        Potential::new(Expr::Num(0.0), dim).expect("constant potential")
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn value(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.expr.eval(t, x)
    }

    pub fn dt(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.d_t.eval(t, x)
    }

    pub fn gradient(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.d_x.iter().map(|d| d.eval(t, x)).collect()
    }

    pub fn is_autonomous(&self) -> bool {
        !self.expr.depends_on_t()
    }
}

/// Partial derivatives of `L` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianDerivs {
    pub l_t: f64,
    pub l_x: Vec<f64>,
    pub l_v: Vec<f64>,
    pub l_u: f64,
}

/// Partial derivatives of `H` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianDerivs {
    pub h_t: f64,
    pub h_x: Vec<f64>,
    pub h_p: Vec<f64>,
    pub h_u: f64,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    dim: usize,
    kinetic: DMatrix<f64>,
    kinetic_inv: DMatrix<f64>,
    eig_min: f64,
    eig_max: f64,
    potential: Potential,
    pub discount: Discount,
    pub constants: AssumptionConstants,
}

impl ModelSpec {
    /// Builds a model; `kinetic` is the row-major `dim × dim` matrix `A`.
    pub fn new(
        dim: usize,
        kinetic: &[f64],
        potential: Potential,
        discount: Discount,
        constants: AssumptionConstants,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if kinetic.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: kinetic.len(),
            });
        }
        if potential.d_x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: potential.d_x.len(),
            });
        }
        let a = DMatrix::from_row_slice(dim, dim, kinetic);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "kinetic matrix has non-finite entries".into(),
            ));
        }
        let asym = (&a - a.transpose()).amax();
        if asym > 1e-12 * a.amax().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "kinetic matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        let eig_max = eig.max();
        let eig_min = eig.min();
        if !(eig_max > 0.0) || eig_min <= 1e-12 * eig_max {
            return Err(Error::InvalidInput(format!(
                "kinetic matrix is not positive definite (eigenvalues in [{eig_min:e}, {eig_max:e}])"
            )));
        }
        let kinetic_inv = a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidInput("kinetic matrix is singular".into()))?;
        if !discount_param(discount).is_finite() {
            return Err(Error::InvalidInput("discount parameter must be finite".into()));
        }
        constants.validate()?;
        Ok(ModelSpec {
            dim,
            kinetic: a,
            kinetic_inv,
            eig_min,
            eig_max,
            potential,
            discount,
            constants,
        })
    }

    /// `L = ½|v|² − V + g` with identity kinetic matrix.
    pub fn with_identity(
        dim: usize,
        potential: Potential,
        discount: Discount,
        constants: AssumptionConstants,
    ) -> Result<Self> {
        let eye = DMatrix::<f64>::identity(dim, dim);
        ModelSpec::new(dim, eye.transpose().as_slice(), potential, discount, constants)
    }

    /// The classical free Lagrangian `½|v|²` in dimension `dim`.
    pub fn free(dim: usize) -> Self {
        ModelSpec::with_identity(
            dim,
            Potential::zero(dim),
            Discount::Linear(0.0),
            AssumptionConstants::free(),
        )
        .expect("free model is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn kinetic(&self) -> &DMatrix<f64> {
        &self.kinetic
    }

    pub fn kinetic_eigen_range(&self) -> (f64, f64) {
        (self.eig_min, self.eig_max)
    }

    pub fn is_autonomous(&self) -> bool {
        self.potential.is_autonomous()
    }

    /// Soft invariants that are allowed to fail (they are audit content):
    /// `|g'| <= K` and the quadratic envelopes bracketing the kinetic term.
    pub fn invariant_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let c = &self.constants;
        if self.discount.lipschitz() > c.k {
            out.push(format!(
                "|g'| can reach {} > K = {}",
                self.discount.lipschitz(),
                c.k
            ));
        }
        if c.theta0_coeff > 0.5 * self.eig_min * (1.0 + 1e-12) {
            out.push(format!(
                "theta0_coeff {} exceeds half the smallest kinetic eigenvalue {}",
                c.theta0_coeff,
                0.5 * self.eig_min
            ));
        }
        if c.thetabar0_coeff < 0.5 * self.eig_max * (1.0 - 1e-12) {
            out.push(format!(
                "thetabar0_coeff {} is below half the largest kinetic eigenvalue {}",
                c.thetabar0_coeff,
                0.5 * self.eig_max
            ));
        }
        out
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok(())
    }

    fn quad(&self, m: &DMatrix<f64>, v: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                acc += v[i] * m[(i, j)] * v[j];
            }
        }
        0.5 * acc
    }

    fn apply(&self, m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| m[(i, j)] * v[j]).sum())
            .collect()
    }

    /// `A v`.
    pub fn kinetic_apply(&self, v: &[f64]) -> Vec<f64> {
        self.apply(&self.kinetic, v)
    }

    /// `A⁻¹ p`.
    pub fn kinetic_solve(&self, p: &[f64]) -> Vec<f64> {
        self.apply(&self.kinetic_inv, p)
    }

    /// `L(t, x, v, u)`.
    pub fn lagrangian(&self, t: f64, x: &[f64], v: &[f64], u: f64) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(v)?;
        let l = self.quad(&self.kinetic, v) - self.potential.value(t, x)? + self.discount.value(u);
        finite(l, "L")
    }

    pub fn lagrangian_derivs(&self, t: f64, x: &[f64], v: &[f64], u: f64) -> Result<LagrangianDerivs> {
        self.check_dim(x)?;
        self.check_dim(v)?;
        let l_t = -self.potential.dt(t, x)?;
        let l_x = self.potential.gradient(t, x)?.into_iter().map(|g| -g).collect();
        Ok(LagrangianDerivs {
            l_t,
            l_x,
            l_v: self.kinetic_apply(v),
            l_u: self.discount.slope(u),
        })
    }

    /// Legendre transform: returns `(H, v*)` with `v* = A⁻¹p` the maximizer of
    /// `p·v − L(t, x, v, u)`.
    pub fn legendre(&self, t: f64, x: &[f64], p: &[f64], u: f64) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x)?;
        self.check_dim(p)?;
        let v_star = self.kinetic_solve(p);
        let h = self.quad(&self.kinetic_inv, p) + self.potential.value(t, x)? - self.discount.value(u);
        Ok((finite(h, "H")?, v_star))
    }

    pub fn hamiltonian(&self, t: f64, x: &[f64], p: &[f64], u: f64) -> Result<f64> {
        self.legendre(t, x, p, u).map(|(h, _)| h)
    }

    pub fn hamiltonian_derivs(&self, t: f64, x: &[f64], p: &[f64], u: f64) -> Result<HamiltonianDerivs> {
        self.check_dim(x)?;
        self.check_dim(p)?;
        Ok(HamiltonianDerivs {
            h_t: self.potential.dt(t, x)?,
            h_x: self.potential.gradient(t, x)?,
            h_p: self.kinetic_solve(p),
            h_u: -self.discount.slope(u),
        })
    }
}

fn discount_param(d: Discount) -> f64 {
    match d {
        Discount::Linear(v) | Discount::Saturating(v) => v,
    }
}

pub(crate) fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{what} evaluated to {v}")))
    }
}
