//! The Carathéodory equation `u̇ = L(s, ξ(s), ξ̇(s), u)` along a piecewise
//! linear curve, integrated with one classical RK4 step per curve interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;

/// Piecewise-linear curve on the uniform grid `s_i = a + i (b − a)/N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCurve {
    a: f64,
    b: f64,
    nodes: Vec<Vec<f64>>,
}

impl DiscreteCurve {
    pub fn new(a: f64, b: f64, nodes: Vec<Vec<f64>>) -> Result<Self> {
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput(format!("need a < b, got [{a}, {b}]")));
        }
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("a curve needs at least two nodes".into()));
        }
        let dim = nodes[0].len();
        if dim == 0 {
            return Err(Error::InvalidInput("nodes must have positive dimension".into()));
        }
        for n in &nodes {
            if n.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: n.len(),
                });
            }
            if n.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput("curve node is not finite".into()));
            }
        }
        Ok(DiscreteCurve { a, b, nodes })
    }

    /// Straight segment from `x` to `y` with `n` intervals.
    pub fn straight(a: f64, b: f64, x: &[f64], y: &[f64], n: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        if n == 0 {
            return Err(Error::InvalidInput("need at least one interval".into()));
        }
        let nodes = (0..=n)
            .map(|i| {
                let th = i as f64 / n as f64;
                x.iter().zip(y).map(|(p, q)| p + th * (q - p)).collect()
            })
            .collect();
        DiscreteCurve::new(a, b, nodes)
    }

    /// Samples `f(s)` at the grid times.
    pub fn from_fn(a: f64, b: f64, n: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("need at least one interval".into()));
        }
        let h = (b - a) / n as f64;
        DiscreteCurve::new(a, b, (0..=n).map(|i| f(a + i as f64 * h)).collect())
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    /// Number of intervals `N`.
    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step(&self) -> f64 {
        (self.b - self.a) / self.intervals() as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.intervals() {
            self.b
        } else {
            self.a + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i]
    }

    pub(crate) fn node_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.nodes[i]
    }

    /// Constant velocity on interval `i`.
    pub fn velocity(&self, i: usize) -> Vec<f64> {
        let inv = 1.0 / self.step();
        self.nodes[i + 1]
            .iter()
            .zip(&self.nodes[i])
            .map(|(q, p)| (q - p) * inv)
            .collect()
    }

    /// Position at fraction `theta ∈ [0, 1]` of interval `i`.
    pub fn lerp(&self, i: usize, theta: f64) -> Vec<f64> {
        self.nodes[i]
            .iter()
            .zip(&self.nodes[i + 1])
            .map(|(p, q)| p + theta * (q - p))
            .collect()
    }

    /// Position at time `s` (clamped to `[a, b]`).
    pub fn position(&self, s: f64) -> Vec<f64> {
        let n = self.intervals();
        let rel = ((s - self.a) / self.step()).clamp(0.0, n as f64);
        let i = (rel.floor() as usize).min(n - 1);
        self.lerp(i, rel - i as f64)
    }

    pub fn max_speed(&self) -> f64 {
        (0..self.intervals())
            .map(|i| norm(&self.velocity(i)))
            .fold(0.0, f64::max)
    }

    /// Splits at node `k` into `[a, s_k]` and `[s_k, b]`.
    pub fn split(&self, k: usize) -> Result<(DiscreteCurve, DiscreteCurve)> {
        if k == 0 || k >= self.intervals() {
            return Err(Error::InvalidInput(format!("split node {k} must be interior")));
        }
        let s = self.time(k);
        Ok((
            DiscreteCurve::new(self.a, s, self.nodes[..=k].to_vec())?,
            DiscreteCurve::new(s, self.b, self.nodes[k..].to_vec())?,
        ))
    }

    /// Linear interpolation onto a grid with `n` intervals.
    pub fn resample(&self, n: usize) -> Result<DiscreteCurve> {
        DiscreteCurve::from_fn(self.a, self.b, n, |s| self.position(s))
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Initial,
    Terminal,
}

/// `u_ξ` sampled on the curve's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaraSolution {
    pub u: Vec<f64>,
    pub direction: Direction,
}

/// One RK4 step over interval `i` with step `h` (negative for backward).
fn rk4_step(m: &ModelSpec, c: &DiscreteCurve, i: usize, u: f64, backward: bool) -> Result<f64> {
    let v = c.velocity(i);
    let (s0, s1) = (c.time(i), c.time(i + 1));
    let mid = c.lerp(i, 0.5);
    let (start, end, s_start, s_end, h) = if backward {
        (c.node(i + 1), c.node(i), s1, s0, s0 - s1)
    } else {
        (c.node(i), c.node(i + 1), s0, s1, s1 - s0)
    };
    let s_mid = 0.5 * (s0 + s1);
    let k1 = m.lagrangian(s_start, start, &v, u)?;
    let k2 = m.lagrangian(s_mid, &mid, &v, u + 0.5 * h * k1)?;
    let k3 = m.lagrangian(s_mid, &mid, &v, u + 0.5 * h * k2)?;
    let k4 = m.lagrangian(s_end, end, &v, u + h * k3)?;
    Ok(u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

fn checked(u: Result<f64>, interval: usize) -> Result<f64> {
    match u {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::Domain(_)) => Err(Error::Diverged { interval }),
        Err(e) => Err(e),
    }
}

/// Forward solve with `u(a) = u0`.
pub fn solve_ivp(m: &ModelSpec, c: &DiscreteCurve, u0: f64) -> Result<CaraSolution> {
    check_model_dim(m, c)?;
    let n = c.intervals();
    let mut u = Vec::with_capacity(n + 1);
    u.push(u0);
    let mut cur = u0;
    for i in 0..n {
        cur = checked(rk4_step(m, c, i, cur, false), i)?;
        u.push(cur);
    }
    Ok(CaraSolution {
        u,
        direction: Direction::Initial,
    })
}

/// Backward solve with `u(b) = u_terminal`.
pub fn solve_tvp(m: &ModelSpec, c: &DiscreteCurve, u_terminal: f64) -> Result<CaraSolution> {
    check_model_dim(m, c)?;
    let n = c.intervals();
    let mut u = vec![0.0; n + 1];
    u[n] = u_terminal;
    for i in (0..n).rev() {
        u[i] = checked(rk4_step(m, c, i, u[i + 1], true), i)?;
    }
    Ok(CaraSolution {
        u,
        direction: Direction::Terminal,
    })
}

pub(crate) fn check_model_dim(m: &ModelSpec, c: &DiscreteCurve) -> Result<()> {
    if m.dim() != c.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: c.dim(),
        });
    }
    Ok(())
}
