//! Lax-Oleinik evolution of grid data in one or two space dimensions.
//!
//! Every grid node is a target; candidate sources are the grid nodes inside
//! the search radius, each scored with a shooting solve. Targets are
//! independent and run in parallel; the sweep over candidates inside one
//! target is sequential so that neighbouring solves can warm-start Newton.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::search_radius;
use crate::charflow::{shoot_value_neg, shoot_value_pos, ShootOptions, WarmStart};
use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::model::{Expr, ModelSpec};
use crate::verify::ResidualReport;

/// Samples on a uniform tensor grid, row-major with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    bounds: Vec<(f64, f64)>,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dim: usize,
    #[serde(rename = "box")]
    bounds: Vec<[f64; 2]>,
    shape: Vec<usize>,
}

impl GridFunction {
    pub fn new(bounds: Vec<(f64, f64)>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if bounds.is_empty() || bounds.len() > 2 || bounds.len() != shape.len() {
            return Err(Error::GridMismatch(format!(
                "grid needs 1 or 2 axes with matching shape, got {} bounds and {} sizes",
                bounds.len(),
                shape.len()
            )));
        }
        for (axis, (&(lo, hi), &n)) in bounds.iter().zip(&shape).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::GridMismatch(format!(
                    "axis {axis}: bad interval [{lo}, {hi}]"
                )));
            }
            if n < 2 {
                return Err(Error::GridMismatch(format!(
                    "axis {axis}: need at least 2 points, got {n}"
                )));
            }
        }
        let expected: usize = shape.iter().product();
        if values.len() != expected {
            return Err(Error::GridMismatch(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::GridMismatch(format!("value {i} is not finite")));
        }
        Ok(GridFunction {
            bounds,
            shape,
            values,
        })
    }

    pub fn from_fn(
        bounds: Vec<(f64, f64)>,
        shape: Vec<usize>,
        f: impl Fn(&[f64]) -> Result<f64>,
    ) -> Result<Self> {
        let len: usize = shape.iter().product();
        let probe = GridFunction {
            bounds: bounds.clone(),
            shape: shape.clone(),
            values: Vec::new(),
        };
        let values = (0..len).map(|k| f(&probe.point(k))).collect::<Result<Vec<_>>>()?;
        GridFunction::new(bounds, shape, values)
    }

    /// Samples an expression in `x1, x2` (evaluated at `t = 0`).
    pub fn from_expr(expr: &Expr, bounds: Vec<(f64, f64)>, shape: Vec<usize>) -> Result<Self> {
        if let Some(i) = expr.max_x_index() {
            if i > bounds.len() {
                return Err(Error::VariableOutOfRange {
                    index: i,
                    dim: bounds.len(),
                });
            }
        }
        GridFunction::from_fn(bounds, shape, |x| expr.eval(0.0, x))
    }

    /// Same grid, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        GridFunction::new(self.bounds.clone(), self.shape.clone(), values)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        (hi - lo) / (self.shape[axis] - 1) as f64
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        if i + 1 == self.shape[axis] {
            hi
        } else {
            lo + i as f64 * self.spacing(axis)
        }
    }

    pub fn unravel(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            idx[axis] = flat % self.shape[axis];
            flat /= self.shape[axis];
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.unravel(flat)
            .iter()
            .enumerate()
            .map(|(axis, &i)| self.coord(axis, i))
            .collect()
    }

    pub fn value_at(&self, idx: &[usize]) -> f64 {
        self.values[self.ravel(idx)]
    }

    pub fn same_grid(&self, other: &GridFunction) -> bool {
        self.bounds == other.bounds && self.shape == other.shape
    }

    /// `max − min` of the samples.
    pub fn oscillation(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(*v), b.max(*v))
            });
        hi - lo
    }

    /// Multilinear interpolation; points within a rounding margin of the box
    /// are clamped onto it.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut base = vec![0usize; self.dim()];
        let mut frac = vec![0.0; self.dim()];
        for axis in 0..self.dim() {
            let (lo, hi) = self.bounds[axis];
            let slack = 1e-9 * (hi - lo);
            if !(x[axis] >= lo - slack && x[axis] <= hi + slack) {
                return Err(Error::GridMismatch(format!(
                    "point {:?} outside the grid box on axis {axis}",
                    x
                )));
            }
            let pos = ((x[axis] - lo) / self.spacing(axis)).clamp(0.0, (self.shape[axis] - 1) as f64);
            let i = (pos.floor() as usize).min(self.shape[axis] - 2);
            base[axis] = i;
            frac[axis] = pos - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << self.dim()) {
            let mut w = 1.0;
            let mut idx = base.clone();
            for axis in 0..self.dim() {
                if corner >> axis & 1 == 1 {
                    idx[axis] += 1;
                    w *= frac[axis];
                } else {
                    w *= 1.0 - frac[axis];
                }
            }
            if w != 0.0 {
                acc += w * self.value_at(&idx);
            }
        }
        Ok(acc)
    }

    fn coord_names(&self) -> (Vec<&'static str>, Vec<&'static str>) {
        if self.dim() == 1 {
            (vec!["i"], vec!["x1"])
        } else {
            (vec!["i", "j"], vec!["x1", "x2"])
        }
    }

    /// `# axis,k,lo,hi,n` lines, a header row, then one row per node with the
    /// indices, coordinates and value.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for axis in 0..self.dim() {
            let (lo, hi) = self.bounds[axis];
            out.push_str(&format!(
                "# axis,{axis},{},{},{}\n",
                fmt_f64(lo),
                fmt_f64(hi),
                self.shape[axis]
            ));
        }
        let (idx, coords) = self.coord_names();
        out.push_str(&format!("{},{},value\n", idx.join(","), coords.join(",")));
        for k in 0..self.len() {
            let index = self.unravel(k);
            let mut fields: Vec<String> = index.iter().map(|i| i.to_string()).collect();
            fields.extend(self.point(k).into_iter().map(fmt_f64));
            fields.push(fmt_f64(self.values[k]));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    /// Inverse of [`GridFunction::to_csv`]. Other `#` lines are ignored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut axes: Vec<(usize, f64, f64, usize)> = Vec::new();
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let bad = |msg: &str| Error::Format(format!("line {}: {msg}", lineno + 1));
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# axis,") {
                let f: Vec<&str> = rest.split(',').collect();
                if f.len() != 4 {
                    return Err(bad("axis line needs k,lo,hi,n"));
                }
                let parse_f = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
                let parse_u = |s: &str| s.trim().parse::<usize>().map_err(|_| bad("bad integer"));
                axes.push((parse_u(f[0])?, parse_f(f[1])?, parse_f(f[2])?, parse_u(f[3])?));
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                continue;
            }
            rows.push((lineno + 1, line));
        }
        if axes.is_empty() {
            return Err(Error::Format("missing `# axis` lines".into()));
        }
        for (k, a) in axes.iter().enumerate() {
            if a.0 != k {
                return Err(Error::Format(format!("axis lines out of order at axis {k}")));
            }
        }
        let bounds: Vec<(f64, f64)> = axes.iter().map(|a| (a.1, a.2)).collect();
        let shape: Vec<usize> = axes.iter().map(|a| a.3).collect();
        let dim = shape.len();
        let expected: usize = shape.iter().product();
        if rows.len() != expected {
            return Err(Error::GridMismatch(format!(
                "axis lines declare {expected} nodes, found {} rows",
                rows.len()
            )));
        }
        let probe = GridFunction {
            bounds: bounds.clone(),
            shape: shape.clone(),
            values: Vec::new(),
        };
        let mut values = Vec::with_capacity(expected);
        for (k, (lineno, line)) in rows.into_iter().enumerate() {
            let bad = |msg: String| Error::Format(format!("line {lineno}: {msg}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 2 * dim + 1 {
                return Err(bad(format!("expected {} fields, found {}", 2 * dim + 1, f.len())));
            }
            let idx = f[..dim]
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| bad(format!("bad index `{s}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if idx != probe.unravel(k) {
                return Err(bad(format!("index {:?} out of row-major order", idx)));
            }
            let v = f[2 * dim]
                .trim()
                .parse::<f64>()
                .map_err(|_| bad(format!("bad value `{}`", f[2 * dim])))?;
            values.push(v);
        }
        GridFunction::new(bounds, shape, values)
    }

    /// Box and shape metadata as JSON.
    pub fn sidecar_json(&self) -> String {
        let s = Sidecar {
            dim: self.dim(),
            bounds: self.bounds.iter().map(|&(a, b)| [a, b]).collect(),
            shape: self.shape.clone(),
        };
        serde_json::to_string_pretty(&s).expect("sidecar serializes")
    }

    /// Checks a sidecar against this grid.
    pub fn check_sidecar(&self, json: &str) -> Result<()> {
        let s: Sidecar = serde_json::from_str(json).map_err(|e| Error::Format(e.to_string()))?;
        let bounds: Vec<(f64, f64)> = s.bounds.iter().map(|b| (b[0], b[1])).collect();
        if s.dim != self.dim() || bounds != self.bounds || s.shape != self.shape {
            return Err(Error::GridMismatch("sidecar disagrees with the CSV axes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    /// `inf_y {φ(y) + h(t1, t2, y, x, φ(y))}`
    Negative,
    /// `sup_y {φ(y) − h̆(t1, t2, x, y, φ(y))}`
    Positive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Lipschitz-in-the-large certificate `(κ1, κ2)` for the data. When
    /// absent, `(max φ − min φ, 0)` over the grid is used.
    pub kappa: Option<(f64, f64)>,
    /// Polish each argmin with a quadratic fit over its grid neighbours.
    pub refine: bool,
    pub shoot: ShootOptions,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            kappa: None,
            refine: false,
            shoot: ShootOptions {
                steps: 32,
                fallback: false,
                cross_check: false,
                ..ShootOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvolveStats {
    pub shooting_solves: usize,
    /// Candidates skipped because shooting failed.
    pub failed_candidates: usize,
    pub refined_targets: usize,
    pub max_refine_gain: f64,
}

impl EvolveStats {
    fn absorb(&mut self, o: &EvolveStats) {
        self.shooting_solves += o.shooting_solves;
        self.failed_candidates += o.failed_candidates;
        self.refined_targets += o.refined_targets;
        self.max_refine_gain = self.max_refine_gain.max(o.max_refine_gain);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveResult {
    pub u: GridFunction,
    /// Optimal source point per target, in grid order.
    pub argmin_y: Vec<Vec<f64>>,
    /// Search radius per target.
    pub radii: Vec<f64>,
    /// Largest radius over all targets.
    pub radius_used: f64,
    pub kappa: (f64, f64),
    pub stats: EvolveStats,
}

impl EvolveResult {
    /// One row per target: indices, target coordinates, argmin coordinates,
    /// distance and radius.
    pub fn argmin_csv(&self) -> String {
        let g = &self.u;
        let mut out = if g.dim() == 1 {
            String::from("i,x1,y1,distance,radius\n")
        } else {
            String::from("i,j,x1,x2,y1,y2,distance,radius\n")
        };
        for k in 0..g.len() {
            let x = g.point(k);
            let y = &self.argmin_y[k];
            let mut fields: Vec<String> = g.unravel(k).iter().map(|i| i.to_string()).collect();
            fields.extend(x.iter().chain(y.iter()).map(|v| fmt_f64(*v)));
            fields.push(fmt_f64(dist(&x, y)));
            fields.push(fmt_f64(self.radii[k]));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

/// Value of the operator at one target point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointValue {
    pub value: f64,
    pub argmin: Vec<f64>,
    pub radius: f64,
    pub stats: EvolveStats,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

struct Problem<'a> {
    m: &'a ModelSpec,
    phi: &'a GridFunction,
    t1: f64,
    t2: f64,
    op: Operator,
    kappa: (f64, f64),
    opts: &'a EvolveOptions,
}

impl Problem<'_> {
    fn better(&self, a: f64, b: f64) -> bool {
        match self.op {
            Operator::Negative => a < b,
            Operator::Positive => a > b,
        }
    }

    fn score(&self, x: &[f64], y: &[f64], phi_y: f64, warm: Option<&WarmStart>) -> Result<(f64, WarmStart)> {
        let so = &self.opts.shoot;
        match self.op {
            Operator::Negative => {
                shoot_value_neg(self.m, self.t1, self.t2, y, x, phi_y, warm, so).map(|(h, w)| (phi_y + h, w))
            }
            Operator::Positive => {
                shoot_value_pos(self.m, self.t1, self.t2, x, y, phi_y, warm, so).map(|(h, w)| (phi_y - h, w))
            }
        }
    }

    /// Scores with a warm start first and retries cold if that fails.
    fn score_robust(
        &self,
        x: &[f64],
        y: &[f64],
        phi_y: f64,
        warm: Option<&WarmStart>,
        stats: &mut EvolveStats,
    ) -> Option<(f64, WarmStart)> {
        stats.shooting_solves += 1;
        if let Ok(r) = self.score(x, y, phi_y, warm) {
            return Some(r);
        }
        if warm.is_some() {
            stats.shooting_solves += 1;
            if let Ok(r) = self.score(x, y, phi_y, None) {
                return Some(r);
            }
        }
        stats.failed_candidates += 1;
        None
    }

    fn evaluate(&self, x: &[f64], phi_x: f64) -> Result<PointValue> {
        let g = self.phi;
        let radius = search_radius(
            &self.m.constants,
            self.t1,
            self.t2,
            self.kappa.0,
            self.kappa.1,
            phi_x,
        )?;
        let slack = 1e-12 * (1.0 + radius);
        let mut lo = vec![0usize; g.dim()];
        let mut hi = vec![0usize; g.dim()];
        for axis in 0..g.dim() {
            let (a, _) = g.bounds[axis];
            let h = g.spacing(axis);
            let first = ((x[axis] - radius - a) / h).ceil().max(0.0);
            let last = ((x[axis] + radius - a) / h)
                .floor()
                .min((g.shape[axis] - 1) as f64);
            if first > last {
                return Err(Error::EmptyCandidates { radius, spacing: h });
            }
            lo[axis] = first as usize;
            hi[axis] = last as usize;
        }

        let mut stats = EvolveStats::default();
        let mut best: Option<(f64, Vec<usize>)> = None;
        let mut any_candidate = false;
        // previous two solves along the sweep, for warm starts
        let mut prev: Option<(Vec<usize>, WarmStart)> = None;
        let mut prev2: Option<(Vec<usize>, WarmStart)> = None;
        let mut idx = lo.clone();
        loop {
            let y: Vec<f64> = idx.iter().enumerate().map(|(a, &i)| g.coord(a, i)).collect();
            if dist(&y, x) <= radius + slack {
                any_candidate = true;
                let warm = warm_guess(&idx, prev.as_ref(), prev2.as_ref());
                match self.score_robust(x, &y, g.value_at(&idx), warm.as_ref(), &mut stats) {
                    Some((val, w)) => {
                        let improve = match &best {
                            None => true,
                            Some((b, _)) => self.better(val, *b),
                        };
                        if improve {
                            best = Some((val, idx.clone()));
                        }
                        prev2 = prev.take();
                        prev = Some((idx.clone(), w));
                    }
                    None => {
                        prev = None;
                        prev2 = None;
                    }
                }
            }
            if !advance(&mut idx, &lo, &hi) {
                break;
            }
        }
        if !any_candidate {
            return Err(Error::EmptyCandidates {
                radius,
                spacing: (0..g.dim()).map(|a| g.spacing(a)).fold(0.0, f64::max),
            });
        }
        let (mut value, best_idx) = best.ok_or(Error::NoConvergence {
            iterations: self.opts.shoot.max_newton,
            residual: f64::INFINITY,
        })?;
        let mut argmin: Vec<f64> = best_idx.iter().enumerate().map(|(a, &i)| g.coord(a, i)).collect();

        if self.opts.refine {
            if let Some((v, y)) = self.refine(x, &best_idx, value, radius, &mut stats) {
                stats.refined_targets += 1;
                stats.max_refine_gain = stats.max_refine_gain.max((v - value).abs());
                value = v;
                argmin = y;
            }
        }
        Ok(PointValue {
            value,
            argmin,
            radius,
            stats,
        })
    }

    /// Separable quadratic fit through the argmin and its axis neighbours.
    fn refine(
        &self,
        x: &[f64],
        k: &[usize],
        f0: f64,
        radius: f64,
        stats: &mut EvolveStats,
    ) -> Option<(f64, Vec<f64>)> {
        let g = self.phi;
        let phi0 = g.value_at(k);
        let mut y: Vec<f64> = k.iter().enumerate().map(|(a, &i)| g.coord(a, i)).collect();
        let mut phi_star = phi0;
        let mut moved = false;
        for axis in 0..g.dim() {
            if k[axis] == 0 || k[axis] + 1 == g.shape[axis] {
                continue;
            }
            let h = g.spacing(axis);
            let mut side = [0.0; 2];
            let mut phis = [0.0; 2];
            for (s, step) in [-1isize, 1].into_iter().enumerate() {
                let mut nb = k.to_vec();
                nb[axis] = (k[axis] as isize + step) as usize;
                let yn: Vec<f64> = nb.iter().enumerate().map(|(a, &i)| g.coord(a, i)).collect();
                phis[s] = g.value_at(&nb);
                side[s] = self.score_robust(x, &yn, phis[s], None, stats)?.0;
            }
            let curv = side[0] + side[1] - 2.0 * f0;
            // the fit must open towards the optimum
            let opens = match self.op {
                Operator::Negative => curv > 0.0,
                Operator::Positive => curv < 0.0,
            };
            if !opens {
                continue;
            }
            let delta = (0.5 * h * (side[0] - side[1]) / curv).clamp(-0.5 * h, 0.5 * h);
            let s = delta / h;
            phi_star += 0.5 * s * (phis[1] - phis[0]) + 0.5 * s * s * (phis[0] + phis[1] - 2.0 * phi0);
            y[axis] += delta;
            moved = true;
        }
        if !moved || dist(&y, x) > radius {
            return None;
        }
        let (v, _) = self.score_robust(x, &y, phi_star, None, stats)?;
        self.better(v, f0).then_some((v, y))
    }
}

/// Next index of the lexicographic sweep over the box `[lo, hi]`.
fn advance(idx: &mut [usize], lo: &[usize], hi: &[usize]) -> bool {
    for axis in (0..idx.len()).rev() {
        if idx[axis] < hi[axis] {
            idx[axis] += 1;
            idx[axis + 1..].copy_from_slice(&lo[axis + 1..]);
            return true;
        }
    }
    false
}

/// Extrapolates the momentum from the two previous solves when they are the
/// immediately preceding nodes on the same row.
fn warm_guess(
    idx: &[usize],
    prev: Option<&(Vec<usize>, WarmStart)>,
    prev2: Option<&(Vec<usize>, WarmStart)>,
) -> Option<WarmStart> {
    let (i1, w1) = prev?;
    let last = idx.len() - 1;
    let adjacent = |a: &[usize], b: &[usize]| a[..last] == b[..last] && a[last] + 1 == b[last];
    if !adjacent(i1, idx) {
        return Some(w1.clone());
    }
    match prev2 {
        Some((i2, w2)) if adjacent(i2, i1) => Some(WarmStart {
            p: w1.p.iter().zip(&w2.p).map(|(a, b)| 2.0 * a - b).collect(),
            jacobian: w1.jacobian.clone(),
        }),
        _ => Some(w1.clone()),
    }
}

fn resolve_kappa(phi: &GridFunction, opts: &EvolveOptions) -> Result<(f64, f64)> {
    let kappa = opts.kappa.unwrap_or((phi.oscillation(), 0.0));
    if !(kappa.0 >= 0.0 && kappa.1 >= 0.0 && kappa.0.is_finite() && kappa.1.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "invalid kappa certificate {kappa:?}"
        )));
    }
    Ok(kappa)
}

fn check_model(m: &ModelSpec, phi: &GridFunction, t1: f64, t2: f64) -> Result<()> {
    if m.dim() != phi.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: phi.dim(),
        });
    }
    if !(t2 > t1) {
        return Err(Error::InvalidInput(format!("need t1 < t2, got [{t1}, {t2}]")));
    }
    Ok(())
}

/// Applies an operator on every node of `phi`'s grid.
pub fn evolve(
    m: &ModelSpec,
    phi: &GridFunction,
    t1: f64,
    t2: f64,
    op: Operator,
    opts: &EvolveOptions,
) -> Result<EvolveResult> {
    check_model(m, phi, t1, t2)?;
    let kappa = resolve_kappa(phi, opts)?;
    let problem = Problem {
        m,
        phi,
        t1,
        t2,
        op,
        kappa,
        opts,
    };
    let points = (0..phi.len())
        .into_par_iter()
        .map(|k| problem.evaluate(&phi.point(k), phi.values[k]))
        .collect::<Result<Vec<_>>>()?;
    let mut stats = EvolveStats::default();
    let mut values = Vec::with_capacity(points.len());
    let mut argmin_y = Vec::with_capacity(points.len());
    let mut radii = Vec::with_capacity(points.len());
    for p in points {
        stats.absorb(&p.stats);
        values.push(p.value);
        argmin_y.push(p.argmin);
        radii.push(p.radius);
    }
    let radius_used = radii.iter().copied().fold(0.0, f64::max);
    Ok(EvolveResult {
        u: phi.with_values(values)?,
        argmin_y,
        radii,
        radius_used,
        kappa,
        stats,
    })
}

/// `T^{t2}_{t1} φ` on the grid of `phi`.
pub fn evolve_negative(
    m: &ModelSpec,
    phi: &GridFunction,
    t1: f64,
    t2: f64,
    opts: &EvolveOptions,
) -> Result<EvolveResult> {
    evolve(m, phi, t1, t2, Operator::Negative, opts)
}

/// `T̆^{t2}_{t1} φ` on the grid of `phi`.
pub fn evolve_positive(
    m: &ModelSpec,
    phi: &GridFunction,
    t1: f64,
    t2: f64,
    opts: &EvolveOptions,
) -> Result<EvolveResult> {
    evolve(m, phi, t1, t2, Operator::Positive, opts)
}

/// The operator at a single point `x` of the box, with candidates from the
/// grid of `phi`.
pub fn evaluate_point(
    m: &ModelSpec,
    phi: &GridFunction,
    t1: f64,
    t2: f64,
    x: &[f64],
    op: Operator,
    opts: &EvolveOptions,
) -> Result<PointValue> {
    check_model(m, phi, t1, t2)?;
    let kappa = resolve_kappa(phi, opts)?;
    let problem = Problem {
        m,
        phi,
        t1,
        t2,
        op,
        kappa,
        opts,
    };
    problem.evaluate(x, phi.interpolate(x)?)
}

/// Compares one-step evolution over `[t1, t3]` with the composition through
/// `t2`, on the middle half of the box along every axis.
pub fn markov_check(
    m: &ModelSpec,
    phi: &GridFunction,
    t1: f64,
    t2: f64,
    t3: f64,
    opts: &EvolveOptions,
) -> Result<ResidualReport> {
    if !(t1 <= t2 && t2 <= t3 && t1 < t3) {
        return Err(Error::InvalidInput(format!(
            "need t1 <= t2 <= t3, got {t1}, {t2}, {t3}"
        )));
    }
    let direct = evolve_negative(m, phi, t1, t3, opts)?;
    // the operator over an empty interval is the identity
    let composed = if t2 == t1 || t2 == t3 {
        direct.u.clone()
    } else {
        let mid = evolve_negative(m, phi, t1, t2, opts)?;
        evolve_negative(m, &mid.u, t2, t3, opts)?.u
    };
    let g = &direct.u;
    let mut rows = Vec::new();
    for k in 0..g.len() {
        let x = g.point(k);
        let inside = (0..g.dim()).all(|a| {
            let (lo, hi) = g.bounds[a];
            let c = 0.5 * (lo + hi);
            (x[a] - c).abs() <= 0.25 * (hi - lo) + 1e-12
        });
        if inside {
            let mut row = x;
            row.push(g.values[k]);
            row.push(composed.values[k]);
            row.push((g.values[k] - composed.values[k]).abs());
            rows.push(row);
        }
    }
    let cols: &[&str] = if g.dim() == 1 {
        &["x1", "one_step", "two_step", "residual"]
    } else {
        &["x1", "x2", "one_step", "two_step", "residual"]
    };
    Ok(ResidualReport::from_rows("markov", g.shape()[0], cols, rows))
}
