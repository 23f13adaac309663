//! Checks on evolved grids: the Hamilton-Jacobi residual at smooth points and
//! dynamic programming along computed minimizers.

use serde::{Deserialize, Serialize};

use super::ResidualReport;
use crate::charflow::{shoot, ShootOptions};
use crate::error::{Error, Result};
use crate::evolve::{evaluate_point, EvolveOptions, GridFunction, Operator};
use crate::model::ModelSpec;

/// Largest `|Δ²u|/h²` over the axes at every interior node, `None` on the
/// boundary.
fn curvatures(u: &GridFunction) -> Vec<Option<f64>> {
    (0..u.len())
        .map(|k| {
            let idx = u.unravel(k);
            let mut worst = 0.0f64;
            for axis in 0..u.dim() {
                if idx[axis] == 0 || idx[axis] + 1 == u.shape()[axis] {
                    return None;
                }
                let h = u.spacing(axis);
                let mut lo = idx.clone();
                lo[axis] -= 1;
                let mut hi = idx.clone();
                hi[axis] += 1;
                let d2 = u.value_at(&hi) - 2.0 * u.value_at(&idx) + u.value_at(&lo);
                worst = worst.max(d2.abs() / (h * h));
            }
            Some(worst)
        })
        .collect()
}

/// `50 ×` the median interior `|Δ²u|/h²`, floored at the rounding level of
/// the data so that exactly affine regions do not exclude themselves.
pub fn default_smoothness_threshold(u: &GridFunction) -> f64 {
    let mut c: Vec<f64> = curvatures(u).into_iter().flatten().collect();
    if c.is_empty() {
        return f64::INFINITY;
    }
    c.sort_by(f64::total_cmp);
    let median = c[c.len() / 2];
    let scale = u.values().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let h_min = (0..u.dim()).map(|a| u.spacing(a)).fold(f64::INFINITY, f64::min);
    let floor = 1e3 * f64::EPSILON * scale / (h_min * h_min);
    (50.0 * median).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ViscosityOptions {
    /// Largest `|Δ²u|/h²` treated as smooth; `None` uses
    /// [`default_smoothness_threshold`].
    pub smoothness_threshold: Option<f64>,
}

/// `|D_t u + H(t, x, D_x u, u)|` at interior smooth nodes, from grids at `t1`
/// and `t2`. Space derivatives, `u` and `t` are taken at the midpoint in time;
/// nodes above the smoothness threshold are excluded and counted.
pub fn viscosity_residual(
    m: &ModelSpec,
    u1: &GridFunction,
    u2: &GridFunction,
    t1: f64,
    t2: f64,
    opts: &ViscosityOptions,
) -> Result<ResidualReport> {
    if !u1.same_grid(u2) {
        return Err(Error::GridMismatch(
            "the two snapshots live on different grids".into(),
        ));
    }
    if u1.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: u1.dim(),
        });
    }
    if !(t2 > t1) {
        return Err(Error::InvalidInput(format!("need t1 < t2, got {t1}, {t2}")));
    }
    let dt = t2 - t1;
    let t_mid = 0.5 * (t1 + t2);
    let avg = u1.with_values(
        u1.values()
            .iter()
            .zip(u2.values())
            .map(|(a, b)| 0.5 * (a + b))
            .collect(),
    )?;
    let threshold = opts
        .smoothness_threshold
        .unwrap_or_else(|| default_smoothness_threshold(&avg));
    let curv = curvatures(&avg);
    let mut rows = Vec::new();
    let mut excluded = 0;
    for (k, c) in curv.iter().enumerate() {
        let Some(c) = c else { continue };
        if *c > threshold {
            excluded += 1;
            continue;
        }
        let idx = avg.unravel(k);
        let x = avg.point(k);
        let p: Vec<f64> = (0..avg.dim())
            .map(|axis| {
                let mut lo = idx.clone();
                lo[axis] -= 1;
                let mut hi = idx.clone();
                hi[axis] += 1;
                (avg.value_at(&hi) - avg.value_at(&lo)) / (2.0 * avg.spacing(axis))
            })
            .collect();
        let d_t = (u2.values()[k] - u1.values()[k]) / dt;
        let h = m.hamiltonian(t_mid, &x, &p, avg.values()[k])?;
        let mut row = x;
        row.push(d_t);
        row.push((d_t + h).abs());
        rows.push(row);
    }
    let cols: &[&str] = if avg.dim() == 1 {
        &["x1", "d_t", "residual"]
    } else {
        &["x1", "x2", "d_t", "residual"]
    };
    let mut report = ResidualReport::from_rows("viscosity", avg.shape()[0], cols, rows);
    report.excluded = excluded;
    Ok(report)
}

fn lerp_state(times: &[f64], vals: &[Vec<f64>], s: f64) -> Vec<f64> {
    let n = times.len() - 1;
    let h = (times[n] - times[0]) / n as f64;
    let pos = ((s - times[0]) / h).clamp(0.0, n as f64);
    let i = (pos.floor() as usize).min(n - 1);
    let w = pos - i as f64;
    vals[i]
        .iter()
        .zip(&vals[i + 1])
        .map(|(a, b)| (1.0 - w) * a + w * b)
        .collect()
}

/// `|u(t,x) − ∫_{t'}^t L ds − u(t', ξ(t'))|` along the minimizing curve of
/// `u(t, x) = (T^t_0 φ)(x)`. `u(t', ·)` is evaluated afresh at the grid nodes
/// around `ξ(t')` and interpolated multilinearly.
pub fn dynamic_programming_check(
    m: &ModelSpec,
    phi: &GridFunction,
    t: f64,
    x: &[f64],
    tprimes: &[f64],
    opts: &EvolveOptions,
) -> Result<ResidualReport> {
    if !(t > 0.0) {
        return Err(Error::InvalidInput(format!("need t > 0, got {t}")));
    }
    if let Some(bad) = tprimes.iter().find(|s| !(**s >= 0.0 && **s <= t)) {
        return Err(Error::InvalidInput(format!(
            "intermediate time {bad} outside [0, {t}]"
        )));
    }
    let top = evaluate_point(m, phi, 0.0, t, x, Operator::Negative, opts)?;
    let y = &top.argmin;
    let u_start = phi.interpolate(y)?;
    let shoot_opts = ShootOptions {
        steps: opts.shoot.steps.max(256),
        ..opts.shoot
    };
    let (_, traj) = shoot(m, 0.0, t, y, x, u_start, &shoot_opts)?;
    let xs: Vec<Vec<f64>> = traj.states.iter().map(|s| s.x.clone()).collect();
    let us: Vec<Vec<f64>> = traj.states.iter().map(|s| vec![s.u]).collect();
    let u_end = traj.last().u;

    let mut rows = Vec::with_capacity(tprimes.len());
    for &tp in tprimes {
        let (lhs, rhs) = if tp == t {
            (top.value, top.value)
        } else {
            let xi = lerp_state(&traj.times, &xs, tp);
            let u_xi = lerp_state(&traj.times, &us, tp)[0];
            let integral = u_end - u_xi;
            let rhs = if tp == 0.0 {
                phi.interpolate(&xi)?
            } else {
                value_near(m, phi, tp, &xi, opts)?
            };
            (top.value - integral, rhs)
        };
        rows.push(vec![tp, lhs, rhs, (lhs - rhs).abs()]);
    }
    Ok(ResidualReport::from_rows(
        "dynamic_programming",
        phi.shape()[0],
        &["t_prime", "lhs", "rhs", "residual"],
        rows,
    ))
}

/// `(T^{tp}_0 φ)(z)` by multilinear interpolation of pointwise values at the
/// grid nodes of the cell containing `z`.
fn value_near(m: &ModelSpec, phi: &GridFunction, tp: f64, z: &[f64], opts: &EvolveOptions) -> Result<f64> {
    let dim = phi.dim();
    let mut base = vec![0usize; dim];
    let mut frac = vec![0.0; dim];
    for axis in 0..dim {
        let (lo, _) = phi.bounds()[axis];
        let n = phi.shape()[axis];
        let pos = ((z[axis] - lo) / phi.spacing(axis)).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        base[axis] = i;
        frac[axis] = pos - i as f64;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << dim) {
        let mut w = 1.0;
        let mut node = Vec::with_capacity(dim);
        for axis in 0..dim {
            let up = corner >> axis & 1 == 1;
            w *= if up { frac[axis] } else { 1.0 - frac[axis] };
            node.push(phi.coord(axis, base[axis] + up as usize));
        }
        if w != 0.0 {
            acc += w * evaluate_point(m, phi, 0.0, tp, &node, Operator::Negative, opts)?.value;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::evolve_negative;
    use crate::model::Expr;

    fn quadratic(n: usize) -> GridFunction {
        GridFunction::from_expr(&Expr::parse("0.5*x1^2").unwrap(), vec![(-3.0, 3.0)], vec![n]).unwrap()
    }

    #[test]
    fn constant_data_has_zero_residual() {
        let g = GridFunction::from_expr(&Expr::parse("2").unwrap(), vec![(-1.0, 1.0)], vec![11]).unwrap();
        let r = viscosity_residual(
            &ModelSpec::free(1),
            &g,
            &g,
            0.0,
            0.1,
            &ViscosityOptions::default(),
        )
        .unwrap();
        assert_eq!(r.sup_residual, 0.0);
        assert_eq!(r.excluded, 0);
        assert_eq!(r.details.len(), 9);
    }

    #[test]
    fn closed_form_hopf_lax_is_consistent() {
        let m = ModelSpec::free(1);
        let snap = |t: f64| {
            GridFunction::from_fn(vec![(-3.0, 3.0)], vec![121], |x| {
                Ok(x[0] * x[0] / (2.0 * (1.0 + t)))
            })
            .unwrap()
        };
        let r = viscosity_residual(
            &m,
            &snap(1.0),
            &snap(1.05),
            1.0,
            1.05,
            &ViscosityOptions::default(),
        )
        .unwrap();
        assert!(r.sup_residual < 5.0 * (0.05 + 0.05), "{}", r.sup_residual);
        assert_eq!(r.excluded, 0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let m = ModelSpec::free(1);
        let r = viscosity_residual(
            &m,
            &quadratic(11),
            &quadratic(13),
            0.0,
            1.0,
            &ViscosityOptions::default(),
        );
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }

    #[test]
    fn evolved_quadratic_passes() {
        let m = ModelSpec::free(1);
        let phi = quadratic(121);
        let opts = EvolveOptions::default();
        let a = evolve_negative(&m, &phi, 0.0, 1.0, &opts).unwrap();
        let b = evolve_negative(&m, &phi, 0.0, 1.05, &opts).unwrap();
        let r = viscosity_residual(&m, &a.u, &b.u, 1.0, 1.05, &ViscosityOptions::default()).unwrap();
        assert!(r.sup_residual <= 5.0 * (0.05 + 0.05), "{}", r.sup_residual);
    }

    #[test]
    fn dynamic_programming_examples() {
        let m = ModelSpec::free(1);
        let phi = quadratic(121);
        let r = dynamic_programming_check(&m, &phi, 1.0, &[2.0], &[0.0, 0.5, 1.0], &EvolveOptions::default())
            .unwrap();
        let rows = &r.details;
        assert_eq!(rows[2][3], 0.0);
        // minimizer from y* = 1: ξ(½) = 1.5 and u(½, 1.5) = 1.5²/3
        assert!((rows[1][2] - 0.75).abs() < 1e-3, "{:?}", rows);
        assert!(r.sup_residual < 1e-3, "{:?}", rows);
        assert!(dynamic_programming_check(&m, &phi, 1.0, &[2.0], &[1.5], &EvolveOptions::default()).is_err());
    }
}
