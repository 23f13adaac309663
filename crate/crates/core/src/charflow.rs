//! Contact characteristics `ẋ = H_p`, `ṗ = −H_x − H_u p`, `u̇ = p·ẋ − H` and
//! the two-point problems solved on them by single shooting.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::ode::norm;
use crate::varmin::{minimize, minimize_terminal, MinimizeOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<CharState>,
}

impl CharTrajectory {
    pub fn first(&self) -> &CharState {
        &self.states[0]
    }

    pub fn last(&self) -> &CharState {
        self.states.last().expect("trajectory has at least two states")
    }

    /// State at the earliest time, whichever way the trajectory was integrated.
    pub fn at_start_time(&self) -> &CharState {
        if self.times[0] <= *self.times.last().unwrap() {
            self.first()
        } else {
            self.last()
        }
    }

    pub fn at_end_time(&self) -> &CharState {
        if self.times[0] <= *self.times.last().unwrap() {
            self.last()
        } else {
            self.first()
        }
    }
}

fn rhs(m: &ModelSpec, s: f64, x: &[f64], p: &[f64], u: f64, out: &mut [f64]) -> Result<()> {
    let n = x.len();
    let d = m.hamiltonian_derivs(s, x, p, u)?;
    let h = m.hamiltonian(s, x, p, u)?;
    let mut p_dot_x = 0.0;
    for i in 0..n {
        out[i] = d.h_p[i];
        out[n + i] = -d.h_x[i] - d.h_u * p[i];
        p_dot_x += p[i] * d.h_p[i];
    }
    out[2 * n] = p_dot_x - h;
    Ok(())
}

fn pack(st: &CharState) -> Vec<f64> {
    let mut z = Vec::with_capacity(2 * st.x.len() + 1);
    z.extend_from_slice(&st.x);
    z.extend_from_slice(&st.p);
    z.push(st.u);
    z
}

fn unpack(z: &[f64], n: usize) -> CharState {
    CharState {
        x: z[..n].to_vec(),
        p: z[n..2 * n].to_vec(),
        u: z[2 * n],
    }
}

fn integrate_packed(
    m: &ModelSpec,
    z0: &[f64],
    t1: f64,
    t2: f64,
    steps: usize,
    mut visit: impl FnMut(&[f64]),
) -> Result<Vec<f64>> {
    let n = m.dim();
    let len = 2 * n + 1;
    let h = (t2 - t1) / steps as f64;
    let mut z = z0.to_vec();
    let mut k = vec![vec![0.0; len]; 4];
    let mut tmp = vec![0.0; len];
    visit(&z);
    for step in 0..steps {
        let s = t1 + step as f64 * h;
        let diverged = |e: Error| match e {
            Error::Domain(_) => Error::Diverged { interval: step },
            other => other,
        };
        let offsets = [0.0, 0.5, 0.5, 1.0];
        for j in 0..4 {
            for q in 0..len {
                tmp[q] = if j == 0 {
                    z[q]
                } else {
                    z[q] + offsets[j] * h * k[j - 1][q]
                };
            }
            let (kj, _) = k.split_at_mut(j + 1);
            rhs(
                m,
                s + offsets[j] * h,
                &tmp[..n],
                &tmp[n..2 * n],
                tmp[2 * n],
                &mut kj[j],
            )
            .map_err(diverged)?;
        }
        for q in 0..len {
            z[q] += h / 6.0 * (k[0][q] + 2.0 * k[1][q] + 2.0 * k[2][q] + k[3][q]);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { interval: step });
        }
        visit(&z);
    }
    Ok(z)
}

/// RK4 on the characteristic system from `s0` at `t1` to `t2`; `t2 < t1`
/// integrates backward.
pub fn integrate_lie(
    m: &ModelSpec,
    s0: &CharState,
    t1: f64,
    t2: f64,
    steps: usize,
) -> Result<CharTrajectory> {
    if steps == 0 {
        return Err(Error::InvalidInput("need at least one step".into()));
    }
    if !(t1.is_finite() && t2.is_finite()) || t1 == t2 {
        return Err(Error::InvalidInput(format!("degenerate time span [{t1}, {t2}]")));
    }
    let n = m.dim();
    if s0.x.len() != n || s0.p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if s0.x.len() != n { s0.x.len() } else { s0.p.len() },
        });
    }
    let mut states = Vec::with_capacity(steps + 1);
    integrate_packed(m, &pack(s0), t1, t2, steps, |z| states.push(unpack(z, n)))?;
    let h = (t2 - t1) / steps as f64;
    let times = (0..=steps)
        .map(|i| if i == steps { t2 } else { t1 + i as f64 * h })
        .collect();
    Ok(CharTrajectory { times, states })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootOptions {
    pub steps: usize,
    pub xtol: f64,
    pub max_newton: usize,
    /// Also run the direct minimizer and compare.
    pub cross_check: bool,
    pub cross_tol: f64,
    /// Fall back to the direct minimizer when shooting fails.
    pub fallback: bool,
    pub varmin: MinimizeOptions,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            steps: 256,
            xtol: 1e-9,
            max_newton: 50,
            cross_check: false,
            cross_tol: 1e-5,
            fallback: true,
            varmin: MinimizeOptions::default(),
        }
    }
}

/// Newton state that can seed a neighbouring shooting problem.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub p: Vec<f64>,
    /// Column-major Jacobian of the endpoint with respect to the unknown
    /// momentum, when one was computed.
    pub jacobian: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ShotOutcome {
    pub p: Vec<f64>,
    pub end: CharState,
    pub warm: WarmStart,
}

/// Solves `endpoint(p) = target` where the characteristic starts from
/// `(start, p, u_start)` at `t_from` and runs to `t_to`.
pub(crate) fn newton_shoot(
    m: &ModelSpec,
    t_from: f64,
    t_to: f64,
    start: &[f64],
    target: &[f64],
    u_start: f64,
    guess: Vec<f64>,
    jacobian: Option<&[f64]>,
    opts: &ShootOptions,
) -> Result<ShotOutcome> {
    let n = m.dim();
    let endpoint = |p: &[f64]| -> Result<Vec<f64>> {
        let mut z0 = Vec::with_capacity(2 * n + 1);
        z0.extend_from_slice(start);
        z0.extend_from_slice(p);
        z0.push(u_start);
        integrate_packed(m, &z0, t_from, t_to, opts.steps, |_| {})
    };
    let residual = |z: &[f64]| -> Vec<f64> { (0..n).map(|i| z[i] - target[i]).collect() };

    let mut p = guess;
    let mut z = endpoint(&p)?;
    let mut f = residual(&z);
    let mut fnorm = norm(&f);
    let mut jac: Option<DMatrix<f64>> = jacobian.map(|j| DMatrix::from_column_slice(n, n, j));
    let mut jac_fresh = false;
    let mut iterations = 0;

    while fnorm > opts.xtol {
        if iterations >= opts.max_newton {
            return Err(Error::NoConvergence {
                iterations,
                residual: fnorm,
            });
        }
        iterations += 1;
        if jac.is_none() {
            jac = Some(fd_jacobian(&endpoint, &p, &z)?);
            jac_fresh = true;
        }
        let step = jac
            .as_ref()
            .unwrap()
            .clone()
            .lu()
            .solve(&DVector::from_iterator(n, f.iter().map(|v| -v)));
        let Some(step) = step else {
            if jac_fresh {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: fnorm,
                });
            }
            jac = None;
            continue;
        };
        let mut damping = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + damping * b).collect();
            if let Ok(zt) = endpoint(&trial) {
                let ft = residual(&zt);
                let nt = norm(&ft);
                if nt < fnorm {
                    accepted = Some((trial, zt, ft, nt));
                    break;
                }
            }
            damping *= 0.5;
        }
        match accepted {
            Some((pt, zt, ft, nt)) => {
                // a stale Jacobian that contracts poorly is refreshed
                if !jac_fresh && nt > 0.25 * fnorm {
                    jac = None;
                }
                jac_fresh = false;
                p = pt;
                z = zt;
                f = ft;
                fnorm = nt;
            }
            None if jac_fresh => {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: fnorm,
                })
            }
            None => jac = None,
        }
    }
    Ok(ShotOutcome {
        warm: WarmStart {
            p: p.clone(),
            jacobian: jac.map(|j| j.as_slice().to_vec()),
        },
        end: unpack(&z, n),
        p,
    })
}

fn fd_jacobian(endpoint: &impl Fn(&[f64]) -> Result<Vec<f64>>, p: &[f64], z: &[f64]) -> Result<DMatrix<f64>> {
    let n = p.len();
    let delta = 1e-6 * (1.0 + norm(p));
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut pj = p.to_vec();
        pj[j] += delta;
        let zj = endpoint(&pj)?;
        for i in 0..n {
            jac[(i, j)] = (zj[i] - z[i]) / delta;
        }
    }
    Ok(jac)
}

fn check_points(m: &ModelSpec, t1: f64, t2: f64, a: &[f64], b: &[f64]) -> Result<()> {
    if !(t2 > t1) {
        return Err(Error::InvalidInput(format!("need t1 < t2, got [{t1}, {t2}]")));
    }
    for v in [a, b] {
        if v.len() != m.dim() {
            return Err(Error::DimensionMismatch {
                expected: m.dim(),
                found: v.len(),
            });
        }
    }
    Ok(())
}

/// `A(y − x)/(t2 − t1)`.
fn straight_momentum(m: &ModelSpec, t1: f64, t2: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = x.iter().zip(y).map(|(a, b)| (b - a) / (t2 - t1)).collect();
    m.kinetic_apply(&v)
}

/// Initial momentum `p0` carrying `x` at `t1` to `y` at `t2`, and the
/// characteristic it generates.
pub fn shoot(
    m: &ModelSpec,
    t1: f64,
    t2: f64,
    x: &[f64],
    y: &[f64],
    u0: f64,
    opts: &ShootOptions,
) -> Result<(Vec<f64>, CharTrajectory)> {
    check_points(m, t1, t2, x, y)?;
    let guess = straight_momentum(m, t1, t2, x, y);
    let out = newton_shoot(m, t1, t2, x, y, u0, guess, None, opts)?;
    let traj = integrate_lie(
        m,
        &CharState {
            x: x.to_vec(),
            p: out.p.clone(),
            u: u0,
        },
        t1,
        t2,
        opts.steps,
    )?;
    Ok((out.p, traj))
}

/// Value of a fundamental solution with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fundamental {
    pub h: f64,
    /// `None` when shooting failed and the value is direct-only.
    pub trajectory: Option<CharTrajectory>,
    pub h_shoot: Option<f64>,
    pub h_direct: Option<f64>,
    /// `|h_shoot − h_direct|` when both are available.
    pub cross_diff: Option<f64>,
    /// `cross_diff ≤ cross_tol·(1 + |h_direct|)`; `None` without a cross-check.
    pub agree: Option<bool>,
    pub direct_only: bool,
    pub shoot_error: Option<String>,
}

fn combine(
    shot: Result<(f64, CharTrajectory)>,
    direct: Option<Result<(f64, bool)>>,
    opts: &ShootOptions,
) -> Result<Fundamental> {
    match shot {
        Ok((h_shoot, traj)) => {
            let mut out = Fundamental {
                h: h_shoot,
                trajectory: Some(traj),
                h_shoot: Some(h_shoot),
                h_direct: None,
                cross_diff: None,
                agree: None,
                direct_only: false,
                shoot_error: None,
            };
            if let Some(Ok((j, converged))) = direct {
                let diff = (h_shoot - j).abs();
                out.h_direct = Some(j);
                out.cross_diff = Some(diff);
                let agree = diff <= opts.cross_tol * (1.0 + j.abs());
                out.agree = Some(agree);
                // two different extremals: keep the smaller action
                if !agree && converged && j < h_shoot {
                    out.h = j;
                }
            }
            Ok(out)
        }
        Err(e) => {
            let direct = match direct {
                Some(d) => d,
                None => return Err(e),
            };
            let (j, _) = direct?;
            Ok(Fundamental {
                h: j,
                trajectory: None,
                h_shoot: None,
                h_direct: Some(j),
                cross_diff: None,
                agree: None,
                direct_only: true,
                shoot_error: Some(e.to_string()),
            })
        }
    }
}

/// Negative-type fundamental solution `h(t1, t2, y, x, u0)`: the least value
/// of `u_ξ(t2) − u0` over curves from `y` at `t1` to `x` at `t2`.
pub fn fundamental_neg(
    m: &ModelSpec,
    t1: f64,
    t2: f64,
    y: &[f64],
    x: &[f64],
    u0: f64,
    opts: &ShootOptions,
) -> Result<Fundamental> {
    check_points(m, t1, t2, y, x)?;
    let shot = shoot(m, t1, t2, y, x, u0, opts).map(|(_, traj)| (traj.last().u - u0, traj));
    let want_direct = opts.cross_check || (shot.is_err() && opts.fallback);
    let direct = want_direct.then(|| minimize(m, t1, t2, y, x, u0, &opts.varmin).map(|r| (r.j, r.converged)));
    combine(shot, direct, opts)
}

/// Positive-type fundamental solution `h̆(t1, t2, x, y, u)`: the value of
/// `∫L = u_T − w(t1)` on the extremal from `x` at `t1` to `y` at `t2` with
/// terminal condition `w(t2) = u_T`. The characteristic is integrated backward
/// from `t2` with unknown terminal momentum.
pub fn fundamental_pos(
    m: &ModelSpec,
    t1: f64,
    t2: f64,
    x: &[f64],
    y: &[f64],
    u_terminal: f64,
    opts: &ShootOptions,
) -> Result<Fundamental> {
    check_points(m, t1, t2, x, y)?;
    let shot = shoot_terminal(m, t1, t2, x, y, u_terminal, None, opts)
        .map(|(out, traj)| (u_terminal - out.end.u, traj));
    let want_direct = opts.cross_check || (shot.is_err() && opts.fallback);
    let direct = want_direct
        .then(|| minimize_terminal(m, t1, t2, x, y, u_terminal, &opts.varmin).map(|r| (r.j, r.converged)));
    combine(shot, direct, opts)
}

pub(crate) fn shoot_terminal(
    m: &ModelSpec,
    t1: f64,
    t2: f64,
    x: &[f64],
    y: &[f64],
    u_terminal: f64,
    warm: Option<&WarmStart>,
    opts: &ShootOptions,
) -> Result<(ShotOutcome, CharTrajectory)> {
    let (guess, jac) = match warm {
        Some(w) => (w.p.clone(), w.jacobian.as_deref()),
        None => (straight_momentum(m, t1, t2, x, y), None),
    };
    let out = newton_shoot(m, t2, t1, y, x, u_terminal, guess, jac, opts)?;
    let traj = integrate_lie(
        m,
        &CharState {
            x: y.to_vec(),
            p: out.p.clone(),
            u: u_terminal,
        },
        t2,
        t1,
        opts.steps,
    )?;
    Ok((out, traj))
}

/// `u(t2) − u0` along the shot from `y` at `t1` to `x` at `t2` without
/// materializing the trajectory; used by grid evolution.
pub(crate) fn shoot_value_neg(
    m: &ModelSpec,
    t1: f64,
    t2: f64,
    y: &[f64],
    x: &[f64],
    u0: f64,
    warm: Option<&WarmStart>,
    opts: &ShootOptions,
) -> Result<(f64, WarmStart)> {
    let (guess, jac) = match warm {
        Some(w) => (w.p.clone(), w.jacobian.as_deref()),
        None => (straight_momentum(m, t1, t2, y, x), None),
    };
    let out = newton_shoot(m, t1, t2, y, x, u0, guess, jac, opts)?;
    Ok((out.end.u - u0, out.warm))
}

/// `u_T − w(t1)` along the backward shot; see [`fundamental_pos`].
pub(crate) fn shoot_value_pos(
    m: &ModelSpec,
    t1: f64,
    t2: f64,
    x: &[f64],
    y: &[f64],
    u_terminal: f64,
    warm: Option<&WarmStart>,
    opts: &ShootOptions,
) -> Result<(f64, WarmStart)> {
    let (guess, jac) = match warm {
        Some(w) => (w.p.clone(), w.jacobian.as_deref()),
        None => (straight_momentum(m, t1, t2, x, y), None),
    };
    let out = newton_shoot(m, t2, t1, y, x, u_terminal, guess, jac, opts)?;
    Ok((u_terminal - out.end.u, out.warm))
}
