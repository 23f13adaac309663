//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub gtol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            gtol: 1e-9,
            max_iter: 5000,
            c1: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const ROUNDING: f64 = 1e-12;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Two-loop recursion: returns `−H g`.
fn direction(grad: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alpha = vec![0.0; hist.len()];
    for (k, (s, y, rho)) in hist.iter().enumerate().rev() {
        alpha[k] = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha[k] * yi;
        }
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for (k, (s, y, rho)) in hist.iter().enumerate() {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha[k] - beta) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizes `f`; the objective returns `(value, gradient)` or an error, which
/// the line search treats as an infinite value.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0;
    let (mut f, mut g) = objective(&x)?;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if inf_norm(&g) <= opts.gtol {
            return Ok(LbfgsOutcome {
                x,
                f,
                grad: g,
                iterations,
                converged: true,
            });
        }
        let mut d = direction(&g, &hist);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut accepted = None;
        for restart in 0..2 {
            if restart == 1 {
                // retry once along steepest descent with a fresh memory
                hist.clear();
                d = g.iter().map(|v| -v).collect();
                slope = dot(&g, &d);
            }
            let mut step = if hist.is_empty() && restart == 0 && iterations == 0 {
                (1.0 / inf_norm(&g)).min(1.0)
            } else {
                1.0
            };
            for _ in 0..opts.max_backtracks {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                if let Ok((ft, gt)) = objective(&trial) {
                    let armijo = ft <= f + opts.c1 * step * slope;
                    // once f stalls at rounding level, fall back to the
                    // approximate Wolfe test on the directional derivative
                    let approx_wolfe = (ft - f).abs() <= ROUNDING * (1.0 + f.abs())
                        && dot(&gt, &d) <= (2.0 * opts.c1 - 1.0) * slope;
                    if ft.is_finite() && (armijo || approx_wolfe) {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                step *= opts.backtrack;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fn_, gn)) = accepted else {
            return Err(Error::LineSearch {
                iteration: iterations,
                message: format!(
                    "no sufficient decrease from f = {f:e} (|g|_inf = {:e})",
                    inf_norm(&g)
                ),
            });
        };

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        f = fn_;
        g = gn;
        iterations += 1;
    }
    let converged = inf_norm(&g) <= opts.gtol;
    Ok(LbfgsOutcome {
        x,
        f,
        grad: g,
        iterations,
        converged,
    })
}
