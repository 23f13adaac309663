//! Direct minimization of the implicit action `J(ξ) = u_ξ(b) − u` over
//! piecewise-linear curves with fixed endpoints.
//!
//! The gradient is the reverse sweep of the RK4 scheme used by
//! [`solve_ivp`]. Its adjoint variable `∂u_N/∂u_i` is the discrete
//! counterpart of the weight `exp(∫_s^b L_u)` in the first-variation formula,
//! so the gradient is exact for the discretized functional. The literal
//! midpoint-weight formula is kept in [`first_variation`] for comparison.

pub mod lbfgs;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::ode::{check_model_dim, solve_ivp, solve_tvp, CaraSolution, DiscreteCurve};
use crate::verify::herglotz_residual;

/// `J = u_ξ(b) − u0` together with the solution it was read from.
pub fn action(m: &ModelSpec, c: &DiscreteCurve, u0: f64) -> Result<(f64, CaraSolution)> {
    let cara = solve_ivp(m, c, u0)?;
    let j = cara.u[c.intervals()] - u0;
    Ok((j, cara))
}

/// Terminal-condition action `u_T − w(a)` with `w(b) = u_T`.
pub fn action_terminal(m: &ModelSpec, c: &DiscreteCurve, u_terminal: f64) -> Result<(f64, CaraSolution)> {
    let cara = solve_tvp(m, c, u_terminal)?;
    Ok((u_terminal - cara.u[0], cara))
}

/// Cotangents of one RK4 step with respect to its input value and the two
/// interval nodes.
struct StepAdjoint {
    bar_in: f64,
    bar_left: Vec<f64>,
    bar_right: Vec<f64>,
}

fn rk4_reverse(
    m: &ModelSpec,
    c: &DiscreteCurve,
    i: usize,
    u_in: f64,
    bar_out: f64,
    backward: bool,
) -> Result<StepAdjoint> {
    let dt = c.step();
    let (s0, s1) = (c.time(i), c.time(i + 1));
    let s_mid = 0.5 * (s0 + s1);
    let (theta, times, h) = if backward {
        ([1.0, 0.5, 0.5, 0.0], [s1, s_mid, s_mid, s0], -dt)
    } else {
        ([0.0, 0.5, 0.5, 1.0], [s0, s_mid, s_mid, s1], dt)
    };
    let v = c.velocity(i);
    let pos: [Vec<f64>; 4] = std::array::from_fn(|j| c.lerp(i, theta[j]));

    // forward replay of the stage values
    let offset = [0.0, 0.5 * h, 0.5 * h, h];
    let mut stage_u = [0.0; 4];
    let mut k_prev = 0.0;
    for j in 0..4 {
        stage_u[j] = u_in + offset[j] * k_prev;
        k_prev = m.lagrangian(times[j], &pos[j], &v, stage_u[j])?;
    }

    let dim = c.dim();
    let mut k_bar = [
        bar_out * h / 6.0,
        bar_out * h / 3.0,
        bar_out * h / 3.0,
        bar_out * h / 6.0,
    ];
    let mut bar_in = bar_out;
    let mut bar_left = vec![0.0; dim];
    let mut bar_right = vec![0.0; dim];
    let mut v_bar = vec![0.0; dim];
    for j in (0..4).rev() {
        let d = m.lagrangian_derivs(times[j], &pos[j], &v, stage_u[j])?;
        let u_bar = k_bar[j] * d.l_u;
        bar_in += u_bar;
        if j > 0 {
            k_bar[j - 1] += u_bar * offset[j];
        }
        for q in 0..dim {
            let x_bar = k_bar[j] * d.l_x[q];
            bar_left[q] += (1.0 - theta[j]) * x_bar;
            bar_right[q] += theta[j] * x_bar;
            v_bar[q] += k_bar[j] * d.l_v[q];
        }
    }
    for q in 0..dim {
        bar_left[q] -= v_bar[q] / dt;
        bar_right[q] += v_bar[q] / dt;
    }
    Ok(StepAdjoint {
        bar_in,
        bar_left,
        bar_right,
    })
}

/// Full discrete gradient of the forward action.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionGradient {
    /// `∂J/∂node_k` for every node, endpoints included.
    pub nodes: Vec<Vec<f64>>,
    /// `∂u_ξ(b)/∂u0`, the discrete `exp(∫_a^b L_u)`.
    pub du0: f64,
}

impl ActionGradient {
    pub fn interior(&self) -> Vec<Vec<f64>> {
        let n = self.nodes.len();
        self.nodes[1..n - 1].to_vec()
    }
}

/// Reverse sweep of the forward scheme along an existing solution.
pub fn adjoint(m: &ModelSpec, c: &DiscreteCurve, cara: &CaraSolution) -> Result<ActionGradient> {
    check_model_dim(m, c)?;
    let n = c.intervals();
    let mut nodes = vec![vec![0.0; c.dim()]; n + 1];
    let mut bar = 1.0;
    for i in (0..n).rev() {
        let st = rk4_reverse(m, c, i, cara.u[i], bar, false)?;
        add_into(&mut nodes[i], &st.bar_left);
        add_into(&mut nodes[i + 1], &st.bar_right);
        bar = st.bar_in;
    }
    Ok(ActionGradient { nodes, du0: bar })
}

/// Gradient of [`action_terminal`] along a terminal-condition solution.
pub fn adjoint_terminal(m: &ModelSpec, c: &DiscreteCurve, cara: &CaraSolution) -> Result<ActionGradient> {
    check_model_dim(m, c)?;
    let n = c.intervals();
    let mut nodes = vec![vec![0.0; c.dim()]; n + 1];
    // J = u_T − u_0; seed the cotangent of u_0 with −1
    let mut bar = -1.0;
    for i in 0..n {
        let st = rk4_reverse(m, c, i, cara.u[i + 1], bar, true)?;
        add_into(&mut nodes[i], &st.bar_left);
        add_into(&mut nodes[i + 1], &st.bar_right);
        bar = st.bar_in;
    }
    Ok(ActionGradient { nodes, du0: bar })
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// `∂J/∂nodes[1..N−1]` of the discretized action.
pub fn gradient(m: &ModelSpec, c: &DiscreteCurve, u0: f64) -> Result<Vec<Vec<f64>>> {
    let (_, cara) = action(m, c, u0)?;
    Ok(adjoint(m, c, &cara)?.interior())
}

/// Midpoint-rule evaluation of the continuous first variation with weights
/// `w_i = exp(Σ_{j≥i} L_u(mid_j) Δs)`:
///
/// `g_k = ½Δs (w_{k−1} L_x(mid_{k−1}) + w_k L_x(mid_k)) + w_{k−1} L_v(mid_{k−1}) − w_k L_v(mid_k)`.
///
/// It agrees with [`gradient`] only up to discretization error.
pub fn first_variation(m: &ModelSpec, c: &DiscreteCurve, u0: f64) -> Result<Vec<Vec<f64>>> {
    let (_, cara) = action(m, c, u0)?;
    let n = c.intervals();
    let h = c.step();
    let mut derivs = Vec::with_capacity(n);
    for i in 0..n {
        let s = c.time(i) + 0.5 * h;
        let u = 0.5 * (cara.u[i] + cara.u[i + 1]);
        derivs.push(m.lagrangian_derivs(s, &c.lerp(i, 0.5), &c.velocity(i), u)?);
    }
    let mut w = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        acc += derivs[i].l_u * h;
        w[i] = acc.exp();
    }
    Ok((1..n)
        .map(|k| {
            (0..c.dim())
                .map(|q| {
                    0.5 * h * (w[k - 1] * derivs[k - 1].l_x[q] + w[k] * derivs[k].l_x[q])
                        + w[k - 1] * derivs[k - 1].l_v[q]
                        - w[k] * derivs[k].l_v[q]
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Number of curve intervals.
    pub n: usize,
    /// Bound on the sup-norm of the node gradient.
    pub gtol: f64,
    /// Bound on the sup-norm of the Herglotz residual.
    pub rtol: f64,
    pub max_iter: usize,
    /// Solve at `N/4` and `N/2` first, interpolating upward.
    pub multires: bool,
    pub memory: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            n: 128,
            gtol: 1e-10,
            rtol: 1e-2,
            max_iter: 20_000,
            multires: true,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    pub curve: DiscreteCurve,
    pub cara: CaraSolution,
    #[serde(rename = "J")]
    pub j: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub herglotz_residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy)]
enum Boundary {
    Initial(f64),
    Terminal(f64),
}

fn curve_with_interior(template: &DiscreteCurve, flat: &[f64]) -> DiscreteCurve {
    let mut c = template.clone();
    let dim = c.dim();
    for k in 1..c.intervals() {
        c.node_mut(k).copy_from_slice(&flat[(k - 1) * dim..k * dim]);
    }
    c
}

fn flatten_interior(c: &DiscreteCurve) -> Vec<f64> {
    c.nodes()[1..c.intervals()].iter().flatten().copied().collect()
}

fn evaluate(m: &ModelSpec, c: &DiscreteCurve, bc: Boundary) -> Result<(f64, CaraSolution, ActionGradient)> {
    match bc {
        Boundary::Initial(u0) => {
            let (j, cara) = action(m, c, u0)?;
            let g = adjoint(m, c, &cara)?;
            Ok((j, cara, g))
        }
        Boundary::Terminal(ut) => {
            let (j, cara) = action_terminal(m, c, ut)?;
            let g = adjoint_terminal(m, c, &cara)?;
            Ok((j, cara, g))
        }
    }
}

fn levels(opts: &MinimizeOptions) -> Vec<usize> {
    let n = opts.n;
    if opts.multires && n.is_multiple_of(4) && n / 4 >= 2 {
        vec![n / 4, n / 2, n]
    } else {
        vec![n]
    }
}

fn run(
    m: &ModelSpec,
    a: f64,
    b: f64,
    x: &[f64],
    y: &[f64],
    bc: Boundary,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    if !(b > a) {
        return Err(Error::InvalidInput(format!("need a < b, got [{a}, {b}]")));
    }
    if x.len() != m.dim() || y.len() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: m.dim(),
            found: if x.len() != m.dim() { x.len() } else { y.len() },
        });
    }
    if opts.n == 0 {
        return Err(Error::InvalidInput("need at least one interval".into()));
    }
    let lb = lbfgs::LbfgsOptions {
        memory: opts.memory.max(1),
        gtol: opts.gtol,
        max_iter: opts.max_iter,
        ..Default::default()
    };
    let plan = levels(opts);
    let mut curve = DiscreteCurve::straight(a, b, x, y, plan[0])?;
    let mut iterations = 0;
    let mut last_converged = true;
    for (li, &n) in plan.iter().enumerate() {
        if li > 0 {
            curve = curve.resample(n)?;
        }
        if n < 2 {
            continue;
        }
        let template = curve.clone();
        let objective = |flat: &[f64]| -> Result<(f64, Vec<f64>)> {
            let c = curve_with_interior(&template, flat);
            let (j, _, g) = evaluate(m, &c, bc)?;
            Ok((j, g.interior().into_iter().flatten().collect()))
        };
        let out = lbfgs::minimize(objective, flatten_interior(&curve), &lb)?;
        iterations += out.iterations;
        last_converged = out.converged;
        curve = curve_with_interior(&template, &out.x);
    }

    let (j, cara, g) = evaluate(m, &curve, bc)?;
    let grad_inf_norm = g
        .interior()
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let herglotz = if curve.intervals() >= 2 {
        herglotz_residual(m, &curve, &cara)?.sup_residual
    } else {
        0.0
    };
    let converged = last_converged && grad_inf_norm <= opts.gtol && herglotz <= opts.rtol;
    Ok(MinimizeResult {
        curve,
        cara,
        j,
        grad_inf_norm,
        iterations,
        herglotz_residual: herglotz,
        converged,
    })
}

/// Minimizes `u_ξ(b) − u0` over curves from `x` at `a` to `y` at `b`, starting
/// from the straight segment. Hitting `max_iter` yields an unconverged result.
pub fn minimize(
    m: &ModelSpec,
    a: f64,
    b: f64,
    x: &[f64],
    y: &[f64],
    u0: f64,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    run(m, a, b, x, y, Boundary::Initial(u0), opts)
}

/// Minimizes `u_T − w_ξ(a)` where `w_ξ` solves the equation backward from
/// `w_ξ(b) = u_T`.
pub fn minimize_terminal(
    m: &ModelSpec,
    a: f64,
    b: f64,
    x: &[f64],
    y: &[f64],
    u_terminal: f64,
    opts: &MinimizeOptions,
) -> Result<MinimizeResult> {
    run(m, a, b, x, y, Boundary::Terminal(u_terminal), opts)
}
