use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use herglotz_core::bounds::{check_minimizer, lip_bound_chain, search_radius, MinimizerBoundCheck};
use herglotz_core::charflow::shoot;
use herglotz_core::evolve::EvolveStats;
use herglotz_core::io::{csv_row, fmt_f64};
use herglotz_core::model::audit_assumptions;
use herglotz_core::varmin::{action, gradient};
use herglotz_core::verify::{
    convexity_monotone_check, dbr_constancy, energy_e, erdmann_residual, herglotz_residual,
    viscosity_residual, ViscosityOptions,
};
use herglotz_core::{
    evolve, minimize, solve_ivp, BoundsReport, CaraSolution, DiscreteCurve, EvolveOptions, GridFunction,
    MinimizeOptions, MinimizeResult, ModelSpec, Operator, ResidualReport, ShootOptions,
};

use crate::app::{solver, AppError, Outputs};
use crate::config::{
    AuditConfig, BoundsConfig, BvpConfig, EvolveConfig, OperatorName, PhiSource, RunConfig, VerifyConfig,
};

/// Result of a command whose files are written even on failure.
pub struct Outcome {
    pub outputs: Outputs,
    /// Set when the solver did not deliver (exit code 3).
    pub failure: Option<String>,
}

/// Residual report without its sample table.
#[derive(Debug, Clone, Serialize)]
pub struct ReportSummary {
    pub name: String,
    pub sup_residual: f64,
    pub l2_residual: f64,
    #[serde(rename = "grid_N")]
    pub grid_n: usize,
    pub excluded: usize,
    pub file: String,
}

fn summarize(r: &ResidualReport, file: &str) -> ReportSummary {
    ReportSummary {
        name: r.name.clone(),
        sup_residual: r.sup_residual,
        l2_residual: r.l2_residual,
        grid_n: r.grid_n,
        excluded: r.excluded,
        file: file.to_string(),
    }
}

fn curve_csv(c: &DiscreteCurve) -> String {
    let mut out = String::from("s");
    for k in 0..c.dim() {
        out.push_str(&format!(",x{}", k + 1));
    }
    out.push('\n');
    for (i, node) in c.nodes().iter().enumerate() {
        out.push_str(&csv_row(std::iter::once(c.time(i)).chain(node.iter().copied())));
    }
    out
}

fn u_csv(c: &DiscreteCurve, u: &[f64]) -> String {
    let mut out = String::from("s,u\n");
    for (i, v) in u.iter().enumerate() {
        out.push_str(&csv_row([c.time(i), *v]));
    }
    out
}

/// Reads a curve written by `bvp`: `#` lines, a header row, then `s,x1..xn`.
pub fn read_curve(text: &str, dim: usize) -> Result<DiscreteCurve, AppError> {
    let mut times = Vec::new();
    let mut nodes = Vec::new();
    let mut header_seen = false;
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let bad = |m: String| AppError::Config(format!("curve line {}: {m}", lineno + 1));
        let f = line
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        if f.len() != dim + 1 {
            return Err(bad(format!("expected {} fields, found {}", dim + 1, f.len())));
        }
        times.push(f[0]);
        nodes.push(f[1..].to_vec());
    }
    if times.len() < 3 {
        return Err(AppError::Config("curve needs at least two intervals".into()));
    }
    let (a, b) = (times[0], *times.last().unwrap());
    let c = DiscreteCurve::new(a, b, nodes).map_err(|e| AppError::Config(format!("curve: {e}")))?;
    let uniform = times
        .iter()
        .enumerate()
        .all(|(i, s)| (s - c.time(i)).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs())));
    if !uniform {
        return Err(AppError::Config("curve times are not a uniform grid".into()));
    }
    Ok(c)
}

#[derive(Serialize)]
struct BvpSummary {
    converged: bool,
    #[serde(rename = "J_direct")]
    j_direct: Option<f64>,
    h_shoot: Option<f64>,
    cross_diff: Option<f64>,
    grad_inf_norm: Option<f64>,
    iterations: Option<usize>,
    residuals: Vec<ReportSummary>,
    minimize_error: Option<String>,
    shoot_error: Option<String>,
}

pub fn bvp(m: &ModelSpec, b: &BvpConfig, mut out: Outputs) -> Result<Outcome, AppError> {
    b.check(m.dim())?;
    let opts = MinimizeOptions {
        n: b.n,
        gtol: b.gtol,
        max_iter: b.max_iter,
        ..MinimizeOptions::default()
    };
    let shoot_opts = ShootOptions {
        steps: b.shoot_steps,
        ..ShootOptions::default()
    };
    let direct = minimize(m, b.a, b.b, &b.x, &b.y, b.u0, &opts);
    let shot = shoot(m, b.a, b.b, &b.x, &b.y, b.u0, &shoot_opts).map(|(_, traj)| traj.last().u - b.u0);

    let mut summary = BvpSummary {
        converged: false,
        j_direct: None,
        h_shoot: shot.as_ref().ok().copied(),
        cross_diff: None,
        grad_inf_norm: None,
        iterations: None,
        residuals: Vec::new(),
        minimize_error: None,
        shoot_error: shot.as_ref().err().map(|e| e.to_string()),
    };
    match &direct {
        Ok(r) => {
            summary.converged = r.converged;
            summary.j_direct = Some(r.j);
            summary.grad_inf_norm = Some(r.grad_inf_norm);
            summary.iterations = Some(r.iterations);
            summary.cross_diff = summary.h_shoot.map(|h| (h - r.j).abs());
            out.csv("curve.csv", &curve_csv(&r.curve));
            out.csv("u.csv", &u_csv(&r.curve, &r.cara.u));
            for (report, file) in [
                (herglotz_residual(m, &r.curve, &r.cara), "herglotz.csv"),
                (erdmann_residual(m, &r.curve, &r.cara), "erdmann.csv"),
            ] {
                let report = report.map_err(solver)?;
                out.csv(file, &report.to_csv());
                summary.residuals.push(summarize(&report, file));
            }
        }
        Err(e) => summary.minimize_error = Some(e.to_string()),
    }
    let failure = match (&direct, &shot) {
        (Err(e), _) => Some(format!("direct minimization: {e}")),
        (Ok(r), _) if !r.converged => Some(format!(
            "direct minimization did not converge after {} iterations (gradient {})",
            r.iterations,
            fmt_f64(r.grad_inf_norm)
        )),
        (_, Err(e)) => Some(format!("shooting: {e}")),
        _ => None,
    };
    out.json("summary.json", &summary);
    Ok(Outcome {
        outputs: out,
        failure,
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn initial_data(m: &ModelSpec, e: &EvolveConfig, base: &Path) -> Result<GridFunction, AppError> {
    let g = &e.grid;
    if g.bounds.len() != m.dim() || g.shape.len() != m.dim() {
        return Err(AppError::Config(format!(
            "evolve: grid must have {} axes to match the model",
            m.dim()
        )));
    }
    let probe = GridFunction::new(
        g.bounds.clone(),
        g.shape.clone(),
        vec![0.0; g.shape.iter().product()],
    )
    .map_err(|err| AppError::Config(format!("evolve grid: {err}")))?;
    match &e.phi {
        PhiSource::Expr(src) => {
            let expr = herglotz_core::Expr::parse(src)
                .map_err(|err| AppError::Config(format!("evolve phi: {err}")))?;
            GridFunction::from_expr(&expr, g.bounds.clone(), g.shape.clone())
                .map_err(|err| AppError::Config(format!("evolve phi: {err}")))
        }
        PhiSource::Csv { csv } => {
            let path = resolve(base, csv);
            let text = std::fs::read_to_string(&path)
                .map_err(|err| AppError::Io(format!("reading {}: {err}", path.display())))?;
            let phi = GridFunction::from_csv(&text)
                .map_err(|err| AppError::Config(format!("{}: {err}", path.display())))?;
            if !phi.same_grid(&probe) {
                return Err(AppError::Config(format!(
                    "{}: grid {:?} with bounds {:?} does not match the configured grid {:?} with bounds {:?}",
                    path.display(),
                    phi.shape(),
                    phi.bounds(),
                    g.shape,
                    g.bounds
                )));
            }
            Ok(phi)
        }
    }
}

#[derive(Serialize)]
struct Snapshot {
    t: f64,
    file: String,
    argmin_file: String,
    radius_used: f64,
    kappa: (f64, f64),
    stats: EvolveStats,
}

#[derive(Serialize)]
struct EvolveSummary {
    operator: OperatorName,
    t0: f64,
    snapshots: Vec<Snapshot>,
    viscosity: Vec<ReportSummary>,
    notes: Vec<String>,
    error: Option<String>,
}

pub fn evolve_cmd(
    m: &ModelSpec,
    e: &EvolveConfig,
    base: &Path,
    mut out: Outputs,
) -> Result<Outcome, AppError> {
    let times = e.snapshot_times()?;
    let phi = initial_data(m, e, base)?;
    let defaults = EvolveOptions::default();
    let opts = EvolveOptions {
        kappa: e.kappa()?,
        refine: e.refine,
        shoot: ShootOptions {
            steps: e.shoot_steps,
            ..defaults.shoot
        },
    };
    let op = match e.operator {
        OperatorName::Negative => Operator::Negative,
        OperatorName::Positive => Operator::Positive,
    };
    let mut summary = EvolveSummary {
        operator: e.operator,
        t0: e.t0,
        snapshots: Vec::new(),
        viscosity: Vec::new(),
        notes: Vec::new(),
        error: None,
    };
    let mut grids: Vec<(f64, GridFunction)> = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        let res = match evolve(m, &phi, e.t0, t, op, &opts) {
            Ok(r) => r,
            Err(err) => {
                summary.error = Some(format!("snapshot t={t}: {err}"));
                break;
            }
        };
        let file = format!("snapshot_{k:03}.csv");
        let argmin_file = format!("argmin_{k:03}.csv");
        out.csv(&file, &format!("# t,{}\n{}", fmt_f64(t), res.u.to_csv()));
        out.csv(&argmin_file, &res.argmin_csv());
        summary.snapshots.push(Snapshot {
            t,
            file,
            argmin_file,
            radius_used: res.radius_used,
            kappa: res.kappa,
            stats: res.stats,
        });
        grids.push((t, res.u));
    }
    if grids.len() < 2 {
        summary
            .notes
            .push("fewer than two snapshots: no viscosity report".into());
    } else if op == Operator::Positive {
        summary
            .notes
            .push("viscosity reports are computed for the negative operator only".into());
    } else {
        for (k, w) in grids.windows(2).enumerate() {
            let report =
                viscosity_residual(m, &w[0].1, &w[1].1, w[0].0, w[1].0, &ViscosityOptions::default())
                    .map_err(solver)?;
            let file = format!("viscosity_{k:03}.csv");
            out.csv(&file, &report.to_csv());
            summary.viscosity.push(summarize(&report, &file));
        }
    }
    let failure = summary.error.clone();
    out.json("summary.json", &summary);
    Ok(Outcome {
        outputs: out,
        failure,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Suite {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn suite(name: &str, value: f64, tolerance: f64) -> Suite {
    Suite {
        name: name.into(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

#[derive(Serialize)]
struct VerifySummary {
    #[serde(rename = "J")]
    j: f64,
    source: String,
    converged: bool,
    suites: Vec<Suite>,
    bounds: MinimizerBoundCheck,
    residuals: Vec<ReportSummary>,
    all_pass: bool,
}

/// Worst relative mismatch between the adjoint gradient and central
/// differences along random directions, on a randomly perturbed copy of `c`.
fn gradient_mismatch(
    m: &ModelSpec,
    c: &DiscreteCurve,
    u0: f64,
    directions: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, AppError> {
    let n = c.intervals();
    let dim = c.dim();
    let mut nodes = c.nodes().to_vec();
    for node in &mut nodes[1..n] {
        for v in node.iter_mut() {
            *v += 0.1 * rng.gen_range(-1.0..1.0);
        }
    }
    let base = DiscreteCurve::new(c.a(), c.b(), nodes.clone()).map_err(solver)?;
    let grad = gradient(m, &base, u0).map_err(solver)?;
    let eps = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let d: Vec<Vec<f64>> = (0..n - 1)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let shifted = |sign: f64| -> Result<f64, AppError> {
            let mut moved = nodes.clone();
            for (i, di) in d.iter().enumerate() {
                for (v, dv) in moved[i + 1].iter_mut().zip(di) {
                    *v += sign * eps * dv;
                }
            }
            let c = DiscreteCurve::new(base.a(), base.b(), moved).map_err(solver)?;
            Ok(action(m, &c, u0).map_err(solver)?.0)
        };
        let fd = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * eps);
        let an: f64 = grad
            .iter()
            .zip(&d)
            .map(|(g, di)| g.iter().zip(di).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-12));
    }
    Ok(worst)
}

/// du Bois-Reymond constancy of `e^{−∫L_u} L_v − ∫ e^{−∫L_u} L_x` at the
/// interval midpoints, worst over the coordinates.
fn constancy(m: &ModelSpec, c: &DiscreteCurve, cara: &CaraSolution) -> Result<f64, AppError> {
    let u = &cara.u;
    let e = energy_e(m, c, cara).map_err(solver)?;
    let n = c.intervals();
    let mut f = vec![Vec::with_capacity(n); c.dim()];
    let mut g = vec![Vec::with_capacity(n); c.dim()];
    for i in 0..n {
        let d = m
            .lagrangian_derivs(e.s[i], &c.lerp(i, 0.5), &c.velocity(i), 0.5 * (u[i] + u[i + 1]))
            .map_err(solver)?;
        let w = (-e.weight_log[i]).exp();
        for k in 0..c.dim() {
            f[k].push(w * d.l_x[k]);
            g[k].push(w * d.l_v[k]);
        }
    }
    let mut worst = 0.0f64;
    for k in 0..c.dim() {
        worst = worst.max(dbr_constancy(&e.s, &f[k], &g[k]).map_err(solver)?);
    }
    Ok(worst)
}

pub fn verify_cmd(
    m: &ModelSpec,
    v: &VerifyConfig,
    seed: u64,
    base: &Path,
    mut out: Outputs,
) -> Result<Outcome, AppError> {
    BvpConfig {
        a: v.a,
        b: v.b,
        x: v.x.clone(),
        y: v.y.clone(),
        u0: v.u0,
        n: v.n,
        gtol: 0.0,
        max_iter: 0,
        shoot_steps: 0,
    }
    .check(m.dim())?;
    let tol = v.tolerances;
    let (res, source) = match &v.curve {
        Some(p) => {
            let path = resolve(base, p);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| AppError::Io(format!("reading {}: {e}", path.display())))?;
            let curve = read_curve(&text, m.dim())?;
            let cara = solve_ivp(m, &curve, v.u0).map_err(solver)?;
            let j = cara.u.last().unwrap() - v.u0;
            let g = gradient(m, &curve, v.u0).map_err(solver)?;
            let gmax = g.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs()));
            let r = MinimizeResult {
                curve,
                cara,
                j,
                grad_inf_norm: gmax,
                iterations: 0,
                herglotz_residual: f64::NAN,
                converged: true,
            };
            (r, path.display().to_string())
        }
        None => {
            let opts = MinimizeOptions {
                n: v.n,
                ..MinimizeOptions::default()
            };
            let r = minimize(m, v.a, v.b, &v.x, &v.y, v.u0, &opts).map_err(solver)?;
            (r, "minimize".to_string())
        }
    };
    let c = &res.curve;
    let mut suites = Vec::new();
    let mut residuals = Vec::new();
    for (report, file, t) in [
        (herglotz_residual(m, c, &res.cara), "herglotz.csv", tol.herglotz),
        (erdmann_residual(m, c, &res.cara), "erdmann.csv", tol.erdmann),
    ] {
        let report = report.map_err(solver)?;
        out.csv(file, &report.to_csv());
        suites.push(suite(&report.name, report.sup_residual, t));
        residuals.push(summarize(&report, file));
    }
    suites.push(suite(
        "du_bois_reymond",
        constancy(m, c, &res.cara)?,
        tol.constancy,
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    suites.push(suite(
        "gradient",
        gradient_mismatch(m, c, v.u0, v.gradient_directions, &mut rng)?,
        tol.gradient,
    ));

    let shot = shoot(
        m,
        c.a(),
        c.b(),
        c.node(0),
        c.node(c.intervals()),
        v.u0,
        &ShootOptions::default(),
    );
    let shoot_gap = match shot {
        Ok((_, traj)) => (traj.last().u - v.u0 - res.j).abs() / (1.0 + res.j.abs()),
        Err(_) => f64::INFINITY,
    };
    suites.push(suite("shooting_agreement", shoot_gap, tol.shooting));

    let eps_grid: Vec<f64> = (0..=20).map(|k| -0.5 + 0.25 * k as f64).collect();
    let n = c.intervals();
    let mut convex_fail = 0.0;
    for i in (0..n).step_by((n / 8).max(1)) {
        let s = c.time(i) + 0.5 * c.step();
        let u = 0.5 * (res.cara.u[i] + res.cara.u[i + 1]);
        let chk =
            convexity_monotone_check(m, s, &c.lerp(i, 0.5), &c.velocity(i), u, &eps_grid).map_err(solver)?;
        if !chk.pass {
            convex_fail += 1.0;
        }
    }
    suites.push(suite("convexity_monotone_failures", convex_fail, 0.0));

    let bounds = check_minimizer(m, &res, v.u0).map_err(solver)?;
    suites.push(suite(
        "apriori_bounds_deficit",
        -bounds.margin_f1.min(bounds.margin_f2).min(bounds.margin_f8),
        0.0,
    ));

    let all_pass = suites.iter().all(|s| s.pass);
    let failure = (!res.converged).then(|| "direct minimization did not converge".to_string());
    out.json(
        "verify.json",
        &VerifySummary {
            j: res.j,
            source,
            converged: res.converged,
            suites,
            bounds,
            residuals,
            all_pass,
        },
    );
    Ok(Outcome {
        outputs: out,
        failure,
    })
}

pub fn audit_cmd(m: &ModelSpec, a: &AuditConfig, mut out: Outputs) -> Result<Outcome, AppError> {
    let report = audit_assumptions(m, &a.audit_box()?, a.samples);
    out.json("audit.json", &report);
    Ok(Outcome {
        outputs: out,
        failure: None,
    })
}

pub fn bounds_cmd(m: &ModelSpec, b: &BoundsConfig, mut out: Outputs) -> Result<Outcome, AppError> {
    let bad = |e: herglotz_core::Error| AppError::Config(format!("bounds: {e}"));
    let mut report: BoundsReport = lip_bound_chain(&m.constants, b.t, b.r, b.u).map_err(bad)?;
    match (b.kappa1, b.kappa2) {
        (Some(k1), Some(k2)) => {
            report.r_min = Some(search_radius(&m.constants, 0.0, b.t, k1, k2, b.phi_abs).map_err(bad)?);
        }
        (None, None) => {}
        _ => {
            return Err(AppError::Config(
                "bounds: give both kappa1 and kappa2 or neither".into(),
            ))
        }
    }
    out.json("bounds.json", &report);
    Ok(Outcome {
        outputs: out,
        failure: None,
    })
}

/// Dispatches the config's command block.
pub fn run(cfg: &RunConfig, base: &Path) -> Result<Outcome, AppError> {
    use crate::config::Command;
    let m = cfg.model.build()?;
    let out = Outputs::new(&cfg.hash());
    match cfg.command()? {
        Command::Bvp(b) => bvp(&m, b, out),
        Command::Evolve(e) => evolve_cmd(&m, e, base, out),
        Command::Verify(v) => verify_cmd(&m, v, cfg.seed, base, out),
        Command::Audit(a) => audit_cmd(&m, a, out),
        Command::Bounds(b) => bounds_cmd(&m, b, out),
    }
}
