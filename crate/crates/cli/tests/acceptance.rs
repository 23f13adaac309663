//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use herglotz_core::bounds::check_minimizer;
use herglotz_core::evolve::{evolve_negative, markov_check, EvolveResult};
use herglotz_core::model::audit_assumptions;
use herglotz_core::varmin::{action, gradient};
use herglotz_core::verify::{
    dynamic_programming_check, energy_e, erdmann_residual, herglotz_residual, viscosity_residual,
    ViscosityOptions,
};
use herglotz_core::{
    fundamental_neg, minimize, AssumptionConstants, AuditBox, Discount, DiscreteCurve, EvolveOptions, Expr,
    GridFunction, MinimizeOptions, ModelSpec, Potential, ShootOptions,
};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn model(dim: usize, v: &str, discount: Discount, constants: AssumptionConstants) -> ModelSpec {
    ModelSpec::with_identity(dim, Potential::parse(v, dim).unwrap(), discount, constants).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cli(sub: &str, config: &Path, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_herglotz"))
        .args([sub, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!(
            "{sub} exited with {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ));
    }
    Ok(())
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

/// Rows of a CSV written by the CLI, without comment and header lines.
fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

fn free_motion(tmp: &Path) -> Check {
    let out = tmp.join("c1");
    cli("bvp", &configs().join("free_bvp.json"), &out)?;
    let s = summary(&out);
    let j_err = (s["J_direct"].as_f64().unwrap() - 0.5).abs();
    let h_err = (s["h_shoot"].as_f64().unwrap() - 0.5).abs();
    let node_err = csv_rows(&out.join("curve.csv"))
        .iter()
        .map(|r| (r[1] - r[0]).abs())
        .fold(0.0, f64::max);
    ensure(
        j_err <= 1e-8 && node_err <= 1e-8 && h_err <= 1e-9,
        format!("|J-0.5|={j_err:.1e} nodes={node_err:.1e} |h-0.5|={h_err:.1e}"),
    )
}

/// Value of the discounted problem computed independently: the extremal of
/// `ẍ + λẋ = 0` through (0,0), (1,1) fed into `u̇ = ½ξ̇² − λu`, whose solution
/// is `∫ e^{−λ(1−s)} ½ξ̇(s)² ds`, evaluated by composite Simpson.
fn discounted_oracle(lambda: f64) -> f64 {
    let denom = 1.0 - (-lambda).exp();
    let speed = |s: f64| lambda * (-lambda * s).exp() / denom;
    let f = |s: f64| (-lambda * (1.0 - s)).exp() * 0.5 * speed(s).powi(2);
    let n = 20_000;
    let h = 1.0 / n as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    acc * h / 3.0
}

fn discounted(tmp: &Path) -> Check {
    let lambda = 1.0f64;
    let closed = lambda * (-lambda).exp() / (2.0 * (1.0 - (-lambda).exp()));
    let oracle = discounted_oracle(lambda);
    if (oracle - closed).abs() > 1e-12 {
        return Err(format!("oracle {oracle} disagrees with closed form {closed}"));
    }
    let out = tmp.join("c2");
    cli("bvp", &configs().join("discounted_bvp.json"), &out)?;
    let s = summary(&out);
    let j_err = (s["J_direct"].as_f64().unwrap() - oracle).abs();
    let h_err = (s["h_shoot"].as_f64().unwrap() - oracle).abs();
    let shape = |t: f64| (1.0 - (-t).exp()) / (1.0 - (-1f64).exp());
    let node_err = csv_rows(&out.join("curve.csv"))
        .iter()
        .map(|r| (r[1] - shape(r[0])).abs())
        .fold(0.0, f64::max);
    ensure(
        j_err <= 1e-5 && h_err <= 1e-5 && node_err <= 1e-4,
        format!("oracle={oracle:.9} |J-o|={j_err:.1e} |h-o|={h_err:.1e} nodes={node_err:.1e}"),
    )
}

fn gradient_models() -> Vec<ModelSpec> {
    let k = |k: f64| AssumptionConstants {
        k,
        ..AssumptionConstants::free()
    };
    vec![
        model(1, "0.3*cos(x1)", Discount::Linear(1.0), k(1.0)),
        model(1, "0.5*x1^2*(1+t)", Discount::Saturating(0.8), k(0.8)),
        model(
            2,
            "x1*sin(t) + 0.2*x2^2 - 0.1*x1*x2",
            Discount::Linear(0.5),
            k(0.5),
        ),
    ]
}

fn gradient_fd(_: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for m in gradient_models() {
        for _ in 0..20 {
            let dim = m.dim();
            let n = 16;
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut c = DiscreteCurve::straight(0.0, 1.0, &x, &y, n).unwrap();
            let mut nodes = c.nodes().to_vec();
            for node in &mut nodes[1..n] {
                for v in node.iter_mut() {
                    *v += rng.gen_range(-0.3..0.3);
                }
            }
            c = DiscreteCurve::new(0.0, 1.0, nodes.clone()).unwrap();
            let u0 = rng.gen_range(-0.5..0.5);
            let g = gradient(&m, &c, u0).unwrap();
            let eps = 1e-6;
            let mut diff = 0.0f64;
            let mut scale = 0.0f64;
            for i in 1..n {
                for d in 0..dim {
                    let at = |delta: f64| {
                        let mut moved = nodes.clone();
                        moved[i][d] += delta;
                        action(&m, &DiscreteCurve::new(0.0, 1.0, moved).unwrap(), u0)
                            .unwrap()
                            .0
                    };
                    let fd = (at(eps) - at(-eps)) / (2.0 * eps);
                    diff = diff.max((fd - g[i - 1][d]).abs());
                    scale = scale.max(fd.abs());
                }
            }
            worst = worst.max(diff / scale.max(1e-8));
        }
    }
    ensure(
        worst <= 1e-4,
        format!("worst relative mismatch {worst:.1e} over 60 curves"),
    )
}

fn residual_decay(_: &Path) -> Check {
    let k = AssumptionConstants {
        k: 0.5,
        ..AssumptionConstants::free()
    };
    let solve = |m: &ModelSpec, n: usize| {
        let opts = MinimizeOptions {
            n,
            ..MinimizeOptions::default()
        };
        minimize(m, 0.0, 1.0, &[0.0], &[1.0], 0.0, &opts).unwrap()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for v in ["x1*sin(t)", "0.5*x1^2*(1+t)"] {
        let m = model(1, v, Discount::Linear(0.5), k);
        let sups: Vec<(f64, f64)> = [64, 128, 256, 512]
            .iter()
            .map(|&n| {
                let r = solve(&m, n);
                let e = erdmann_residual(&m, &r.curve, &r.cara).unwrap().sup_residual;
                let h = herglotz_residual(&m, &r.curve, &r.cara).unwrap().sup_residual;
                (e, h)
            })
            .collect();
        let mut worst = f64::INFINITY;
        for w in sups.windows(2) {
            worst = worst.min(w[0].0 / w[1].0).min(w[0].1 / w[1].1);
        }
        ok &= worst >= 1.8;
        notes.push(format!("V={v}: min ratio {worst:.2}"));
    }
    // autonomous: spread of E shrinks like N⁻²
    let m = model(
        1,
        "0.3*cos(x1)",
        Discount::Linear(1.0),
        AssumptionConstants { k: 1.0, ..k },
    );
    let spread = |n: usize| {
        let r = solve(&m, n);
        let e = energy_e(&m, &r.curve, &r.cara).unwrap().energy;
        let hi = e.iter().copied().fold(f64::MIN, f64::max);
        let lo = e.iter().copied().fold(f64::MAX, f64::min);
        (hi - lo) * (n * n) as f64
    };
    let scaled: Vec<f64> = [64, 128, 256].iter().map(|&n| spread(n)).collect();
    let bounded = scaled.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    ok &= bounded;
    notes.push(format!(
        "autonomous N²·spread(E) = {:.2e}, {:.2e}, {:.2e}",
        scaled[0], scaled[1], scaled[2]
    ));
    ensure(ok, notes.join("; "))
}

/// Random models with bounded potentials and constants chosen to pass the
/// audit on `box`, together with the audit box.
fn audited_models(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
) -> Result<Vec<(ModelSpec, AuditBox)>, String> {
    let bx = AuditBox {
        t_range: (0.0, 1.0),
        x_radius: 1.0,
        v_radius: 3.0,
        u_radius: 2.0,
    };
    let mut out = Vec::new();
    for _ in 0..count {
        let alpha: f64 = rng.gen_range(-0.5..0.5);
        let beta: f64 = rng.gen_range(-0.5..0.5);
        let lambda: f64 = rng.gen_range(-1.0..1.0);
        let v = if dim == 1 {
            format!("{alpha}*cos(x1) + {beta}*x1*sin(t)")
        } else {
            format!("{alpha}*cos(x1)*cos(x2) + {beta}*x2*sin(t)")
        };
        let discount = if rng.gen_bool(0.5) {
            Discount::Linear(lambda)
        } else {
            Discount::Saturating(lambda.abs())
        };
        let constants = AssumptionConstants {
            k: lambda.abs(),
            c0: alpha.abs() + beta.abs() * bx.x_radius,
            c1: alpha.abs() + beta.abs() * bx.x_radius,
            theta0_coeff: 0.5,
            thetabar0_coeff: 0.5,
            thetabar0_offset: 0.0,
            big_c1: beta.abs() * bx.x_radius,
            big_c2: 0.0,
        };
        let m = model(dim, &v, discount, constants);
        let report = audit_assumptions(&m, &bx, 512);
        if !report.all_pass {
            return Err(format!("audit failed for V={v}: {:?}", report.conditions));
        }
        out.push((m, bx));
    }
    Ok(out)
}

fn point(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-r..r)).collect()
}

fn method_agreement(_: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut count = 0;
    for dim in [1, 2] {
        for (m, bx) in audited_models(&mut rng, 10, dim)? {
            let x = point(&mut rng, dim, bx.x_radius);
            let y = point(&mut rng, dim, bx.x_radius);
            let u0 = rng.gen_range(-0.5..0.5);
            let f = fundamental_neg(&m, 0.0, 1.0, &x, &y, u0, &ShootOptions::default())
                .map_err(|e| e.to_string())?;
            let r =
                minimize(&m, 0.0, 1.0, &x, &y, u0, &MinimizeOptions::default()).map_err(|e| e.to_string())?;
            let h = f.h_shoot.ok_or("shooting failed")?;
            worst = worst.max((h - r.j).abs() / (1.0 + r.j.abs()));
            count += 1;
        }
    }
    ensure(
        worst <= 1e-5,
        format!("worst |h-J|/(1+|J|) = {worst:.1e} over {count} problems"),
    )
}

fn hopf_lax_phi(n: usize) -> GridFunction {
    GridFunction::from_expr(&Expr::parse("0.5*x1^2").unwrap(), vec![(-3.0, 3.0)], vec![n]).unwrap()
}

fn hopf_lax_check(run: &EvolveResult) -> Check {
    let g = &run.u;
    let mut err = 0.0f64;
    let mut outside = 0;
    for k in 0..g.len() {
        let x = g.point(k)[0];
        err = err.max((g.values()[k] - x * x / 4.0).abs());
        if (run.argmin_y[k][0] - x).abs() > run.radii[k] {
            outside += 1;
        }
    }
    ensure(
        err <= 2e-3 && outside == 0,
        format!(
            "sup error {err:.1e}, {outside} argmins outside the radius (max {:.3})",
            run.radius_used
        ),
    )
}

fn markov(_: &Path) -> Check {
    let phi = hopf_lax_phi(241);
    let mut notes = Vec::new();
    let mut ok = true;
    for (lambda, tol) in [(0.0, 5e-3), (1.0, 1e-2)] {
        let m = model(
            1,
            "0",
            Discount::Linear(lambda),
            AssumptionConstants {
                k: lambda,
                ..AssumptionConstants::free()
            },
        );
        let r =
            markov_check(&m, &phi, 0.0, 0.5, 1.0, &EvolveOptions::default()).map_err(|e| e.to_string())?;
        ok &= r.sup_residual <= tol;
        notes.push(format!("lambda={lambda}: {:.1e} (tol {tol:.0e})", r.sup_residual));
    }
    ensure(ok, notes.join(", "))
}

fn viscosity(hl_a: &EvolveResult, hl_b: &EvolveResult) -> Check {
    let m = ModelSpec::free(1);
    let (t1, t2) = (0.95, 1.0);
    let h = 0.01;
    let bound = 5.0 * (h + (t2 - t1));
    let smooth = viscosity_residual(&m, &hl_a.u, &hl_b.u, t1, t2, &ViscosityOptions::default())
        .map_err(|e| e.to_string())?;

    // |y| is Lipschitz with constant 1, which bounds the search radius
    let phi = GridFunction::from_expr(&Expr::parse("abs(x1)").unwrap(), vec![(-3.0, 3.0)], vec![601])
        .map_err(|e| e.to_string())?;
    let opts = EvolveOptions {
        kappa: Some((0.0, 1.0)),
        ..EvolveOptions::default()
    };
    let (s1, s2) = (0.1, 0.15);
    let a = evolve_negative(&m, &phi, 0.0, s1, &opts).map_err(|e| e.to_string())?;
    let b = evolve_negative(&m, &phi, 0.0, s2, &opts).map_err(|e| e.to_string())?;
    let kink = viscosity_residual(&m, &a.u, &b.u, s1, s2, &ViscosityOptions::default())
        .map_err(|e| e.to_string())?;
    let kink_bound = 5.0 * (h + (s2 - s1));
    ensure(
        smooth.sup_residual <= bound
            && smooth.excluded == 0
            && kink.excluded > 0
            && kink.sup_residual <= kink_bound,
        format!(
            "smooth {:.1e} (bound {bound:.2}); |y|: {} excluded, off-kink {:.1e} (bound {kink_bound:.2})",
            smooth.sup_residual, kink.excluded, kink.sup_residual
        ),
    )
}

fn bound_validity(_: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = f64::INFINITY;
    let mut count = 0;
    for dim in [1, 2] {
        for (m, bx) in audited_models(&mut rng, 10, dim)? {
            let t = rng.gen_range(0.5..1.0);
            let x = point(&mut rng, dim, bx.x_radius);
            let y = point(&mut rng, dim, bx.x_radius);
            let u0 = rng.gen_range(-0.5..0.5);
            let r =
                minimize(&m, 0.0, t, &x, &y, u0, &MinimizeOptions::default()).map_err(|e| e.to_string())?;
            if !r.converged {
                return Err(format!("minimizer {count} did not converge"));
            }
            let chk = check_minimizer(&m, &r, u0).map_err(|e| e.to_string())?;
            worst = worst.min(chk.margin_f1).min(chk.margin_f2).min(chk.margin_f8);
            count += 1;
        }
    }
    ensure(
        worst >= 0.0,
        format!("smallest margin {worst:.3} over {count} minimizers"),
    )
}

fn dynamic_programming(_: &Path) -> Check {
    let m = ModelSpec::free(1);
    let phi = hopf_lax_phi(601);
    let times = [0.1, 0.3, 0.5, 0.7, 0.9];
    let mut worst = 0.0f64;
    for x in [-1.3, 0.4, 2.0] {
        let r = dynamic_programming_check(&m, &phi, 1.0, &[x], &times, &EvolveOptions::default())
            .map_err(|e| e.to_string())?;
        worst = worst.max(r.sup_residual);
    }
    ensure(
        worst <= 1e-3,
        format!("worst residual {worst:.1e} at 5 times, 3 targets"),
    )
}

fn determinism(tmp: &Path) -> Check {
    let small = tmp.join("evolve.json");
    std::fs::write(
        &small,
        r#"{"model": {"dim": 1, "discount": {"linear": 1.0}},
            "evolve": {"phi": "0.5*x1^2", "grid": {"bounds": [[-2, 2]], "shape": [81]},
                       "t": 1.0, "snapshots": [0.5, 1.0]}}"#,
    )
    .unwrap();
    let runs = [
        ("bvp", configs().join("discounted_bvp.json")),
        ("verify", configs().join("discounted_verify.json")),
        ("audit", configs().join("free_audit.json")),
        ("bounds", configs().join("apriori_bounds.json")),
        ("evolve", small),
    ];
    let mut files = 0;
    for (sub, cfg) in runs {
        let a = tmp.join(format!("det_{sub}_a"));
        let b = tmp.join(format!("det_{sub}_b"));
        cli(sub, &cfg, &a)?;
        cli(sub, &cfg, &b)?;
        let mut names: Vec<_> = std::fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let x = std::fs::read(a.join(&name)).unwrap();
            let y = std::fs::read(b.join(&name)).map_err(|e| format!("{sub}: {e}"))?;
            if x != y {
                return Err(format!("{sub}: {name:?} differs between runs"));
            }
            let text = String::from_utf8(x).map_err(|_| format!("{name:?} is not UTF-8"))?;
            if !text.lines().take(2).any(|l| l.contains("config_sha256=")) || text.contains('\r') {
                return Err(format!("{sub}: {name:?} lacks the header line or uses CRLF"));
            }
            files += 1;
        }
    }
    ensure(files > 0, format!("{files} files byte-identical across reruns"))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let mut failed = 0;
    let mut report = |id: u32, name: &str, start: Instant, result: Check| {
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("criterion {id:>2} PASS {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} FAIL {name}: {d} [{secs:.1}s]");
            }
        }
    };

    let s = Instant::now();
    report(1, "free-motion oracle", s, free_motion(dir));
    let s = Instant::now();
    report(2, "discounted oracle", s, discounted(dir));
    let s = Instant::now();
    report(3, "adjoint gradient vs finite differences", s, gradient_fd(dir));
    let s = Instant::now();
    report(4, "Erdmann/Herglotz residual decay", s, residual_decay(dir));
    let s = Instant::now();
    report(5, "shooting vs direct minimization", s, method_agreement(dir));

    let s = Instant::now();
    let m = ModelSpec::free(1);
    let phi = hopf_lax_phi(601);
    let opts = EvolveOptions::default();
    let hl = evolve_negative(&m, &phi, 0.0, 1.0, &opts);
    let check = match &hl {
        Ok(r) => hopf_lax_check(r),
        Err(e) => Err(e.to_string()),
    };
    report(6, "Hopf-Lax reproduction", s, check);
    let s = Instant::now();
    report(7, "Markov property", s, markov(dir));
    let s = Instant::now();
    let check = match (&hl, evolve_negative(&m, &phi, 0.0, 0.95, &opts)) {
        (Ok(b), Ok(a)) => viscosity(&a, b),
        (Err(e), _) => Err(e.to_string()),
        (_, Err(e)) => Err(e.to_string()),
    };
    report(8, "viscosity residual", s, check);
    let s = Instant::now();
    report(9, "a-priori bound validity", s, bound_validity(dir));
    let s = Instant::now();
    report(10, "dynamic programming", s, dynamic_programming(dir));
    let s = Instant::now();
    report(11, "determinism and format", s, determinism(dir));

    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all 11 criteria passed");
}
