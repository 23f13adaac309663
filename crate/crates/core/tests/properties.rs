use proptest::prelude::*;

use herglotz_core::charflow::integrate_lie;
use herglotz_core::evolve::evolve_negative;
use herglotz_core::model::Var;
use herglotz_core::varmin::{action, gradient};
use herglotz_core::verify::herglotz_residual;
use herglotz_core::{
    minimize, AssumptionConstants, CharState, Discount, DiscreteCurve, EvolveOptions, Expr, GridFunction,
    MinimizeOptions, ModelSpec, Potential,
};

fn discounted(lambda: f64) -> ModelSpec {
    ModelSpec::with_identity(
        1,
        Potential::zero(1),
        Discount::Linear(lambda),
        AssumptionConstants {
            k: lambda.abs(),
            ..AssumptionConstants::free()
        },
    )
    .unwrap()
}

fn wavy(dim: usize) -> ModelSpec {
    let v = if dim == 1 {
        "0.3*cos(x1) + 0.2*x1*sin(t)"
    } else {
        "0.3*cos(x1)*sin(x2) + 0.2*x2*sin(t)"
    };
    ModelSpec::with_identity(
        dim,
        Potential::parse(v, dim).unwrap(),
        Discount::Saturating(0.7),
        AssumptionConstants {
            k: 0.7,
            ..AssumptionConstants::free()
        },
    )
    .unwrap()
}

/// Smooth expression trees over `t, x1, x2`.
fn smooth_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        (0.1f64..3.0).prop_map(|v| format!("{v}")),
        Just("t".to_string()),
        Just("x1".to_string()),
        Just("x2".to_string()),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            inner.clone().prop_map(|a| format!("({a})^2")),
            inner.clone().prop_map(|a| format!("-{a}")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("tanh({a})")),
            inner.prop_map(|a| format!("exp(0.1*{a})")),
        ]
    })
}

fn perturbed(dim: usize, n: usize, seed: &[f64]) -> DiscreteCurve {
    let base = DiscreteCurve::straight(0.0, 1.0, &vec![0.0; dim], &vec![1.0; dim], n).unwrap();
    let mut nodes = base.nodes().to_vec();
    for (i, node) in nodes.iter_mut().enumerate().take(n).skip(1) {
        for (d, v) in node.iter_mut().enumerate() {
            *v += seed[(i * dim + d) % seed.len()];
        }
    }
    DiscreteCurve::new(0.0, 1.0, nodes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn printed_expressions_parse_back(src in smooth_expr()) {
        let e = Expr::parse(&src).unwrap();
        let again = Expr::parse(&e.to_string()).unwrap();
        prop_assert_eq!(again, e);
    }

    #[test]
    fn symbolic_partials_match_central_differences(
        src in smooth_expr(),
        t in -1.0f64..1.0,
        x1 in -1.0f64..1.0,
        x2 in -1.0f64..1.0,
    ) {
        let e = Expr::parse(&src).unwrap();
        let at = |t: f64, x1: f64, x2: f64| e.eval(t, &[x1, x2]).unwrap();
        let h = 1e-5;
        let cases = [
            (Var::T, (at(t + h, x1, x2) - at(t - h, x1, x2)) / (2.0 * h)),
            (Var::X(0), (at(t, x1 + h, x2) - at(t, x1 - h, x2)) / (2.0 * h)),
            (Var::X(1), (at(t, x1, x2 + h) - at(t, x1, x2 - h)) / (2.0 * h)),
        ];
        for (var, fd) in cases {
            let exact = e.derivative(var).eval(t, &[x1, x2]).unwrap();
            prop_assume!(exact.abs() < 1e6);
            prop_assert!((exact - fd).abs() <= 1e-5 * (1.0 + exact.abs()), "{var:?}: {exact} vs {fd}");
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences(
        seed in prop::collection::vec(-0.4f64..0.4, 8..40),
        dim in 1usize..3,
        u0 in -0.5f64..0.5,
    ) {
        let m = wavy(dim);
        let n = 12;
        let c = perturbed(dim, n, &seed);
        let g = gradient(&m, &c, u0).unwrap();
        let eps = 1e-6;
        let mut scale = 0.0f64;
        let mut diff = 0.0f64;
        for i in 1..n {
            for d in 0..dim {
                let shifted = |delta: f64| {
                    let mut nodes = c.nodes().to_vec();
                    nodes[i][d] += delta;
                    action(&m, &DiscreteCurve::new(0.0, 1.0, nodes).unwrap(), u0).unwrap().0
                };
                let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
                diff = diff.max((fd - g[i - 1][d]).abs());
                scale = scale.max(fd.abs());
            }
        }
        prop_assert!(diff <= 1e-4 * scale.max(1e-8), "{diff} vs scale {scale}");
    }

    #[test]
    fn free_characteristics_conserve_the_hamiltonian(
        x in -2.0f64..2.0,
        p in -2.0f64..2.0,
        u in -1.0f64..1.0,
    ) {
        let m = ModelSpec::with_identity(
            1,
            Potential::parse("0.5*cos(x1)", 1).unwrap(),
            Discount::Linear(0.0),
            AssumptionConstants::free(),
        )
        .unwrap();
        let s0 = CharState { x: vec![x], p: vec![p], u };
        let traj = integrate_lie(&m, &s0, 0.0, 1.0, 200).unwrap();
        let h0 = m.hamiltonian(0.0, &[x], &[p], u).unwrap();
        let end = traj.last();
        let h1 = m.hamiltonian(1.0, &end.x, &end.p, end.u).unwrap();
        prop_assert!((h1 - h0).abs() < 1e-9);
    }

    #[test]
    fn grid_csv_round_trip_is_exact(
        values in prop::collection::vec(-1e6f64..1e6, 12),
        lo in -5.0f64..0.0,
        width in 0.1f64..10.0,
    ) {
        let g = GridFunction::new(vec![(lo, lo + width), (-1.0, 2.0)], vec![4, 3], values).unwrap();
        let back = GridFunction::from_csv(&g.to_csv()).unwrap();
        prop_assert_eq!(back.values(), g.values());
        prop_assert!(back.same_grid(&g));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn lax_oleinik_is_monotone_and_commutes_with_constants(
        shift in 0.0f64..2.0,
        bump in prop::collection::vec(0.0f64..1.0, 21),
    ) {
        let m = ModelSpec::free(1);
        let phi = GridFunction::from_expr(&Expr::parse("sin(2*x1)").unwrap(), vec![(-1.0, 1.0)], vec![21]).unwrap();
        let above = phi.with_values(phi.values().iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
        let shifted = phi.with_values(phi.values().iter().map(|a| a + shift).collect()).unwrap();
        let opts = EvolveOptions { kappa: Some((3.0, 0.0)), ..EvolveOptions::default() };
        let base = evolve_negative(&m, &phi, 0.0, 0.5, &opts).unwrap();
        let up = evolve_negative(&m, &above, 0.0, 0.5, &opts).unwrap();
        let moved = evolve_negative(&m, &shifted, 0.0, 0.5, &opts).unwrap();
        for k in 0..21 {
            prop_assert!(up.u.values()[k] >= base.u.values()[k] - 1e-12);
            prop_assert!((moved.u.values()[k] - base.u.values()[k] - shift).abs() < 1e-9);
        }
    }
}

/// Random admissible variations never lower the action of a converged
/// minimizer.
#[test]
fn minimality_certificate() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for (m, y) in [(discounted(1.0), vec![1.0]), (wavy(2), vec![0.5, -0.5])] {
        let x = vec![0.0; m.dim()];
        let r = minimize(
            &m,
            0.0,
            1.0,
            &x,
            &y,
            0.2,
            &MinimizeOptions {
                n: 32,
                ..MinimizeOptions::default()
            },
        )
        .unwrap();
        assert!(r.converged);
        let n = r.curve.intervals();
        for _ in 0..50 {
            let amp = 10f64.powf(rng.gen_range(-4.0..-1.0));
            let mut nodes = r.curve.nodes().to_vec();
            for node in &mut nodes[1..n] {
                for v in node.iter_mut() {
                    *v += amp * rng.gen_range(-1.0..1.0);
                }
            }
            let c = DiscreteCurve::new(0.0, 1.0, nodes).unwrap();
            let j = action(&m, &c, 0.2).unwrap().0;
            assert!(
                j >= r.j - 1e-12,
                "variation of size {amp} lowered J: {j} < {}",
                r.j
            );
        }
    }
}

/// The discrete value converges to the exact one at second order.
#[test]
fn discounted_value_converges_at_second_order() {
    let m = discounted(1.0);
    let exact = (-1f64).exp() / (2.0 * (1.0 - (-1f64).exp()));
    let err = |n: usize| {
        let opts = MinimizeOptions {
            n,
            multires: false,
            ..MinimizeOptions::default()
        };
        (minimize(&m, 0.0, 1.0, &[0.0], &[1.0], 0.0, &opts).unwrap().j - exact).abs()
    };
    let e: Vec<f64> = [16, 32, 64].iter().map(|&n| err(n)).collect();
    for w in e.windows(2) {
        assert!(w[0] / w[1] >= 3.5, "{e:?}");
    }
}

#[test]
fn residual_reports_are_finite_and_nonnegative() {
    let m = wavy(2);
    let r = minimize(
        &m,
        0.0,
        1.0,
        &[0.0, 0.0],
        &[1.0, 0.5],
        0.0,
        &MinimizeOptions::default(),
    )
    .unwrap();
    let rep = herglotz_residual(&m, &r.curve, &r.cara).unwrap();
    assert!(rep.sup_residual.is_finite() && rep.sup_residual >= 0.0);
    assert!(rep.l2_residual <= rep.sup_residual);
    assert!(rep.details.iter().all(|row| row.last().unwrap() >= &0.0));
}
