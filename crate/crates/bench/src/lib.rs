//! Shared fixtures for the benchmarks.

use herglotz_core::{AssumptionConstants, Discount, DiscreteCurve, Expr, GridFunction, ModelSpec, Potential};

/// `L = ½v² − 0.3 cos x + g(u)` with a saturating discount.
pub fn wavy_model(dim: usize) -> ModelSpec {
    let v = if dim == 1 {
        "0.3*cos(x1)"
    } else {
        "0.3*cos(x1)*cos(x2)"
    };
    ModelSpec::with_identity(
        dim,
        Potential::parse(v, dim).expect("potential parses"),
        Discount::Saturating(0.5),
        AssumptionConstants {
            k: 0.5,
            ..AssumptionConstants::free()
        },
    )
    .expect("model is valid")
}

/// Straight line from the origin to `(1, .., 1)` bent by a sine.
pub fn bent_curve(dim: usize, n: usize) -> DiscreteCurve {
    DiscreteCurve::from_fn(0.0, 1.0, n, |s| {
        (0..dim)
            .map(|d| s + 0.2 * (std::f64::consts::PI * s).sin() * (d as f64 + 1.0))
            .collect()
    })
    .expect("curve is valid")
}

pub fn quadratic_data(n: usize) -> GridFunction {
    GridFunction::from_expr(
        &Expr::parse("0.5*x1^2").expect("parses"),
        vec![(-3.0, 3.0)],
        vec![n],
    )
    .expect("grid is valid")
}
