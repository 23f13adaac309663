//! Residuals of the weighted energy identity and of the Herglotz equation in
//! the integrated form `d/ds (e^{−∫L_u} L_v) = e^{−∫L_u} L_x`.
//!
//! Everything is sampled at interval midpoints (where the piecewise-linear
//! curve has its velocity) and differenced across the shared node.

use super::ResidualReport;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::ode::{check_model_dim, CaraSolution, DiscreteCurve};

/// Weighted energy `E` and the helper quantities it is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergySamples {
    /// Interval midpoint times.
    pub s: Vec<f64>,
    pub energy: Vec<f64>,
    /// `∫_a^{s_mid} L_u` at each midpoint.
    pub weight_log: Vec<f64>,
    /// `∫_a^{s_k} L_u` at each node.
    pub node_weight_log: Vec<f64>,
}

struct Midpoint {
    s: f64,
    x: Vec<f64>,
    v: Vec<f64>,
    u: f64,
}

fn midpoints(c: &DiscreteCurve, cara: &CaraSolution) -> Vec<Midpoint> {
    let h = c.step();
    (0..c.intervals())
        .map(|i| Midpoint {
            s: c.time(i) + 0.5 * h,
            x: c.lerp(i, 0.5),
            v: c.velocity(i),
            u: 0.5 * (cara.u[i] + cara.u[i + 1]),
        })
        .collect()
}

fn check(m: &ModelSpec, c: &DiscreteCurve, cara: &CaraSolution) -> Result<()> {
    check_model_dim(m, c)?;
    if cara.u.len() != c.nodes().len() {
        return Err(Error::GridMismatch(format!(
            "solution has {} samples, curve has {} nodes",
            cara.u.len(),
            c.nodes().len()
        )));
    }
    Ok(())
}

/// `E(s) = e^{−∫_a^s L_u} (L_v·ξ̇ − L)` at interval midpoints.
pub fn energy_e(m: &ModelSpec, c: &DiscreteCurve, cara: &CaraSolution) -> Result<EnergySamples> {
    check(m, c, cara)?;
    let h = c.step();
    let mids = midpoints(c, cara);
    let mut node_log = vec![0.0];
    let mut s = Vec::with_capacity(mids.len());
    let mut energy = Vec::with_capacity(mids.len());
    let mut weight_log = Vec::with_capacity(mids.len());
    for mp in &mids {
        let d = m.lagrangian_derivs(mp.s, &mp.x, &mp.v, mp.u)?;
        let l = m.lagrangian(mp.s, &mp.x, &mp.v, mp.u)?;
        let base = *node_log.last().expect("seeded");
        let at_mid = base + 0.5 * h * d.l_u;
        let e0 = d.l_v.iter().zip(&mp.v).map(|(a, b)| a * b).sum::<f64>() - l;
        s.push(mp.s);
        energy.push((-at_mid).exp() * e0);
        weight_log.push(at_mid);
        node_log.push(base + h * d.l_u);
    }
    Ok(EnergySamples {
        s,
        energy,
        weight_log,
        node_weight_log: node_log,
    })
}

/// `−e^{−∫L_u} L_t` at interval midpoints: the derivative `E` should have.
pub fn weighted_time_derivative(m: &ModelSpec, c: &DiscreteCurve, cara: &CaraSolution) -> Result<Vec<f64>> {
    let e = energy_e(m, c, cara)?;
    midpoints(c, cara)
        .iter()
        .zip(&e.weight_log)
        .map(|(mp, w)| {
            let d = m.lagrangian_derivs(mp.s, &mp.x, &mp.v, mp.u)?;
            Ok(-(-w).exp() * d.l_t)
        })
        .collect()
}

/// Erdmann residual `(E(mid_k) − E(mid_{k−1}))/Δs + e^{−∫L_u} L_t(s_k)` at
/// each interior node.
pub fn erdmann_residual(m: &ModelSpec, c: &DiscreteCurve, cara: &CaraSolution) -> Result<ResidualReport> {
    let e = energy_e(m, c, cara)?;
    let h = c.step();
    let n = c.intervals();
    let mut rows = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let s_k = c.time(k);
        let v_bar: Vec<f64> = c
            .velocity(k - 1)
            .iter()
            .zip(c.velocity(k))
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let d = m.lagrangian_derivs(s_k, c.node(k), &v_bar, cara.u[k])?;
        let r = (e.energy[k] - e.energy[k - 1]) / h + (-e.node_weight_log[k]).exp() * d.l_t;
        rows.push(vec![s_k, e.energy[k], r]);
    }
    Ok(ResidualReport::from_rows(
        "erdmann",
        n,
        &["s", "energy", "residual"],
        rows,
    ))
}

/// Herglotz residual in integrated form, one row per interior node; the
/// residual column is the Euclidean norm of the vector residual.
pub fn herglotz_residual(m: &ModelSpec, c: &DiscreteCurve, cara: &CaraSolution) -> Result<ResidualReport> {
    let e = energy_e(m, c, cara)?;
    let h = c.step();
    let n = c.intervals();
    let mids = midpoints(c, cara);
    let weighted_lv = mids
        .iter()
        .zip(&e.weight_log)
        .map(|(mp, w)| {
            let d = m.lagrangian_derivs(mp.s, &mp.x, &mp.v, mp.u)?;
            let scale = (-w).exp();
            Ok(d.l_v.into_iter().map(|p| scale * p).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let s_k = c.time(k);
        let v_bar: Vec<f64> = mids[k - 1]
            .v
            .iter()
            .zip(&mids[k].v)
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let d = m.lagrangian_derivs(s_k, c.node(k), &v_bar, cara.u[k])?;
        let w = (-e.node_weight_log[k]).exp();
        let r = weighted_lv[k]
            .iter()
            .zip(&weighted_lv[k - 1])
            .zip(&d.l_x)
            .map(|((pk, pk1), lx)| {
                let ri = (pk - pk1) / h - w * lx;
                ri * ri
            })
            .sum::<f64>()
            .sqrt();
        rows.push(vec![s_k, r]);
    }
    Ok(ResidualReport::from_rows("herglotz", n, &["s", "residual"], rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssumptionConstants, Discount, Potential};
    use crate::ode::solve_ivp;

    fn discounted(lambda: f64) -> ModelSpec {
        let mut k = AssumptionConstants::free();
        k.k = lambda.abs();
        ModelSpec::with_identity(1, Potential::zero(1), Discount::Linear(lambda), k).unwrap()
    }

    fn exp_profile(n: usize) -> DiscreteCurve {
        let e1 = 1.0 - (-1.0f64).exp();
        DiscreteCurve::from_fn(0.0, 1.0, n, |s| vec![(1.0 - (-s).exp()) / e1]).unwrap()
    }

    #[test]
    fn free_line_has_constant_energy_and_zero_herglotz_residual() {
        let m = ModelSpec::free(1);
        let c = DiscreteCurve::straight(0.0, 1.0, &[0.0], &[1.0], 16).unwrap();
        let cara = solve_ivp(&m, &c, 0.0).unwrap();
        let e = energy_e(&m, &c, &cara).unwrap();
        assert!(e.energy.iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert_eq!(herglotz_residual(&m, &c, &cara).unwrap().sup_residual, 0.0);
        assert_eq!(erdmann_residual(&m, &c, &cara).unwrap().sup_residual, 0.0);
    }

    #[test]
    fn rest_curve_with_zero_u_has_zero_energy() {
        let m = discounted(1.0);
        let c = DiscreteCurve::straight(0.0, 1.0, &[0.0], &[0.0], 8).unwrap();
        let cara = solve_ivp(&m, &c, 0.0).unwrap();
        let e = energy_e(&m, &c, &cara).unwrap();
        assert!(e.energy.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn discounted_extremal_sampled_at_nodes_is_a_discrete_extremal() {
        // chord slopes of 1 − e^{−s} are e^{−s_mid}·sinh(h/2)/(h/2), which the
        // midpoint weight e^{s_mid} turns into a constant
        let m = discounted(1.0);
        for n in [8, 32, 64] {
            let c = exp_profile(n);
            let cara = solve_ivp(&m, &c, 0.0).unwrap();
            let r = herglotz_residual(&m, &c, &cara).unwrap().sup_residual;
            assert!(r < 1e-10, "{n}: {r}");
        }
    }

    #[test]
    fn straight_line_is_not_a_discounted_extremal() {
        let m = discounted(1.0);
        for n in [32, 128, 512] {
            let c = DiscreteCurve::straight(0.0, 1.0, &[0.0], &[1.0], n).unwrap();
            let cara = solve_ivp(&m, &c, 0.0).unwrap();
            let r = herglotz_residual(&m, &c, &cara).unwrap();
            // e^{-∫L_u} = e^{s}: residual ≈ |λ ξ̇| e^{s} ≥ 1
            assert!(r.sup_residual > 0.9, "{}", r.sup_residual);
            let e = erdmann_residual(&m, &c, &cara).unwrap();
            assert!(e.sup_residual > 0.4, "{}", e.sup_residual);
        }
    }
}
