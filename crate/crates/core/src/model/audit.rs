//! Sampling audit of the standing assumptions on a bounded box.
//!
//! The margins are worst cases over a finite sample set (a 3-level lattice
//! through the box corners and centre, plus a Halton sequence). A passing
//! report is evidence on the box only, never a global certificate.

use serde::{Deserialize, Serialize};

use super::ModelSpec;

/// Sampling box in `(t, x, v, u)`; the `x`, `v` boxes are cubes `[−r, r]ⁿ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditBox {
    pub t_range: (f64, f64),
    pub x_radius: f64,
    pub v_radius: f64,
    pub u_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMargin {
    pub name: String,
    /// Smallest slack observed; negative means violated.
    pub worst_margin: f64,
    pub worst_at: Option<SamplePoint>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub box_restricted: bool,
    pub audit_box: AuditBox,
    pub samples_evaluated: usize,
    pub conditions: Vec<ConditionMargin>,
    /// Evaluation failures (non-finite values) encountered while sampling.
    pub evaluation_errors: usize,
    pub invariant_notes: Vec<String>,
    pub all_pass: bool,
}

impl AuditReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionMargin> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut index: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += (index % b) as f64 * f;
        index /= b;
        f *= inv;
    }
    r
}

fn sample_points(dim: usize, bx: &AuditBox, samples: usize) -> Vec<SamplePoint> {
    let coords = 2 * dim + 2;
    let map = |unit: &[f64]| {
        let (t0, t1) = bx.t_range;
        SamplePoint {
            t: t0 + (t1 - t0) * unit[0],
            x: (0..dim)
                .map(|i| bx.x_radius * (2.0 * unit[1 + i] - 1.0))
                .collect(),
            v: (0..dim)
                .map(|i| bx.v_radius * (2.0 * unit[1 + dim + i] - 1.0))
                .collect(),
            u: bx.u_radius * (2.0 * unit[coords - 1] - 1.0),
        }
    };
    let mut out = Vec::new();
    // {lo, mid, hi} lattice; extremes of quadratic envelopes sit on it
    if coords <= 8 {
        let total = 3usize.pow(coords as u32);
        let mut unit = vec![0.0; coords];
        for code in 0..total {
            let mut c = code;
            for slot in unit.iter_mut() {
                *slot = (c % 3) as f64 * 0.5;
                c /= 3;
            }
            out.push(map(&unit));
        }
    }
    let mut unit = vec![0.0; coords];
    for k in 0..samples {
        for (d, slot) in unit.iter_mut().enumerate() {
            *slot = radical_inverse(k as u64 + 1, PRIMES[d % PRIMES.len()]);
        }
        out.push(map(&unit));
    }
    out
}

struct Worst {
    name: &'static str,
    margin: f64,
    at: Option<SamplePoint>,
    violated: bool,
}

impl Worst {
    fn new(name: &'static str) -> Self {
        Worst {
            name,
            margin: f64::INFINITY,
            at: None,
            violated: false,
        }
    }

    /// Records `big − small`; a shortfall within rounding of the two sides
    /// is not a violation.
    fn offer(&mut self, big: f64, small: f64, p: &SamplePoint) {
        let margin = big - small;
        if !(margin >= -64.0 * f64::EPSILON * (big.abs() + small.abs())) {
            self.violated = true;
        }
        if !(margin >= self.margin) {
            self.margin = margin;
            self.at = Some(p.clone());
        }
    }

    fn finish(self) -> ConditionMargin {
        ConditionMargin {
            name: self.name.to_string(),
            worst_margin: self.margin,
            pass: !self.violated,
            worst_at: self.at,
        }
    }
}

/// Worst-case margins of (L1)-(L4) over `samples` Halton points plus a lattice.
pub fn audit_assumptions(m: &ModelSpec, bx: &AuditBox, samples: usize) -> AuditReport {
    let k = &m.constants;
    let points = sample_points(m.dim(), bx, samples.max(1));
    let mut l2_lower = Worst::new("L2_lower");
    let mut l2_upper = Worst::new("L2_upper");
    let mut l3 = Worst::new("L3");
    let mut l4 = Worst::new("L4");
    let mut errors = 0;

    for p in &points {
        let speed = p.v.iter().map(|c| c * c).sum::<f64>().sqrt();
        let eval = || -> crate::Result<(f64, f64, f64, f64)> {
            let l0 = m.lagrangian(p.t, &p.x, &p.v, 0.0)?;
            let l = m.lagrangian(p.t, &p.x, &p.v, p.u)?;
            let d = m.lagrangian_derivs(p.t, &p.x, &p.v, p.u)?;
            Ok((l0, l, d.l_t, d.l_u))
        };
        match eval() {
            Ok((l0, l, l_t, l_u)) => {
                l2_lower.offer(l0, k.theta0(speed) - k.c0, p);
                l2_upper.offer(k.thetabar0(speed) + k.c1, l0, p);
                l3.offer(k.k, l_u.abs(), p);
                l4.offer(k.big_c1 + k.big_c2 * l, l_t.abs(), p);
            }
            Err(_) => {
                errors += 1;
                for w in [&mut l2_lower, &mut l2_upper, &mut l3, &mut l4] {
                    w.offer(f64::NEG_INFINITY, 0.0, p);
                }
            }
        }
    }

    let (eig_min, _) = m.kinetic_eigen_range();
    let l1 = ConditionMargin {
        name: "L1".to_string(),
        worst_margin: eig_min,
        worst_at: None,
        pass: eig_min > 0.0,
    };
    let conditions = vec![l1, l2_lower.finish(), l2_upper.finish(), l3.finish(), l4.finish()];
    let invariant_notes = m.invariant_violations();
    let all_pass = conditions.iter().all(|c| c.pass) && invariant_notes.is_empty();
    AuditReport {
        box_restricted: true,
        audit_box: *bx,
        samples_evaluated: points.len(),
        conditions,
        evaluation_errors: errors,
        invariant_notes,
        all_pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssumptionConstants, Discount, Potential};

    fn bx(x_radius: f64) -> AuditBox {
        AuditBox {
            t_range: (0.0, 1.0),
            x_radius,
            v_radius: 3.0,
            u_radius: 2.0,
        }
    }

    #[test]
    fn free_lagrangian_passes() {
        let r = audit_assumptions(&ModelSpec::free(1), &bx(5.0), 200);
        assert!(r.all_pass, "{r:?}");
        assert!(r.box_restricted);
        for c in &r.conditions {
            assert!(c.worst_margin >= 0.0);
        }
    }

    #[test]
    fn rounding_in_two_dimensions_is_not_a_violation() {
        let r = audit_assumptions(&ModelSpec::free(2), &bx(2.0), 2048);
        assert!(r.all_pass, "{r:?}");
        for c in &r.conditions {
            assert!(c.worst_margin > -1e-14);
        }
    }

    #[test]
    fn quadratic_potential_violates_lower_envelope_at_box_edge() {
        let m = ModelSpec::with_identity(
            1,
            Potential::parse("x1^2", 1).unwrap(),
            Discount::Linear(0.0),
            AssumptionConstants::free(),
        )
        .unwrap();
        let r = audit_assumptions(&m, &bx(10.0), 100);
        let c = r.condition("L2_lower").unwrap();
        assert_eq!(c.worst_margin, -100.0);
        let at = c.worst_at.as_ref().unwrap();
        assert_eq!(at.x[0].abs(), 10.0);
        assert!(!r.all_pass);
    }

    #[test]
    fn discount_beyond_k_violates_l3() {
        let m = ModelSpec::with_identity(
            1,
            Potential::zero(1),
            Discount::Linear(1.0),
            AssumptionConstants::free(),
        )
        .unwrap();
        let r = audit_assumptions(&m, &bx(1.0), 10);
        assert_eq!(r.condition("L3").unwrap().worst_margin, -1.0);
        assert!(!r.invariant_notes.is_empty());
    }

    #[test]
    fn time_dependent_potential_checks_l4() {
        let mut k = AssumptionConstants::free();
        k.c0 = 1.0;
        k.c1 = 1.0;
        let m = ModelSpec::with_identity(
            1,
            Potential::parse("x1*sin(t)", 1).unwrap(),
            Discount::Linear(0.0),
            k,
        )
        .unwrap();
        // |L_t| = |x cos t| <= 1 on |x| <= 1
        let r = audit_assumptions(&m, &bx(1.0), 500);
        assert!(r.condition("L4").unwrap().worst_margin < 0.0);
        k.big_c1 = 1.0;
        let m = ModelSpec::with_identity(
            1,
            Potential::parse("x1*sin(t)", 1).unwrap(),
            Discount::Linear(0.0),
            k,
        )
        .unwrap();
        let r = audit_assumptions(&m, &bx(1.0), 500);
        assert!(r.condition("L4").unwrap().pass);
        assert!(r.all_pass, "{r:?}");
    }
}
