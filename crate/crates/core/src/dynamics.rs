//! The maps `f_η(z) = η e^z`, their quotients `F_η` on `Q`, orbits,
//! derivatives and preimages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{exp_to_cstar, CylPoint, PlanePoint, OVERFLOW_RE, TWO_PI};

pub const INV_E: f64 = 0.367_879_441_171_442_3;

/// A parameter `η` together with the interval `[A, B]` it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapParam {
    eta: f64,
    a: f64,
    b: f64,
}

impl MapParam {
    pub fn new(eta: f64, a: f64, b: f64) -> Result<Self> {
        if !(a > INV_E) || !(a <= b) || !b.is_finite() {
            return Err(Error::Config(format!(
                "parameter interval must satisfy 1/e < A <= B, got [{a}, {b}]"
            )));
        }
        if !(a <= eta && eta <= b) {
            return Err(Error::Domain(format!("eta {eta} outside [{a}, {b}]")));
        }
        Ok(Self { eta, a, b })
    }

    /// `η` with the degenerate interval `[η, η]`.
    pub fn fixed(eta: f64) -> Result<Self> {
        Self::new(eta, eta, eta)
    }

    #[inline]
    pub fn eta(&self) -> f64 {
        self.eta
    }

    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn b(&self) -> f64 {
        self.b
    }
}

/// `F_η(z)`. Errors with a range error once `Re z` passes the overflow threshold.
pub fn apply_map(p: &MapParam, z: CylPoint) -> Result<CylPoint> {
    if z.re() > OVERFLOW_RE {
        return Err(Error::Range(format!(
            "Re z = {} exceeds the overflow threshold {OVERFLOW_RE}",
            z.re()
        )));
    }
    Ok(step(p.eta, z))
}

#[inline]
pub(crate) fn step(eta: f64, z: CylPoint) -> CylPoint {
    let r = eta * z.re().exp();
    let (s, c) = z.im().sin_cos();
    CylPoint::from_lift(r * c, r * s)
}

/// `log|f_η'(z)| = log η + Re z`, which is also `log|f_η(z)|`.
#[inline]
pub fn log_derivative(eta: f64, z: CylPoint) -> f64 {
    eta.ln() + z.re()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitRecord {
    pub points: Vec<CylPoint>,
    /// `log_deriv[n] = log|(F^n)'(z_0)|`, with `log_deriv[0] = 0`.
    pub log_deriv: Vec<f64>,
    /// Index of the first point beyond the overflow threshold.
    pub escaped_at: Option<usize>,
}

impl OrbitRecord {
    /// Number of steps actually taken.
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.points.len() <= 1
    }
}

/// `z_{k+1} = F_{η_k}(z_k)` for `k < n`, stopping at the first escaped point.
pub fn orbit(etas: &[f64], z0: CylPoint, n: usize) -> Result<OrbitRecord> {
    if etas.len() < n {
        return Err(Error::Bounds {
            index: n,
            len: etas.len(),
        });
    }
    let mut points = Vec::with_capacity(n + 1);
    let mut log_deriv = Vec::with_capacity(n + 1);
    points.push(z0);
    log_deriv.push(0.0);
    if z0.re() > OVERFLOW_RE {
        return Ok(OrbitRecord {
            points,
            log_deriv,
            escaped_at: Some(0),
        });
    }
    let mut z = z0;
    let mut acc = 0.0;
    for (k, &eta) in etas[..n].iter().enumerate() {
        acc += log_derivative(eta, z);
        z = step(eta, z);
        points.push(z);
        log_deriv.push(acc);
        if z.re() > OVERFLOW_RE {
            return Ok(OrbitRecord {
                points,
                log_deriv,
                escaped_at: Some(k + 1),
            });
        }
    }
    Ok(OrbitRecord {
        points,
        log_deriv,
        escaped_at: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Preimage {
    pub k: i64,
    pub point: CylPoint,
    /// `|F_η'(w_k)| = |z + 2πik|`
    pub deriv: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Preimages {
    pub list: Vec<Preimage>,
    /// Values of `k` with `z + 2πik = 0`.
    pub skipped: Vec<i64>,
}

/// `w_k = Log((z + 2πik)/η)` for `k_lo <= k <= k_hi`, using the lift of `z`
/// with imaginary part in `[0, 2π)`.
pub fn preimages(p: &MapParam, z: CylPoint, k_lo: i64, k_hi: i64) -> Preimages {
    let mut out = Preimages::default();
    let log_eta = p.eta.ln();
    for k in k_lo..=k_hi {
        let u = z.im() + TWO_PI * k as f64;
        let r = z.re().hypot(u);
        if r == 0.0 {
            out.skipped.push(k);
            continue;
        }
        out.list.push(Preimage {
            k,
            point: CylPoint::from_lift(r.ln() - log_eta, u.atan2(z.re())),
            deriv: r,
        });
    }
    out
}

/// `|(f^n)'(z_0)| >= |Im f^n(z_0)|` evaluated in log space with `1e-12`
/// relative slack. Needs `n >= 1` and a non-escaping orbit.
pub fn im_expansion_check(etas: &[f64], z0: CylPoint, n: usize) -> Result<bool> {
    if n == 0 {
        return Err(Error::Domain("expansion check needs n >= 1".into()));
    }
    let rec = orbit(etas, z0, n)?;
    if let Some(k) = rec.escaped_at {
        return Err(Error::Domain(format!("orbit escaped at step {k} before n = {n}")));
    }
    // Im f^n(z_0) computed from the previous point, which fixes the plane lift
    let prev = rec.points[n - 1];
    let log_im = log_derivative(etas[n - 1], prev) + prev.im().sin().abs().ln();
    let lhs = rec.log_deriv[n];
    Ok(log_im <= lhs + 1e-12 * (1.0 + lhs.abs()))
}

/// Uniform drift `min_x (A(1-δ)e^x - x) = 1 + ln(A(1-δ))` of `Re f_η(z) - Re z`
/// on `{cos Im z > 1-δ}`.
pub fn drift_lower_bound(p: &MapParam, delta: f64) -> Result<f64> {
    let q = p.a * (1.0 - delta);
    // accept the boundary q = 1/e up to rounding, where the drift is 0
    if !(delta < 1.0) || !(q * std::f64::consts::E >= 1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "drift bound needs A(1-δ) >= 1/e, got A = {}, δ = {delta}",
            p.a
        )));
    }
    Ok((1.0 + q.ln()).max(0.0))
}

/// `|exp(F_η(z)) - F̃_η(exp z)| / |F̃_η(exp z)|` with `F̃_η(w) = e^{ηw}` on `C*`.
pub fn semiconjugacy_residual(p: &MapParam, z: CylPoint) -> Result<f64> {
    let lhs = exp_to_cstar(apply_map(p, z)?)?;
    let w = exp_to_cstar(z)?;
    let (re, im) = (p.eta * w.x, p.eta * w.y);
    if re > OVERFLOW_RE {
        return Err(Error::Range(format!("e^(ηw) overflows at Re = {re}")));
    }
    let m = re.exp();
    let (s, c) = im.sin_cos();
    let rhs = PlanePoint::new(m * c, m * s);
    Ok((lhs.x - rhs.x).hypot(lhs.y - rhs.y) / rhs.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{cyl_distance, project};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{E, PI};

    fn cp(x: f64, y: f64) -> CylPoint {
        CylPoint::new(x, y).unwrap()
    }

    #[test]
    fn param_validation() {
        assert!(MapParam::fixed(0.3).is_err());
        assert!(MapParam::new(1.5, 1.0, 1.2).is_err());
        assert!(MapParam::new(1.1, 1.0, 1.2).is_ok());
    }

    #[test]
    fn apply_examples() {
        let one = MapParam::fixed(1.0).unwrap();
        let a = apply_map(&one, cp(0.0, 0.0)).unwrap();
        assert_eq!((a.re(), a.im()), (1.0, 0.0));
        let b = apply_map(&one, cp(1.0, 0.0)).unwrap();
        assert_relative_eq!(b.re(), E);
        let c = apply_map(&MapParam::fixed(2.0).unwrap(), cp(0.0, PI)).unwrap();
        assert_relative_eq!(c.re(), -2.0);
        assert!(c.centered_im().abs() < 1e-15);
        assert!(matches!(apply_map(&one, cp(701.0, 0.0)), Err(Error::Range(_))));
    }

    #[test]
    fn orbit_examples() {
        let rec = orbit(&[1.0; 3], cp(0.0, 0.0), 3).unwrap();
        let re: Vec<f64> = rec.points.iter().map(|p| p.re()).collect();
        assert_eq!(re[0], 0.0);
        assert_eq!(re[1], 1.0);
        assert_relative_eq!(re[2], E);
        assert_relative_eq!(re[3], 15.154_262_241_479_262, max_relative = 1e-14);
        assert_relative_eq!(rec.log_deriv[3], 1.0 + E, max_relative = 1e-14);
        assert_relative_eq!(rec.log_deriv[3].exp(), 41.193, epsilon = 1e-3);

        let rec = orbit(&[1.0; 2], cp(0.0, PI), 2).unwrap();
        assert_relative_eq!(rec.points[1].re(), -1.0);
        assert_relative_eq!(rec.points[2].re(), (-1.0f64).exp());
        assert!(orbit(&[1.0], cp(0.0, 0.0), 2).is_err());
    }

    #[test]
    fn orbit_escapes() {
        let rec = orbit(&[1.0; 10], cp(0.0, 0.0), 10).unwrap();
        // 0, 1, e, 15.15, 3.8e6 > 700
        assert_eq!(rec.escaped_at, Some(4));
        assert_eq!(rec.len(), 4);
    }

    #[test]
    fn preimage_examples() {
        let one = MapParam::fixed(1.0).unwrap();
        let pre = preimages(&one, cp(1.0, 0.0), 0, 1);
        assert_eq!(pre.list[0].point, cp(0.0, 0.0));
        assert_eq!(pre.list[0].deriv, 1.0);
        let w1 = pre.list[1];
        assert_relative_eq!(w1.point.re(), 0.5 * (1.0 + 4.0 * PI * PI).ln(), max_relative = 1e-14);
        assert_relative_eq!(w1.point.re(), 1.85038, epsilon = 1e-5);
        assert_relative_eq!(w1.point.im(), TWO_PI.atan2(1.0), max_relative = 1e-14);
        assert_relative_eq!(w1.deriv, (1.0 + 4.0 * PI * PI).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(w1.deriv, 6.36227, epsilon = 1e-5);

        let pre = preimages(&MapParam::fixed(E).unwrap(), cp(E, 0.0), 0, 0);
        assert!(pre.list[0].point.re().abs() < 1e-15);
        assert_relative_eq!(pre.list[0].deriv, E);

        let pre = preimages(&one, cp(0.0, 0.0), -1, 1);
        assert_eq!(pre.skipped, vec![0]);
        assert_eq!(pre.list.len(), 2);
    }

    #[test]
    fn expansion_examples() {
        assert!(im_expansion_check(&[1.0], cp(0.0, 0.5), 1).unwrap());
        assert!(im_expansion_check(&[1.3; 2], cp(0.4, 0.0), 2).unwrap());
        assert!(im_expansion_check(&[1.0], cp(0.0, 0.5), 0).is_err());
    }

    #[test]
    fn drift_examples() {
        let one = MapParam::fixed(1.0).unwrap();
        assert_relative_eq!(drift_lower_bound(&one, 0.1).unwrap(), 1.0 + 0.9f64.ln());
        assert_relative_eq!(drift_lower_bound(&one, 0.1).unwrap(), 0.89464, epsilon = 1e-5);
        let e = MapParam::fixed(E).unwrap();
        assert_relative_eq!(drift_lower_bound(&e, 1e-12).unwrap(), 2.0, epsilon = 1e-9);
        assert_eq!(drift_lower_bound(&one, 1.0 - INV_E).unwrap(), 0.0);
        assert!(drift_lower_bound(&one, 0.7).is_err());
    }

    proptest! {
        #[test]
        fn quotient_consistency(x in -20.0f64..6.0, y in -50.0f64..50.0, eta in 0.4f64..3.0) {
            let p = MapParam::fixed(eta).unwrap();
            let z = project(PlanePoint::new(x, y)).unwrap();
            let got = apply_map(&p, z).unwrap();
            let r = eta * x.exp();
            let want = project(PlanePoint::new(r * y.cos(), r * y.sin())).unwrap();
            prop_assert!(cyl_distance(got, want) <= 1e-10 * (1.0 + r));
        }

        #[test]
        fn chain_rule(x in -3.0f64..1.0, y in 0.0f64..std::f64::consts::TAU, n in 1usize..200, seed in 0u64..1000) {
            let etas: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * (((seed + j as u64) * 2654435761) % 1000) as f64 / 1000.0).collect();
            let rec = orbit(&etas, cp(x, y), n).unwrap();
            let mut acc = 0.0;
            for (k, eta) in etas.iter().enumerate().take(rec.len()) {
                acc += (eta * rec.points[k].re().exp()).ln();
                prop_assert!((rec.log_deriv[k + 1] - acc).abs() <= 1e-9 * (1.0 + acc.abs()));
            }
        }

        #[test]
        fn preimages_map_back(x in -10.0f64..10.0, y in 0.0f64..std::f64::consts::TAU, eta in 0.4f64..3.0, k in -1000i64..1000) {
            let p = MapParam::fixed(eta).unwrap();
            let z = cp(x, y);
            for w in preimages(&p, z, k, k).list {
                let lift_re = eta * w.point.re().exp() * w.point.im().cos();
                let lift_im = eta * w.point.re().exp() * w.point.im().sin();
                let target_im = z.im() + TWO_PI * w.k as f64;
                let err = (lift_re - x).hypot(lift_im - target_im);
                prop_assert!(err < 1e-10 * w.deriv.max(1e-300) + 1e-14);
                prop_assert!((w.deriv - x.hypot(target_im)).abs() <= 1e-15 * w.deriv);
            }
        }

        #[test]
        fn drift_holds(x in -30.0f64..5.0, y in -0.6f64..0.6, a in 0.5f64..2.0, extra in 0.0f64..1.0, delta in 0.0f64..0.4) {
            let p = MapParam::new(a + extra, a, a + 1.0).unwrap();
            prop_assume!(a * (1.0 - delta) * std::f64::consts::E >= 1.0);
            prop_assume!(y.cos() > 1.0 - delta);
            let c = drift_lower_bound(&p, delta).unwrap();
            let fz = apply_map(&p, cp(x, y)).unwrap();
            prop_assert!(fz.re() - x >= c - 1e-12);
        }

        #[test]
        fn semiconjugacy(x in -5.0f64..4.0, y in 0.0f64..std::f64::consts::TAU, eta in 0.4f64..3.0) {
            let p = MapParam::fixed(eta).unwrap();
            prop_assert!(semiconjugacy_residual(&p, cp(x, y)).unwrap() < 1e-10);
        }

        #[test]
        fn real_axis_escape(x in 0.0f64..3.0, eta in 0.37f64..2.0) {
            prop_assume!(eta > INV_E);
            let rec = orbit(&vec![eta; 2000], cp(x, 0.0), 2000).unwrap();
            prop_assert!(rec.escaped_at.is_some());
            for w in rec.points.windows(2) {
                prop_assert!(w[1].re() > w[0].re());
                prop_assert_eq!(w[1].im(), 0.0);
            }
        }
    }
}
