//! Geometry of the cylinder `Q = C / 2πiZ`.
//!
//! Points of `Q` are stored by their real part and an imaginary part reduced
//! into `[0, 2π)`. The module also carries the two conjugations used to move
//! measures between the cylinder, the punctured plane `C*` (via `exp`) and
//! the plane (via the similarity `H_η(z) = z/η`).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// Largest real part for which `exp` is evaluated. Beyond it callers get a
/// range error (or mark an orbit as escaped) instead of an infinity.
pub const OVERFLOW_RE: f64 = 700.0;

/// Reduce an angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle(y: f64) -> f64 {
    let mut r = y.rem_euclid(TWO_PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r >= TWO_PI {
        r -= TWO_PI;
    }
    r
}

/// A point of the cylinder `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylPoint {
    re: f64,
    im: f64,
}

impl CylPoint {
    /// Build a point from any lift `re + i·im`; `im` is reduced mod 2π.
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::Domain(format!(
                "non-finite cylinder coordinates ({re}, {im})"
            )));
        }
        Ok(Self::from_lift(re, im))
    }

    /// Infallible constructor for lifts already known to be finite.
    #[inline]
    pub(crate) fn from_lift(re: f64, im: f64) -> Self {
        debug_assert!(re.is_finite() && im.is_finite());
        Self {
            re,
            im: wrap_angle(im),
        }
    }

    #[inline]
    pub fn re(&self) -> f64 {
        self.re
    }

    /// Imaginary part of the canonical lift, in `[0, 2π)`.
    #[inline]
    pub fn im(&self) -> f64 {
        self.im
    }

    /// Imaginary part of the lift closest to the real axis, in `[-π, π)`.
    #[inline]
    pub fn centered_im(&self) -> f64 {
        if self.im >= PI {
            self.im - TWO_PI
        } else {
            self.im
        }
    }

    /// Minimal modulus over all lifts.
    #[inline]
    pub fn modulus(&self) -> f64 {
        min_modulus(*self)
    }
}

/// A point of `C` (or of `C*` where the context requires it).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub x: f64,
    pub y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn abs(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    /// `|Re z| <= M`
    QM,
    /// `|Re z| > M`
    YM,
    /// `Re z > M`
    YMPlus,
    /// `Re z < -M`
    YMMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    m: f64,
    kind: RegionKind,
}

impl RegionSpec {
    pub fn new(m: f64, kind: RegionKind) -> Result<Self> {
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Domain(format!("region level M must be > 0, got {m}")));
        }
        Ok(Self { m, kind })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn kind(&self) -> RegionKind {
        self.kind
    }

    pub fn contains(&self, z: CylPoint) -> bool {
        classify(z, *self)
    }
}

/// Canonical projection `C -> Q`.
pub fn project(p: PlanePoint) -> Result<CylPoint> {
    CylPoint::new(p.x, p.y)
}

/// `|z| = inf{|Z| : Z a lift of z}`. Only the lifts with imaginary parts
/// `im` and `im - 2π` can realise the infimum.
pub fn min_modulus(z: CylPoint) -> f64 {
    let y = z.im.min(TWO_PI - z.im);
    z.re.hypot(y)
}

/// Distance on the cylinder (flat metric).
pub fn cyl_distance(a: CylPoint, b: CylPoint) -> f64 {
    let dy = (a.im - b.im).abs();
    let dy = dy.min(TWO_PI - dy);
    (a.re - b.re).hypot(dy)
}

pub fn classify(z: CylPoint, spec: RegionSpec) -> bool {
    let m = spec.m;
    match spec.kind {
        RegionKind::QM => z.re.abs() <= m,
        RegionKind::YM => z.re.abs() > m,
        RegionKind::YMPlus => z.re > m,
        RegionKind::YMMinus => z.re < -m,
    }
}

/// The conformal homeomorphism `exp: Q -> C*`.
pub fn exp_to_cstar(z: CylPoint) -> Result<PlanePoint> {
    if z.re > OVERFLOW_RE {
        return Err(Error::Range(format!(
            "exp overflow: Re z = {} exceeds {OVERFLOW_RE}",
            z.re
        )));
    }
    let r = z.re.exp();
    let (s, c) = z.im.sin_cos();
    Ok(PlanePoint::new(r * c, r * s))
}

/// Inverse of [`exp_to_cstar`].
pub fn log_to_cyl(p: PlanePoint) -> Result<CylPoint> {
    if !p.is_finite() {
        return Err(Error::Domain(format!("non-finite point ({}, {})", p.x, p.y)));
    }
    let r = p.abs();
    if r == 0.0 {
        return Err(Error::Domain("log of 0 is undefined on C*".into()));
    }
    Ok(CylPoint::from_lift(r.ln(), p.y.atan2(p.x)))
}

/// Modulus of the derivative of a map `g` at `at`, measured in the
/// conformal metric `|dz|/|z|` on `C*`: `|g'(at)| · |at| / |g(at)|`.
pub fn rho_derivative_modulus(
    g_value: PlanePoint,
    g_deriv_modulus: f64,
    at: PlanePoint,
) -> Result<f64> {
    let gv = g_value.abs();
    let a = at.abs();
    if gv == 0.0 || a == 0.0 || !gv.is_finite() || !a.is_finite() {
        return Err(Error::Domain(
            "rho-metric derivative needs finite non-zero point and value".into(),
        ));
    }
    Ok(g_deriv_modulus * a / gv)
}

/// Atomic measure on `C` or `C*`, obtained by transporting a cylinder measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneMeasure {
    pub atoms: Vec<(PlanePoint, f64)>,
}

impl PlaneMeasure {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }
}

/// Push a fiber measure forward through `exp: Q -> C*`.
pub fn pushforward_exp(nu: &crate::measure::FiberMeasure) -> Result<PlaneMeasure> {
    let atoms = nu
        .atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            exp_to_cstar(a.point)
                .map(|p| (p, a.weight))
                .map_err(|e| Error::Range(format!("atom {i} at {:?}: {e}", a.point)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PlaneMeasure { atoms })
}

/// Push a plane measure forward through `z -> ηz`, the inverse of `H_η`.
pub fn pushforward_scale(nu: &PlaneMeasure, eta: f64) -> PlaneMeasure {
    PlaneMeasure {
        atoms: nu
            .atoms
            .iter()
            .map(|(p, w)| (PlanePoint::new(eta * p.x, eta * p.y), *w))
            .collect(),
    }
}
