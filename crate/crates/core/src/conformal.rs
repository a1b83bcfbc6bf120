//! Random conformal measures as particle systems.
//!
//! `Φ(ν)_ω = L*_{t,ω} ν_{θω} / L*_{t,ω} ν_{θω}(1)` pulls a measure on fiber
//! `θω` back to fiber `ω`. Iterating from the far end of a sampled orbit
//! approximates the conformal family near fiber 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::driver::ParamSequence;
use crate::dynamics::{orbit, step, MapParam};
use crate::error::{Error, Result};
use crate::geom::{
    cyl_distance, log_to_cyl, min_modulus, rho_derivative_modulus, CylPoint, PlaneMeasure,
    PlanePoint, OVERFLOW_RE, TWO_PI,
};
use crate::measure::{spatial_sort, systematic_resample, Atom, FiberMeasure};
use crate::transfer::{adjoint_push, ConstantsTable, Convention, TransferParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiOptions {
    pub atom_cap: usize,
    /// Keys the resampling offsets; the offset at fiber `j` depends only on
    /// `(seed, j)` so runs at different `t` share them.
    pub seed: u64,
}

impl Default for PhiOptions {
    fn default() -> Self {
        Self {
            atom_cap: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhiStepResult {
    pub measure: FiberMeasure,
    pub lambda: f64,
    /// Dropped mass relative to `lambda`.
    pub error_budget: f64,
}

fn resample_offset(seed: u64, fiber: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fiber as u64);
    rng.gen()
}

/// One application of `Φ` with parameter `p = η(ω)`.
pub fn phi_step(
    tp: &TransferParams,
    p: &MapParam,
    nu_next: &FiberMeasure,
    opts: &PhiOptions,
) -> Result<PhiStepResult> {
    let push = adjoint_push(tp, p, nu_next)?;
    let fiber = nu_next.fiber_index().saturating_sub(1);
    let mut atoms = push.atoms;
    if atoms.len() > opts.atom_cap {
        spatial_sort(&mut atoms);
        atoms = systematic_resample(&atoms, opts.atom_cap, resample_offset(opts.seed, fiber));
    }
    let sum: f64 = atoms.iter().map(|a| a.weight).sum();
    for a in &mut atoms {
        a.weight /= sum;
    }
    Ok(PhiStepResult {
        measure: FiberMeasure::from_atom_vec(atoms, fiber)?,
        lambda: push.mass,
        error_budget: push.error_budget / push.mass,
    })
}

#[derive(Debug, Clone)]
pub struct PhiRun {
    /// The measure on fiber 0.
    pub measure: FiberMeasure,
    /// In the order computed: `lambdas[i]` belongs to fiber `n - 1 - i`.
    pub lambdas: Vec<f64>,
    /// `history[j]` is the measure on fiber `j`, for the first few fibers.
    pub history: Vec<FiberMeasure>,
    pub max_error_budget: f64,
}

impl PhiRun {
    /// `λ_{t, θ^j ω}`.
    pub fn lambda_at(&self, fiber: usize) -> Option<f64> {
        let n = self.lambdas.len();
        (fiber < n).then(|| self.lambdas[n - 1 - fiber])
    }
}

/// Apply `Φ` with `seq[n-1], …, seq[0]`, starting from `nu0` placed on fiber `n`.
/// Keeps the measures on fibers `0..keep`.
pub fn phi_iterate(
    tp: &TransferParams,
    seq: &ParamSequence,
    nu0: &FiberMeasure,
    n: usize,
    opts: &PhiOptions,
    keep: usize,
) -> Result<PhiRun> {
    if seq.len() < n {
        return Err(Error::Bounds {
            index: n,
            len: seq.len(),
        });
    }
    let mut nu = nu0.clone().with_fiber_index(n);
    nu.canonicalize();
    let mut lambdas = Vec::with_capacity(n);
    let mut history = Vec::new();
    if n < keep {
        history.push(nu.clone());
    }
    let mut max_budget = 0.0f64;
    for j in (0..n).rev() {
        let p = seq.param(j)?;
        let r = phi_step(tp, &p, &nu, opts).map_err(|e| match e {
            Error::Accuracy {
                budget,
                allowed,
                context,
            } => Error::Accuracy {
                budget,
                allowed,
                context: format!("{context} at fiber {j} after {} steps", n - 1 - j),
            },
            other => other,
        })?;
        lambdas.push(r.lambda);
        max_budget = max_budget.max(r.error_budget);
        nu = r.measure;
        if j < keep {
            history.push(nu.clone());
        }
    }
    history.reverse();
    Ok(PhiRun {
        measure: nu,
        lambdas,
        history,
        max_error_budget: max_budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestBall {
    pub center: CylPoint,
    pub radius: f64,
}

impl TestBall {
    pub fn contains(&self, z: CylPoint) -> bool {
        cyl_distance(z, self.center) < self.radius
    }

    /// `F_η` is injective on the ball when it embeds in `Q` and its image
    /// has diameter below `2π`.
    pub fn check_injective(&self, eta: f64) -> Result<()> {
        if !(self.radius > 0.0 && self.radius < std::f64::consts::PI) {
            return Err(Error::NotInjective(format!(
                "ball radius {} must lie in (0, π)",
                self.radius
            )));
        }
        let diam = 2.0 * eta * self.center.re().exp() * self.radius.exp_m1();
        if !(diam < TWO_PI) {
            return Err(Error::NotInjective(format!(
                "image of ball at ({}, {}) radius {} has diameter {diam} >= 2π",
                self.center.re(),
                self.center.im(),
                self.radius
            )));
        }
        Ok(())
    }

    /// Whether some preimage of `y` under `F_η` lies in the ball.
    fn image_contains(&self, eta: f64, y: CylPoint) -> bool {
        let v_im = eta * self.center.re().exp() * self.center.im().sin();
        let k = ((v_im - y.im()) / TWO_PI).round();
        let log_eta = eta.ln();
        (-1..=1).any(|dk| {
            let u = y.im() + TWO_PI * (k + dk as f64);
            let r = y.re().hypot(u);
            r > 0.0 && self.contains(CylPoint::from_lift(r.ln() - log_eta, u.atan2(y.re())))
        })
    }
}

/// Twenty balls of radius 0.45 over the bulk of the mass near the real
/// axis, keeping those on which `F_η` is injective.
pub fn standard_test_balls(eta: f64) -> Vec<TestBall> {
    let mut centers = Vec::with_capacity(20);
    for x in [0.0, 0.5, 1.0, 1.5] {
        for y in [-1.4, -0.7, 0.7, 1.4] {
            centers.push((x, y));
        }
    }
    for x in [0.25, 0.75] {
        for y in [-2.1, 2.1] {
            centers.push((x, y));
        }
    }
    centers
        .into_iter()
        .map(|(x, y)| TestBall {
            center: CylPoint::from_lift(x, y),
            radius: 0.45,
        })
        .filter(|b| b.check_injective(eta).is_ok())
        .collect()
}

/// `(ν_{θω}(F_ω A), λ ∫_A |F_ω'|^t dν_ω)` for each ball `A`.
pub fn conformality_terms(
    tp: &TransferParams,
    p: &MapParam,
    nu: &FiberMeasure,
    nu_next: &FiberMeasure,
    lambda: f64,
    balls: &[TestBall],
) -> Result<Vec<(f64, f64)>> {
    let eta = p.eta();
    balls
        .iter()
        .map(|b| {
            b.check_injective(eta)?;
            let lhs = nu_next.mass_where(|y| b.image_contains(eta, y));
            let rhs: f64 = nu
                .atoms()
                .iter()
                .filter(|a| b.contains(a.point))
                .map(|a| {
                    let d = tp.convention.derivative(eta, eta * a.point.re().exp());
                    a.weight * d.powf(tp.t)
                })
                .sum();
            Ok((lhs, lambda * rhs))
        })
        .collect()
}

fn max_relative(terms: &[(f64, f64)], floor: f64) -> f64 {
    terms
        .iter()
        .map(|&(l, r)| {
            if l == 0.0 && r == 0.0 {
                0.0
            } else {
                (l - r).abs() / l.max(floor)
            }
        })
        .fold(0.0, f64::max)
}

/// `max_A |ν_{θω}(F_ω A) - λ ∫_A |F_ω'|^t dν_ω| / max(ν_{θω}(F_ω A), floor)`.
pub fn conformality_residual(
    tp: &TransferParams,
    p: &MapParam,
    nu: &FiberMeasure,
    nu_next: &FiberMeasure,
    lambda: f64,
    balls: &[TestBall],
    floor: f64,
) -> Result<f64> {
    let terms = conformality_terms(tp, p, nu, nu_next, lambda, balls)?;
    Ok(max_relative(&terms, floor))
}

/// Plane coordinates `P = s · exp(z)` on a fiber. The fiber map becomes
/// `f(P) = s' exp(η P / s)`, with `s = s' = 1` giving `F̃_η(w) = e^{ηw}` on `C*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub eta: f64,
    pub s_here: f64,
    pub s_next: f64,
}

impl PlaneFrame {
    pub fn cstar(eta: f64) -> Self {
        Self {
            eta,
            s_here: 1.0,
            s_next: 1.0,
        }
    }

    fn map(&self, p: PlanePoint) -> PlanePoint {
        let k = self.eta / self.s_here;
        let (re, im) = (k * p.x, k * p.y);
        let m = self.s_next * re.exp();
        let (s, c) = im.sin_cos();
        PlanePoint::new(m * c, m * s)
    }

    fn in_set(&self, ball: &TestBall, p: PlanePoint) -> bool {
        let q = PlanePoint::new(p.x / self.s_here, p.y / self.s_here);
        log_to_cyl(q).map(|z| ball.contains(z)).unwrap_or(false)
    }

    /// Whether some `f`-preimage of `p` lies in `s · exp(ball)`.
    fn image_contains(&self, ball: &TestBall, p: PlanePoint) -> bool {
        let q = PlanePoint::new(p.x / self.s_next, p.y / self.s_next);
        let (lr, arg) = (q.abs().ln(), q.y.atan2(q.x));
        if !lr.is_finite() {
            return false;
        }
        let w_c = ball.center.re().exp() * ball.center.im().sin();
        let k = ((self.eta * w_c - arg) / TWO_PI).round();
        (-1..=1).any(|dk| {
            let im = arg + TWO_PI * (k + dk as f64);
            let w = PlanePoint::new(lr / self.eta, im / self.eta);
            log_to_cyl(w).map(|z| ball.contains(z)).unwrap_or(false)
        })
    }
}

/// The residual of [`conformality_residual`] recomputed on plane measures,
/// with `|f'|` measured in the metric `|dz|/|z|`.
#[allow(clippy::too_many_arguments)]
pub fn conformality_residual_plane(
    t: f64,
    convention: Convention,
    frame: &PlaneFrame,
    nu: &PlaneMeasure,
    nu_next: &PlaneMeasure,
    lambda: f64,
    balls: &[TestBall],
    floor: f64,
) -> Result<f64> {
    let mut terms = Vec::with_capacity(balls.len());
    for b in balls {
        b.check_injective(frame.eta)?;
        let lhs: f64 = nu_next
            .atoms
            .iter()
            .filter(|(p, _)| frame.image_contains(b, *p))
            .map(|a| a.1)
            .sum();
        let mut rhs = 0.0;
        for (p, w) in &nu.atoms {
            if frame.in_set(b, *p) {
                let v = frame.map(*p);
                let d = rho_derivative_modulus(v, frame.eta / frame.s_here * v.abs(), *p)?;
                rhs += w * convention.derivative(frame.eta, d).powf(t);
            }
        }
        terms.push((lhs, lambda * rhs));
    }
    Ok(max_relative(&terms, floor))
}

/// Singular points `F^i_{θ^{j-i}ω}(0)`, `i = 0..=j`, that lie in `Q_{M0}`;
/// these are the centers removed when seeding fiber `j`.
pub fn singular_centers(etas: &[f64], fiber: usize, m0: f64) -> Vec<CylPoint> {
    let mut out = Vec::new();
    let zero = CylPoint::from_lift(0.0, 0.0);
    for i in 0..=fiber.min(etas.len()) {
        let start = fiber - i;
        let mut z = zero;
        let mut ok = true;
        for &eta in &etas[start..fiber] {
            if z.re() > OVERFLOW_RE {
                ok = false;
                break;
            }
            z = step(eta, z);
        }
        if ok && z.re().abs() <= m0 {
            out.push(z);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WnEntry {
    pub n: usize,
    pub j: usize,
    pub measure: f64,
    pub log_a: f64,
    pub log_b: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PSpaceReport {
    pub cond_2_1: bool,
    pub min_mass_q_m0: f64,
    /// Worst `ν(Y_M^+) / (c(M0) e^{(M/2)(1-t)})` over the family and grid.
    pub cond_3_1: f64,
    pub cond_3_1_by_m: Vec<(f64, f64)>,
    /// Worst ratio per `n = 1..=n_max`; `None` when every check escaped.
    pub w_n: Vec<Option<f64>>,
    pub w_entries: Vec<WnEntry>,
    /// `(inner, outer)` Koebe radii at `j = 0`.
    pub radii: Vec<(f64, f64)>,
    pub sandwich_side: &'static str,
    pub constants: ConstantsTable,
}

/// Numerical audit of the membership conditions for the measure class.
/// `family[j]` is the measure on fiber `j`, `etas[j] = η(θ^j ω)`.
pub fn p_space_check(
    tp: &TransferParams,
    constants: &ConstantsTable,
    family: &[FiberMeasure],
    etas: &[f64],
    n_max: usize,
    m_grid: &[f64],
) -> Result<PSpaceReport> {
    let t = tp.t;
    let k = constants.koebe;
    let r0 = constants.r0;
    let m0 = constants.m0;
    let min_mass = family
        .iter()
        .map(|nu| nu.mass_where(|z| z.re().abs() <= m0))
        .fold(f64::INFINITY, f64::min);
    let mut cond_3_1_by_m = Vec::with_capacity(m_grid.len());
    for &m in m_grid {
        let allowed = constants.c_lower_m0 * (0.5 * m * (1.0 - t)).exp();
        let worst = family
            .iter()
            .map(|nu| nu.mass_where(|z| z.re() > m) / allowed)
            .fold(0.0, f64::max);
        cond_3_1_by_m.push((m, worst));
    }
    let len = etas.len().min(family.len() + n_max + 1);
    let orb = orbit(&etas[..len], CylPoint::from_lift(0.0, 0.0), len)?;
    let alive = |i: usize| i < orb.points.len() && orb.escaped_at.is_none_or(|e| i < e);
    let log_kc = (k * constants.c_upper_m0).ln();
    let log_b0 = (k * r0 / TWO_PI).ln() + constants.c_lower_m0.ln() + constants.c_upper_m0.ln();
    let mut w_n = Vec::with_capacity(n_max);
    let mut entries = Vec::new();
    let mut radii = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let mut worst: Option<f64> = None;
        for (j, nu) in family.iter().enumerate() {
            if !alive(n + j + 1) {
                continue;
            }
            let log_deriv = orb.log_deriv[j + n] - orb.log_deriv[j];
            let outer = r0 * k * (-log_deriv).exp();
            if j == 0 {
                radii.push((r0 / k * (-log_deriv).exp(), outer));
            }
            let center = orb.points[j];
            let measure = nu.mass_where(|z| cyl_distance(z, center) < outer);
            let mut log_a = n as f64 * log_kc;
            for i in 1..=n {
                log_a -= t * min_modulus(orb.points[j + i]).ln();
            }
            let f = min_modulus(orb.points[n + j + 1]);
            let log_b = log_b0 + (1.0 - t) * f.ln() - (t - 1.0) * f / 4.0;
            let ratio = if measure == 0.0 {
                0.0
            } else {
                (measure.ln() - log_a - log_b).exp()
            };
            worst = Some(worst.map_or(ratio, |w: f64| w.max(ratio)));
            entries.push(WnEntry {
                n,
                j,
                measure,
                log_a,
                log_b,
                ratio,
            });
        }
        w_n.push(worst);
    }
    Ok(PSpaceReport {
        cond_2_1: min_mass >= 0.5,
        min_mass_q_m0: min_mass,
        cond_3_1: cond_3_1_by_m.iter().map(|c| c.1).fold(0.0, f64::max),
        cond_3_1_by_m,
        w_n,
        w_entries: entries,
        radii,
        sandwich_side: "outer",
        constants: *constants,
    })
}

/// Push atoms forward along `etas`; escaped atoms stay where they escaped.
pub fn push_forward(atoms: &[Atom], etas: &[f64]) -> Vec<Atom> {
    atoms
        .iter()
        .map(|a| {
            let mut z = a.point;
            for &eta in etas {
                if z.re() > OVERFLOW_RE {
                    break;
                }
                z = step(eta, z);
            }
            Atom::new(z, a.weight)
        })
        .collect()
}

/// Dyadic partition of `Q_{M1}` into `2^level × 2^level` cells plus one
/// cell for the complement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub m1: f64,
    pub level: u32,
}

impl Partition {
    fn cells(&self) -> usize {
        (1usize << (2 * self.level)) + 1
    }

    fn cell(&self, z: CylPoint) -> usize {
        let side = 1usize << self.level;
        if !(z.re().abs() <= self.m1) {
            return side * side;
        }
        let i = (((z.re() + self.m1) / (2.0 * self.m1)) * side as f64) as usize;
        let j = ((z.im() / TWO_PI) * side as f64) as usize;
        i.min(side - 1) * side + j.min(side - 1)
    }

    fn histogram(&self, atoms: &[Atom]) -> Vec<f64> {
        let mut h = vec![0.0; self.cells()];
        for a in atoms {
            h[self.cell(a.point)] += a.weight;
        }
        h
    }
}

#[derive(Debug, Clone)]
pub struct InvariantEstimate {
    /// `μ` on fiber `n - 1`.
    pub cesaro: FiberMeasure,
    /// Total variation of `F_* μ_{n-1} - μ_n` on the partition.
    pub invariance_residual: f64,
    /// Mass of `μ_{n-1}` outside `Q_{M1}`.
    pub leak: f64,
}

fn cesaro_at(family: &[FiberMeasure], etas: &[f64], i: usize, n: usize) -> Vec<Atom> {
    let mut out = Vec::new();
    for k in 0..n {
        let src = &family[i - k];
        for a in push_forward(src.atoms(), &etas[i - k..i]) {
            out.push(Atom::new(a.point, a.weight / n as f64));
        }
    }
    out
}

/// `μ_i = (1/n) Σ_{k<n} F^k_* ν_{i-k}` at `i = n - 1`, where `family[j]` is
/// the measure on fiber `j`. Needs `n + 1` fibers.
pub fn cesaro_invariant(
    family: &[FiberMeasure],
    etas: &[f64],
    n: usize,
    partition: Partition,
) -> Result<InvariantEstimate> {
    if n == 0 || family.len() < n + 1 || etas.len() < n {
        return Err(Error::Bounds {
            index: n + 1,
            len: family.len().min(etas.len() + 1),
        });
    }
    let i = n - 1;
    let mu = cesaro_at(family, etas, i, n);
    let mu_next = cesaro_at(family, etas, i + 1, n);
    let pushed = push_forward(&mu, &etas[i..i + 1]);
    let h1 = partition.histogram(&pushed);
    let h2 = partition.histogram(&mu_next);
    let residual = h1.iter().zip(&h2).map(|(a, b)| (a - b).abs()).sum();
    let leak = mu
        .iter()
        .filter(|a| !(a.point.re().abs() <= partition.m1))
        .map(|a| a.weight)
        .sum();
    Ok(InvariantEstimate {
        cesaro: FiberMeasure::from_atom_vec(mu, i)?,
        invariance_residual: residual,
        leak,
    })
}
