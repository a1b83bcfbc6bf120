//! The transfer operator `L_{t,ω} g(z) = Σ_{w ∈ F_ω^{-1}(z)} g(w) |F_ω'(w)|^{-t}`
//! and its adjoint on atomic measures.
//!
//! The preimages of `z` are `w_k = Log((z + 2πik)/η)` and, in the default
//! convention, `|F'(w_k)| = |z + 2πik|`. Summation over `k` is split into
//! an explicit window and two analytic tails (see [`crate::lattice`]).
//!
//! For operators acting on functions and measures every `k ∈ Z` has to be
//! represented, so the preimages are grouped into blocks: single `k` near the
//! real axis, then runs of `k` whose images stay within a small angle and a
//! small relative change of modulus. A block carries its exact total weight
//! and sits at one representative preimage.

use serde::{Deserialize, Serialize};

use crate::dynamics::MapParam;
use crate::error::{Error, Result};
use crate::geom::{min_modulus, CylPoint, TWO_PI};
use crate::lattice::{lattice_sum, lattice_term, lower_tail, min_explicit_half_width, upper_tail};
use crate::measure::{Atom, FiberMeasure};
use crate::par;

/// How `|F'_ω(w)|` enters the operator weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    /// weight `|z + 2πik|^{-t}`
    #[default]
    ImageModulus,
    /// weight `|η / (z + 2πik)|^t`
    EtaFactor,
}

impl Convention {
    /// Derivative modulus used by conformality checks, given the image lift
    /// modulus `η e^{Re w}`.
    pub fn derivative(self, eta: f64, image_modulus: f64) -> f64 {
        match self {
            Convention::ImageModulus => image_modulus,
            Convention::EtaFactor => image_modulus / eta,
        }
    }

    fn scale(self, t: f64, eta: f64) -> f64 {
        match self {
            Convention::ImageModulus => 1.0,
            Convention::EtaFactor => eta.powf(t),
        }
    }
}

/// Grouping rule for preimage blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockRule {
    /// Maximal change of `arg(z + 2πik)` inside one block.
    pub angle_step: f64,
    /// Minimal width of a block measured in `log|z + 2πik|`.
    pub log_step_min: f64,
    /// Width in `log|z + 2πik|` relative to the log-modulus itself.
    pub log_step_frac: f64,
    /// Stop emitting blocks once the remaining tail is below this fraction
    /// of the total; the remainder becomes one last block.
    pub tail_cut: f64,
}

impl Default for BlockRule {
    fn default() -> Self {
        Self {
            angle_step: 0.1,
            log_step_min: 0.25,
            log_step_frac: 0.05,
            tail_cut: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferParams {
    pub t: f64,
    pub tail_tol: f64,
    pub k_max_cap: usize,
    pub convention: Convention,
    /// Atoms lighter than `prune · mass` are dropped by [`adjoint_push`].
    pub prune: f64,
    /// Allowed dropped mass per push, as a fraction of the pushed mass.
    pub max_budget: f64,
    pub blocks: BlockRule,
}

impl TransferParams {
    pub fn new(t: f64) -> Result<Self> {
        let tp = Self {
            t,
            tail_tol: 1e-10,
            k_max_cap: 1_000_000,
            convention: Convention::ImageModulus,
            prune: 1e-14,
            max_budget: 1e-6,
            blocks: BlockRule::default(),
        };
        tp.validate()?;
        Ok(tp)
    }

    pub fn with_t(&self, t: f64) -> Result<Self> {
        let tp = Self { t, ..*self };
        tp.validate()?;
        Ok(tp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 1.0) || !self.t.is_finite() {
            return Err(Error::Config(format!(
                "exponent t must be > 1 (the series diverges at t = 1), got {}",
                self.t
            )));
        }
        if !(self.tail_tol > 0.0) {
            return Err(Error::Config(format!(
                "tail_tol must be > 0, got {}",
                self.tail_tol
            )));
        }
        if self.k_max_cap < 16 {
            return Err(Error::Config("k_max_cap must be at least 16".into()));
        }
        if !(self.prune >= 0.0) || !(self.max_budget > 0.0) {
            return Err(Error::Config("prune must be >= 0 and max_budget > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferOne {
    pub value: f64,
    pub tail_bound: f64,
    pub k_used: usize,
    pub skipped_zero: bool,
}

/// `L_{t,ω} 1 (z)` with a certified bound on the tail evaluation error.
pub fn transfer_one(tp: &TransferParams, p: &MapParam, z: CylPoint) -> Result<TransferOne> {
    let (t, x, y) = (tp.t, z.re(), z.im());
    let mut k0 = min_explicit_half_width(x);
    if k0 > tp.k_max_cap {
        return Err(Error::Truncation {
            cap: tp.k_max_cap,
            achieved: f64::INFINITY,
            requested: tp.tail_tol,
        });
    }
    loop {
        let s = lattice_sum(t, x, y, k0);
        if s.tail_bound <= tp.tail_tol * s.value {
            let scale = tp.convention.scale(t, p.eta());
            return Ok(TransferOne {
                value: s.value * scale,
                tail_bound: s.tail_bound * scale,
                k_used: s.k_used,
                skipped_zero: s.skipped_zero,
            });
        }
        if k0 >= tp.k_max_cap {
            return Err(Error::Truncation {
                cap: tp.k_max_cap,
                achieved: s.tail_bound / s.value,
                requested: tp.tail_tol,
            });
        }
        k0 = (2 * k0).min(tp.k_max_cap);
    }
}

/// Preimage blocks of one point.
#[derive(Debug, Clone, Default)]
pub struct Quadrature {
    pub nodes: Vec<Atom>,
    /// Full series value `L 1 (z)` (up to the convention factor).
    pub total: f64,
    /// Weight carried by blocks with more than one preimage.
    pub lumped: f64,
    /// Weight that could not be placed (representative beyond overflow).
    pub dropped: f64,
    pub tail_bound: f64,
}

/// Upper side: indices `k >= 0`, `u = y + 2πk`, preimage `arg = atan2(u, x)`.
/// Lower side: indices `m >= 1`, `u = 2πm - y`, preimage `arg = atan2(-u, x)`.
#[derive(Clone, Copy)]
enum Side {
    Upper,
    Lower,
}

impl Side {
    #[inline]
    fn u(self, y: f64, j: f64) -> f64 {
        match self {
            Side::Upper => y + TWO_PI * j,
            Side::Lower => TWO_PI * j - y,
        }
    }

    #[inline]
    fn start(self) -> f64 {
        match self {
            Side::Upper => 0.0,
            Side::Lower => 1.0,
        }
    }

    #[inline]
    fn tail(self, t: f64, x: f64, y: f64, j: f64) -> (f64, f64) {
        match self {
            Side::Upper => upper_tail(t, x, y, j),
            Side::Lower => lower_tail(t, x, y, j),
        }
    }

    #[inline]
    fn sign(self) -> f64 {
        match self {
            Side::Upper => 1.0,
            Side::Lower => -1.0,
        }
    }
}

/// Tail blocks stop here and the remainder is lumped.
const MAX_BLOCK_INDEX: f64 = 1e290;

/// `sqrt(r² - x²)` without overflow.
#[inline]
fn off_axis(r: f64, x: f64) -> f64 {
    ((r - x.abs()).max(0.0) * (r + x.abs())).sqrt()
}

struct SideWalk<'a> {
    t: f64,
    x: f64,
    y: f64,
    log_eta: f64,
    k0: f64,
    total: f64,
    rule: &'a BlockRule,
}

impl SideWalk<'_> {
    /// First index past the block starting at `j`.
    fn block_end(&self, side: Side, j: f64) -> f64 {
        let x_abs = self.x.abs();
        let u_a = side.u(self.y, j);
        let r_a = self.x.hypot(u_a);
        let mut u_max = f64::INFINITY;
        if x_abs > 0.0 {
            let phi = u_a.atan2(x_abs) + self.rule.angle_step;
            if phi < std::f64::consts::FRAC_PI_2 {
                u_max = x_abs * phi.tan();
            }
        }
        let log_r = r_a.ln().max(0.0);
        let step = self.rule.log_step_min.max(self.rule.log_step_frac * log_r);
        let r_max = r_a * step.exp();
        let u_mod = off_axis(r_max, self.x);
        u_max = u_max.min(u_mod);
        let extra = ((u_max - u_a) / TWO_PI).floor().max(0.0);
        j + 1.0 + extra
    }

    #[inline]
    fn preimage(&self, side: Side, u: f64) -> CylPoint {
        let r = self.x.hypot(u);
        CylPoint::from_lift(r.ln() - self.log_eta, (side.sign() * u).atan2(self.x))
    }

    /// Representative index of a tail block `[j, e)` chosen so that
    /// `r^{1-t}` has the same block average as under the weights `r^{-t}`.
    fn tail_representative(&self, side: Side, j: f64, e: f64) -> f64 {
        let t = self.t;
        let u_lo = (side.u(self.y, j) - 0.5 * TWO_PI).max(1e-300);
        let r_lo = self.x.hypot(u_lo);
        let r_rep = if e.is_infinite() {
            r_lo * 2f64.powf(1.0 / (t - 1.0))
        } else {
            let r_hi = self.x.hypot(side.u(self.y, e) - 0.5 * TWO_PI);
            let num = (r_lo.powf(2.0 - 2.0 * t) - r_hi.powf(2.0 - 2.0 * t)) / (2.0 * t - 2.0);
            let den = (r_lo.powf(1.0 - t) - r_hi.powf(1.0 - t)) / (t - 1.0);
            (num / den).powf(1.0 / (1.0 - t))
        };
        let u_rep = off_axis(r_rep, self.x);
        let idx = j + ((u_rep - side.u(self.y, j)) / TWO_PI).round();
        let last = if e.is_infinite() { f64::INFINITY } else { e - 1.0 };
        idx.clamp(j, last)
    }

    fn walk(&self, side: Side, out: &mut Vec<Atom>, q: &mut Quadrature) {
        let (t, x, y) = (self.t, self.x, self.y);
        let mut j = side.start();
        // explicit window
        while j < self.k0 {
            let e = self.block_end(side, j).min(self.k0);
            let mut w = 0.0;
            let mut moment = 0.0;
            let mut i = j;
            while i < e {
                let u = side.u(y, i);
                if !(x == 0.0 && u == 0.0) {
                    let term = lattice_term(t, x, u);
                    w += term;
                    moment += term * (i - j);
                }
                i += 1.0;
            }
            if w > 0.0 {
                let idx = j + (moment / w).round();
                out.push(Atom::new(self.preimage(side, side.u(y, idx)), w));
                if e - j > 1.0 {
                    q.lumped += w;
                }
            }
            j = e;
        }
        // analytic tail, telescoped block by block
        let (mut rest, bound) = side.tail(t, x, y, j);
        q.tail_bound += bound;
        loop {
            let e = self.block_end(side, j);
            if rest <= self.rule.tail_cut * self.total || !(e < MAX_BLOCK_INDEX) || rest.is_nan() {
                if rest > 0.0 {
                    let idx = self.tail_representative(side, j, f64::INFINITY);
                    let u = side.u(y, idx);
                    let re = x.hypot(u).ln() - self.log_eta;
                    if re.is_finite() && re <= crate::geom::OVERFLOW_RE {
                        out.push(Atom::new(self.preimage(side, u), rest));
                        q.lumped += rest;
                    } else {
                        q.dropped += rest;
                    }
                }
                break;
            }
            let (next, b) = side.tail(t, x, y, e);
            q.tail_bound += b;
            let w = rest - next;
            if w > 0.0 {
                let idx = self.tail_representative(side, j, e);
                out.push(Atom::new(self.preimage(side, side.u(y, idx)), w));
                if e - j > 1.0 {
                    q.lumped += w;
                }
            }
            rest = next;
            j = e;
        }
    }
}

/// Build the preimage blocks of `z`, appending `(preimage, weight)` nodes
/// to `out`. Weights include the convention factor.
pub fn preimage_blocks(
    tp: &TransferParams,
    eta: f64,
    z: CylPoint,
    out: &mut Vec<Atom>,
) -> Quadrature {
    let (t, x, y) = (tp.t, z.re(), z.im());
    let k0 = min_explicit_half_width(x);
    let s = lattice_sum(t, x, y, k0);
    let mut q = Quadrature {
        total: s.value,
        ..Default::default()
    };
    let walk = SideWalk {
        t,
        x,
        y,
        log_eta: eta.ln(),
        k0: k0 as f64,
        total: s.value,
        rule: &tp.blocks,
    };
    let start = out.len();
    walk.walk(Side::Upper, out, &mut q);
    walk.walk(Side::Lower, out, &mut q);
    let scale = tp.convention.scale(t, eta);
    if scale != 1.0 {
        for a in &mut out[start..] {
            a.weight *= scale;
        }
        q.total *= scale;
        q.lumped *= scale;
        q.dropped *= scale;
        q.tail_bound *= scale;
    }
    q.tail_bound += s.tail_bound * scale;
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransferApply {
    pub value: f64,
    /// `sup|g|` times the weight that is not resolved preimage by preimage.
    pub error_bound: f64,
}

/// `L_{t,ω} g (z)` for a bounded `g` with known sup-norm.
pub fn transfer_apply<G>(
    tp: &TransferParams,
    p: &MapParam,
    g: G,
    sup_g: f64,
    z: CylPoint,
) -> Result<TransferApply>
where
    G: Fn(CylPoint) -> f64,
{
    let mut nodes = Vec::new();
    let q = preimage_blocks(tp, p.eta(), z, &mut nodes);
    let value = nodes.iter().map(|a| g(a.point) * a.weight).sum();
    Ok(TransferApply {
        value,
        error_bound: sup_g * (2.0 * q.lumped + q.dropped + q.tail_bound),
    })
}

/// Unnormalised pull-back `L*_{t,ω} ν_{θω}` of an atomic measure.
#[derive(Debug, Clone)]
pub struct AdjointPush {
    pub atoms: Vec<Atom>,
    /// `∫ L_{t,ω} 1 dν_{θω}`
    pub mass: f64,
    /// Mass that was pruned or could not be placed.
    pub error_budget: f64,
}

pub fn adjoint_push(tp: &TransferParams, p: &MapParam, nu_next: &FiberMeasure) -> Result<AdjointPush> {
    let eta = p.eta();
    let parents = nu_next.atoms();
    let chunks: Vec<(Vec<Atom>, f64, f64)> = par::map_chunks(parents, 64, |chunk| {
        let mut out = Vec::with_capacity(chunk.len() * 96);
        let mut mass = 0.0;
        let mut dropped = 0.0;
        for parent in chunk {
            let start = out.len();
            let q = preimage_blocks(tp, eta, parent.point, &mut out);
            for a in &mut out[start..] {
                a.weight *= parent.weight;
            }
            mass += parent.weight * q.total;
            dropped += parent.weight * q.dropped;
        }
        (out, mass, dropped)
    });
    let mass: f64 = chunks.iter().map(|c| c.1).sum();
    let mut budget: f64 = chunks.iter().map(|c| c.2).sum();
    let threshold = tp.prune * mass;
    let mut atoms = Vec::with_capacity(chunks.iter().map(|c| c.0.len()).sum());
    for (chunk, _, _) in chunks {
        for a in chunk {
            if a.weight >= threshold && a.weight > 0.0 {
                atoms.push(a);
            } else {
                budget += a.weight;
            }
        }
    }
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Accuracy {
            budget: f64::NAN,
            allowed: tp.max_budget,
            context: format!("pushed mass is {mass}"),
        });
    }
    if budget > tp.max_budget * mass {
        return Err(Error::Accuracy {
            budget: budget / mass,
            allowed: tp.max_budget,
            context: "adjoint push dropped mass".into(),
        });
    }
    Ok(AdjointPush {
        atoms,
        mass,
        error_budget: budget,
    })
}

/// `max{(1+t)/(1-t)^3, (1+t)^3/(1-t)}` for `t ∈ [0, 1)`.
pub fn koebe_constant(t: f64) -> f64 {
    assert!((0.0..1.0).contains(&t), "Koebe constant needs t in [0, 1)");
    ((1.0 + t) / (1.0 - t).powi(3)).max((1.0 + t).powi(3) / (1.0 - t))
}

/// `(d, D)`: min and max of `L_{t} 1 (z) · |z|^{t-1}` over a grid.
pub fn empirical_sandwich(tp: &TransferParams, p: &MapParam, grid: &[CylPoint]) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::Domain("empty sandwich grid".into()));
    }
    let vals = par::map_collect(grid, |z| -> Result<f64> {
        let m = min_modulus(*z);
        if m == 0.0 {
            return Err(Error::Domain("sandwich grid must exclude z = 0".into()));
        }
        Ok(transfer_one(tp, p, *z)?.value * m.powf(tp.t - 1.0))
    });
    let mut d = f64::INFINITY;
    let mut big_d = 0.0f64;
    for v in vals {
        let v = v?;
        d = d.min(v);
        big_d = big_d.max(v);
    }
    Ok((d, big_d))
}

/// Points with cylinder modulus log-spaced in `[r_min, r_max]` along `n_angles`
/// directions. `angle_offset` (in units of the angular step) interleaves grids.
pub fn sandwich_grid(
    r_min: f64,
    r_max: f64,
    n_radii: usize,
    n_angles: usize,
    angle_offset: f64,
) -> Vec<CylPoint> {
    let mut grid = Vec::with_capacity(n_radii * n_angles);
    for i in 0..n_radii {
        let s = if n_radii == 1 { 0.0 } else { i as f64 / (n_radii - 1) as f64 };
        let r = r_min * (r_max / r_min).powf(s);
        for j in 0..n_angles {
            let phi = TWO_PI * (j as f64 + angle_offset) / n_angles as f64;
            // keep the lift within the fundamental strip so |z| = r
            let (s_phi, c_phi) = phi.sin_cos();
            let y = r * s_phi;
            let (x, y) = if y.abs() <= std::f64::consts::PI {
                (r * c_phi, y)
            } else {
                let y = std::f64::consts::PI * s_phi.signum() * (j as f64 + 1.0) / (n_angles as f64 + 1.0);
                let x = (r * r - y * y).sqrt() * c_phi.signum();
                (x, y)
            };
            grid.push(CylPoint::from_lift(x, y));
        }
    }
    grid
}

/// Constants entering the membership conditions for the measure class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsTable {
    pub t: f64,
    /// `K = K_{1/2}`
    pub koebe: f64,
    pub r0: f64,
    pub m0: f64,
    pub d: f64,
    pub big_d: f64,
    /// `c = d/2`
    pub c: f64,
    /// `C(M_0) = M_0^{t-1} / c`
    pub c_upper_m0: f64,
    /// `c(M_0) = 2 D C(M_0)`
    pub c_lower_m0: f64,
}

impl ConstantsTable {
    pub fn from_sandwich(t: f64, r0: f64, m0: f64, d: f64, big_d: f64) -> Result<Self> {
        let koebe = koebe_constant(0.5);
        if !(r0 > 0.0 && r0 < 1.0 / (2.0 * koebe)) {
            return Err(Error::Config(format!(
                "r0 must lie in (0, 1/(2K)) = (0, {}), got {r0}",
                1.0 / (2.0 * koebe)
            )));
        }
        if !(m0 > 0.0) || !(d > 0.0) || !(d <= big_d) || !big_d.is_finite() {
            return Err(Error::Config(format!(
                "invalid constants: M0={m0}, d={d}, D={big_d}"
            )));
        }
        let c = d / 2.0;
        let c_upper = m0.powf(t - 1.0) / c;
        Ok(Self {
            t,
            koebe,
            r0,
            m0,
            d,
            big_d,
            c,
            c_upper_m0: c_upper,
            c_lower_m0: 2.0 * big_d * c_upper,
        })
    }

    /// Fill `d`, `D` from the default sandwich grid (`|z| ∈ [0.01, 100]`).
    pub fn build(tp: &TransferParams, p: &MapParam, r0: f64, m0: f64) -> Result<Self> {
        let grid = sandwich_grid(0.01, 100.0, 48, 32, 0.0);
        let (d, big_d) = empirical_sandwich(tp, p, &grid)?;
        Self::from_sandwich(tp.t, r0, m0, d, big_d)
    }
}
