//! Expected pressure `EP(t) = ∫ log λ_{t,ω} dm(ω)` and the root of `EP(t) = 0`.

use serde::{Deserialize, Serialize};

use crate::conformal::{cesaro_invariant, phi_iterate, singular_centers, Partition, PhiOptions};
use crate::driver::{sample_sequence, DriverConfig};
use crate::error::{Error, Result};
use crate::geom::{cyl_distance, CylPoint, TWO_PI};
use crate::measure::{seed_measure, FiberMeasure};
use crate::par;
use crate::transfer::{preimage_blocks, transfer_one, TransferParams};

pub const BATCHES: usize = 8;
/// Seeding region `Q_{M0}` and excluded radius around singular points.
pub const SEED_M0: f64 = 10.0;
pub const SEED_R0: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BirkhoffLambda,
    OperatorGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureEstimate {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
    pub n_steps: usize,
    pub method: Method,
    pub batch_means: Vec<f64>,
    /// Operator grid only: worst fraction of weight from outside the grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leak: Option<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean of `v` from its sample spread.
fn stderr_of(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}

fn batch_means(v: &[f64]) -> Vec<f64> {
    let len = v.len() / BATCHES;
    (0..BATCHES)
        .map(|b| {
            let end = if b + 1 == BATCHES { v.len() } else { (b + 1) * len };
            mean(&v[b * len..end])
        })
        .collect()
}

fn estimate(t: f64, logs: &[f64], method: Method, leak: Option<f64>) -> PressureEstimate {
    let bm = batch_means(logs);
    PressureEstimate {
        t,
        value: mean(logs),
        stderr: stderr_of(&bm),
        n_steps: logs.len(),
        method,
        batch_means: bm,
        leak,
    }
}

/// Resampling seed derived from the master seed, decorrelated from the driver streams.
pub fn resample_seed(master: u64) -> u64 {
    master.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffOptions {
    pub n: usize,
    pub burn: usize,
    pub atoms: usize,
}

impl BirkhoffOptions {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            burn: n / 4,
            atoms: 2000,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 * BATCHES || self.atoms == 0 {
            return Err(Error::Config(format!(
                "need n >= {} and atoms >= 1, got n = {}, atoms = {}",
                2 * BATCHES,
                self.n,
                self.atoms
            )));
        }
        Ok(())
    }
}

/// Mean of `log λ_{t,θ^jω}` over the last `n` of `n + burn` pull-backs.
/// The driver seed fixes `ω`; resampling is keyed by the same seed.
pub fn pressure_birkhoff(
    tp: &TransferParams,
    cfg: &DriverConfig,
    opts: &BirkhoffOptions,
) -> Result<PressureEstimate> {
    opts.validate()?;
    let total = opts.n + opts.burn;
    let seq = sample_sequence(cfg, total)?;
    let centers = singular_centers(&seq.etas, total, SEED_M0);
    let nu0 = seed_measure(SEED_M0, SEED_R0, &centers, opts.atoms, total)?;
    let phi = PhiOptions {
        atom_cap: opts.atoms,
        seed: resample_seed(cfg.seed),
    };
    let run = phi_iterate(tp, &seq, &nu0, total, &phi, 0)?;
    let logs: Vec<f64> = run.lambdas[opts.burn..].iter().map(|l| l.ln()).collect();
    Ok(estimate(tp.t, &logs, Method::BirkhoffLambda, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Difference {
    pub t_lo: f64,
    pub t_hi: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PressureCurve {
    pub points: Vec<PressureEstimate>,
    /// `EP(t_{i+1}) - EP(t_i)` with paired batch-means errors.
    pub diffs: Vec<Difference>,
    /// `EP(t_{i+2}) - 2 EP(t_{i+1}) + EP(t_i)`.
    pub second_diffs: Vec<Difference>,
}

fn paired(bm: &[&[f64]], coef: &[f64]) -> (f64, f64) {
    let combo: Vec<f64> = (0..BATCHES)
        .map(|b| bm.iter().zip(coef).map(|(m, c)| c * m[b]).sum())
        .collect();
    (mean(&combo), stderr_of(&combo))
}

pub fn curve_from_points(points: Vec<PressureEstimate>) -> PressureCurve {
    let bm: Vec<&[f64]> = points.iter().map(|p| p.batch_means.as_slice()).collect();
    let diffs = (0..points.len().saturating_sub(1))
        .map(|i| {
            let (_, se) = paired(&bm[i..i + 2], &[-1.0, 1.0]);
            Difference {
                t_lo: points[i].t,
                t_hi: points[i + 1].t,
                value: points[i + 1].value - points[i].value,
                stderr: se,
            }
        })
        .collect();
    let second_diffs = (0..points.len().saturating_sub(2))
        .map(|i| {
            let (_, se) = paired(&bm[i..i + 3], &[1.0, -2.0, 1.0]);
            Difference {
                t_lo: points[i].t,
                t_hi: points[i + 2].t,
                value: points[i + 2].value - 2.0 * points[i + 1].value + points[i].value,
                stderr: se,
            }
        })
        .collect();
    PressureCurve {
        points,
        diffs,
        second_diffs,
    }
}

/// Birkhoff estimates on a grid of `t` sharing one driver realisation.
pub fn pressure_curve(
    tp_base: &TransferParams,
    cfg: &DriverConfig,
    ts: &[f64],
    opts: &BirkhoffOptions,
) -> Result<PressureCurve> {
    if ts.is_empty() || ts.windows(2).any(|w| !(w[0] < w[1])) || ts.iter().any(|&t| !(t > 1.0)) {
        return Err(Error::Config(
            "t values must be strictly increasing and > 1".into(),
        ));
    }
    let points = par::map_collect(ts, |&t| pressure_birkhoff(&tp_base.with_t(t)?, cfg, opts))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(curve_from_points(points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowenResult {
    pub h: f64,
    pub bracket: (f64, f64),
    pub evaluations: Vec<PressureEstimate>,
    pub seed: u64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BowenOptions {
    pub tol: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Significance of a sign, in standard errors.
    pub z: f64,
    pub max_doublings: usize,
}

impl Default for BowenOptions {
    fn default() -> Self {
        Self {
            tol: 0.02,
            t_lo: 1.05,
            t_hi: 2.0,
            z: 2.0,
            max_doublings: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sign {
    Pos,
    Neg,
    Unresolved,
}

/// Root of `EP(t) = 0` by bisection with common random numbers.
pub fn bowen_solve(
    tp_base: &TransferParams,
    cfg: &DriverConfig,
    birk: &BirkhoffOptions,
    opts: &BowenOptions,
) -> Result<BowenResult> {
    if !(opts.tol > 0.0) || !(1.0 < opts.t_lo && opts.t_lo < opts.t_hi) {
        return Err(Error::Config(format!(
            "bowen needs tol > 0 and 1 < t_lo < t_hi, got tol = {}, [{}, {}]",
            opts.tol, opts.t_lo, opts.t_hi
        )));
    }
    let mut evaluations = Vec::new();
    let mut birk = *birk;
    let eval = |t: f64, b: &BirkhoffOptions, ev: &mut Vec<PressureEstimate>| -> Result<Sign> {
        let e = pressure_birkhoff(&tp_base.with_t(t)?, cfg, b)?;
        let s = if e.value > opts.z * e.stderr {
            Sign::Pos
        } else if e.value < -opts.z * e.stderr {
            Sign::Neg
        } else {
            Sign::Unresolved
        };
        ev.push(e);
        Ok(s)
    };

    let mut lo = opts.t_lo;
    let mut hi = opts.t_hi;
    if eval(lo, &birk, &mut evaluations)? != Sign::Pos {
        lo = 0.5 * (1.0 + lo);
        if eval(lo, &birk, &mut evaluations)? != Sign::Pos {
            return Err(Error::Inconclusive(format!(
                "pressure not resolved positive at t_lo = {lo}"
            )));
        }
    }
    if eval(hi, &birk, &mut evaluations)? == Sign::Pos {
        return Err(Error::Inconclusive(format!(
            "pressure still positive at t_hi = {hi}"
        )));
    }
    let mut hi_resolved = evaluations.last().map(|e| e.value < -opts.z * e.stderr).unwrap();
    let mut doublings = 0;
    while hi - lo >= opts.tol || !hi_resolved {
        let mid = 0.5 * (lo + hi);
        match eval(mid, &birk, &mut evaluations)? {
            Sign::Pos => lo = mid,
            Sign::Neg => {
                hi = mid;
                hi_resolved = true;
            }
            Sign::Unresolved => {
                let half = 0.5 * opts.tol;
                let mut progressed = false;
                if mid - half > lo && eval(mid - half, &birk, &mut evaluations)? == Sign::Pos {
                    lo = mid - half;
                    progressed = true;
                }
                if mid + half < hi && eval(mid + half, &birk, &mut evaluations)? == Sign::Neg {
                    hi = mid + half;
                    hi_resolved = true;
                    progressed = true;
                }
                if !progressed {
                    if doublings >= opts.max_doublings {
                        return Err(Error::Inconclusive(format!(
                            "sign of EP unresolved near t = {mid} after {doublings} doublings of n (bracket [{lo}, {hi}])"
                        )));
                    }
                    doublings += 1;
                    birk.n *= 2;
                    birk.burn *= 2;
                }
            }
        }
        if hi - lo < opts.tol && !hi_resolved {
            // the upper end was never resolved; only more samples can help
            if doublings >= opts.max_doublings {
                return Err(Error::Inconclusive(format!(
                    "EP(t_hi) not resolved negative, bracket [{lo}, {hi}]"
                )));
            }
            doublings += 1;
            birk.n *= 2;
            birk.burn *= 2;
            hi_resolved = eval(hi, &birk, &mut evaluations)? == Sign::Neg;
        }
    }
    let h = 0.5 * (lo + hi);
    if !(1.0 < h && h < 2.0) {
        return Err(Error::Inconclusive(format!("root {h} outside (1, 2)")));
    }
    Ok(BowenResult {
        h,
        bracket: (lo, hi),
        evaluations,
        seed: cfg.seed,
        n_steps: birk.n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// The grid covers `Q_M`.
    pub m: f64,
    /// Cell size.
    pub resolution: f64,
    /// Normalisation uses `Q_{M1}` minus `r0`-balls around singular points.
    pub m1: f64,
    pub r0: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            m: 12.0,
            resolution: 0.1,
            m1: 5.0,
            r0: SEED_R0,
        }
    }
}

/// Cell-centred grid on `Q_M`, periodic in the imaginary direction.
struct Grid {
    nx: usize,
    ny: usize,
    x0: f64,
    hx: f64,
    hy: f64,
}

impl Grid {
    fn new(spec: &GridSpec) -> Result<Self> {
        if !(spec.m > 0.0 && spec.resolution > 0.0 && spec.m1 > 0.0 && spec.m1 <= spec.m) {
            return Err(Error::Config(format!("invalid grid spec {spec:?}")));
        }
        let nx = (2.0 * spec.m / spec.resolution).ceil() as usize;
        let ny = (TWO_PI / spec.resolution).ceil() as usize;
        if nx * ny > 4_000_000 {
            return Err(Error::Config(format!("grid of {nx}x{ny} nodes is too large")));
        }
        Ok(Self {
            nx,
            ny,
            x0: -spec.m,
            hx: 2.0 * spec.m / nx as f64,
            hy: TWO_PI / ny as f64,
        })
    }

    fn node(&self, i: usize, j: usize) -> CylPoint {
        CylPoint::from_lift(
            self.x0 + (i as f64 + 0.5) * self.hx,
            (j as f64 + 0.5) * self.hy,
        )
    }

    /// Bilinear interpolation; constant to the left of the grid and decaying
    /// like `Re^{1-t}` to the right.
    fn interpolate(&self, g: &[f64], x: f64, y: f64, t: f64) -> f64 {
        let fy = y / self.hy - 0.5;
        let j0 = fy.floor();
        let ty = fy - j0;
        let j0 = (j0 as i64).rem_euclid(self.ny as i64) as usize;
        let j1 = (j0 + 1) % self.ny;
        let fx = (x - self.x0) / self.hx - 0.5;
        let x_last = self.x0 + (self.nx as f64 - 0.5) * self.hx;
        let (i0, i1, tx, scale) = if fx <= 0.0 {
            (0, 0, 0.0, 1.0)
        } else if fx >= (self.nx - 1) as f64 {
            let s = if x > x_last && x_last > 0.0 {
                (x_last / x).powf(t - 1.0)
            } else {
                1.0
            };
            (self.nx - 1, self.nx - 1, 0.0, s)
        } else {
            let i0 = fx.floor();
            (i0 as usize, i0 as usize + 1, fx - i0, 1.0)
        };
        let at = |i: usize, j: usize| g[i * self.ny + j];
        let v = (1.0 - tx) * ((1.0 - ty) * at(i0, j0) + ty * at(i0, j1))
            + tx * ((1.0 - ty) * at(i1, j0) + ty * at(i1, j1));
        v * scale
    }
}

/// Growth rate of `L^n_{t,ω} 1` on a grid, renormalised each step by the sup
/// over the good set `E`.
pub fn pressure_operator_grid(
    tp: &TransferParams,
    cfg: &DriverConfig,
    spec: &GridSpec,
    n: usize,
    burn: usize,
) -> Result<PressureEstimate> {
    if n < 2 * BATCHES {
        return Err(Error::Config(format!("need n >= {}", 2 * BATCHES)));
    }
    let (logs, leak) = grid_log_normalizers(tp, cfg, spec, n + burn)?;
    if leak > 0.1 {
        return Err(Error::Accuracy {
            budget: leak,
            allowed: 0.1,
            context: format!("operator grid leak at t = {}; enlarge M = {}", tp.t, spec.m),
        });
    }
    Ok(estimate(tp.t, &logs[burn..], Method::OperatorGrid, Some(leak)))
}

fn grid_log_normalizers(
    tp: &TransferParams,
    cfg: &DriverConfig,
    spec: &GridSpec,
    steps: usize,
) -> Result<(Vec<f64>, f64)> {
    let grid = Grid::new(spec)?;
    let seq = sample_sequence(cfg, steps)?;
    let t = tp.t;
    let nodes: Vec<CylPoint> = (0..grid.nx)
        .flat_map(|i| (0..grid.ny).map(move |j| (i, j)))
        .map(|(i, j)| grid.node(i, j))
        .collect();
    // preimage blocks at η = 1; other η shift Re by -ln η
    let blocks: Vec<Vec<(f64, f64, f64)>> = par::map_collect(&nodes, |&z| {
        let mut out = Vec::new();
        preimage_blocks(tp, 1.0, z, &mut out);
        out.iter()
            .map(|a| (a.point.re(), a.point.im(), a.weight))
            .collect()
    });
    let mut g = vec![1.0; nodes.len()];
    let mut logs = Vec::with_capacity(steps);
    let mut leak = 0.0f64;
    for step in 0..steps {
        let eta = seq.etas[step];
        let shift = eta.ln();
        let scale = match tp.convention {
            crate::transfer::Convention::ImageModulus => 1.0,
            crate::transfer::Convention::EtaFactor => eta.powf(t),
        };
        let m = spec.m;
        let vals: Vec<(f64, f64)> = par::map_collect(&blocks, |bl| {
            let mut v = 0.0;
            let mut out = 0.0;
            for &(re, im, w) in bl {
                let x = re - shift;
                let c = w * grid.interpolate(&g, x, im, t);
                v += c;
                if x.abs() > m {
                    out += c;
                }
            }
            (v * scale, out * scale)
        });
        // the good set on the image fiber
        let centers = singular_centers(&seq.etas, step + 1, spec.m1);
        let mut sup = 0.0f64;
        let mut worst_leak = 0.0f64;
        for (z, &(v, out)) in nodes.iter().zip(&vals) {
            if z.re().abs() <= spec.m1 && centers.iter().all(|c| cyl_distance(*z, *c) >= spec.r0) {
                sup = sup.max(v);
                if v > 0.0 {
                    worst_leak = worst_leak.max(out / v);
                }
            }
        }
        if !(sup > 0.0) || !sup.is_finite() {
            return Err(Error::Accuracy {
                budget: sup,
                allowed: f64::INFINITY,
                context: "grid normaliser degenerate".into(),
            });
        }
        leak = leak.max(worst_leak);
        for (gi, &(v, _)) in g.iter_mut().zip(&vals) {
            *gi = v / sup;
        }
        logs.push(sup.ln());
    }
    Ok((logs, leak))
}

/// `log sup_E L_t 1` at one step, evaluated with [`transfer_one`] on the grid nodes.
pub fn first_grid_normalizer(tp: &TransferParams, eta: f64, spec: &GridSpec) -> Result<f64> {
    let grid = Grid::new(spec)?;
    let p = crate::dynamics::MapParam::fixed(eta)?;
    let centers = singular_centers(&[eta], 1, spec.m1);
    let mut sup = 0.0f64;
    for i in 0..grid.nx {
        for j in 0..grid.ny {
            let z = grid.node(i, j);
            if z.re().abs() <= spec.m1 && centers.iter().all(|c| cyl_distance(z, *c) >= spec.r0) {
                sup = sup.max(transfer_one(tp, &p, z)?.value);
            }
        }
    }
    Ok(sup.ln())
}

/// `∫ (log η + Re z) dμ(z)`.
pub fn lyapunov_of_measure(mu: &FiberMeasure, eta: f64) -> f64 {
    let ln_eta = eta.ln();
    mu.integrate(|z| ln_eta + z.re()) / mu.total_mass()
}

/// Lyapunov exponent of the Cesàro estimate of the invariant measure.
pub fn lyapunov_estimate(
    tp: &TransferParams,
    cfg: &DriverConfig,
    n: usize,
    atoms: usize,
) -> Result<f64> {
    let nc = (n / 2).clamp(1, 32);
    let total = n.max(nc + 1);
    let seq = sample_sequence(cfg, total)?;
    let centers = singular_centers(&seq.etas, total, SEED_M0);
    let nu0 = seed_measure(SEED_M0, SEED_R0, &centers, atoms, total)?;
    let phi = PhiOptions {
        atom_cap: atoms,
        seed: resample_seed(cfg.seed),
    };
    let run = phi_iterate(tp, &seq, &nu0, total, &phi, nc + 1)?;
    let est = cesaro_invariant(&run.history, &seq.etas, nc, Partition { m1: 5.0, level: 4 })?;
    let chi = lyapunov_of_measure(&est.cesaro, seq.etas[nc - 1]);
    if !chi.is_finite() || chi <= 0.0 {
        return Err(Error::Accuracy {
            budget: chi,
            allowed: 0.0,
            context: "Lyapunov exponent not finite and positive".into(),
        });
    }
    Ok(chi)
}
