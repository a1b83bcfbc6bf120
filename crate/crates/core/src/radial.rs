//! Radial-point statistics, the typical-point dichotomy scan and the
//! expansion raster.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::ParamSequence;
use crate::dynamics::{log_derivative, orbit, step, OrbitRecord};
use crate::error::{Error, Result};
use crate::geom::{cyl_distance, min_modulus, CylPoint, OVERFLOW_RE, TWO_PI};
use crate::par;

/// Triangular table `T[n][k] = F^k_{θ^{n-k}ω}(0)` for `0 <= k <= n <= n_max`.
/// `None` marks a point past the overflow threshold.
#[derive(Debug, Clone)]
pub struct SingularTable {
    rows: Vec<Vec<Option<CylPoint>>>,
}

impl SingularTable {
    pub fn build(etas: &[f64], n_max: usize) -> Result<Self> {
        if etas.len() < n_max {
            return Err(Error::Bounds {
                index: n_max,
                len: etas.len(),
            });
        }
        let zero = CylPoint::from_lift(0.0, 0.0);
        let mut rows: Vec<Vec<Option<CylPoint>>> = Vec::with_capacity(n_max + 1);
        rows.push(vec![Some(zero)]);
        for n in 1..=n_max {
            let eta = etas[n - 1];
            let mut row = Vec::with_capacity(n + 1);
            row.push(Some(zero));
            for prev in &rows[n - 1] {
                row.push(prev.and_then(|z| {
                    if z.re() > OVERFLOW_RE {
                        return None;
                    }
                    let w = step(eta, z);
                    (w.re() <= OVERFLOW_RE).then_some(w)
                }));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn n_max(&self) -> usize {
        self.rows.len() - 1
    }

    /// Row `n`: the points `F^k_{θ^{n-k}ω}(0)`, `k = 0..=n`.
    pub fn row(&self, n: usize) -> Result<&[Option<CylPoint>]> {
        self.rows.get(n).map(Vec::as_slice).ok_or(Error::Bounds {
            index: n,
            len: self.rows.len(),
        })
    }

    pub fn get(&self, n: usize, k: usize) -> Option<CylPoint> {
        self.rows.get(n).and_then(|r| r.get(k).copied().flatten())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialStats {
    pub z: CylPoint,
    #[serde(rename = "N")]
    pub big_n: f64,
    pub n: usize,
    pub density: f64,
    pub counted: usize,
    /// The orbit escaped before `n`; later times were not counted.
    pub truncated: bool,
}

/// `j` passes the sufficient test when `F^j(z) ∈ Q_N` and no `T[j][k]`,
/// `k <= j`, lies in `B(F^j(z), 2/N)`.
pub(crate) fn in_sufficient_set(table: &SingularTable, j: usize, w: CylPoint, big_n: f64) -> bool {
    if w.re().abs() > big_n {
        return false;
    }
    let r = 2.0 / big_n;
    table.rows[j]
        .iter()
        .all(|p| p.is_none_or(|p| cyl_distance(p, w) >= r))
}

/// Frequency of `j < n` in the sufficient set.
pub fn radial_density(
    seq: &ParamSequence,
    table: &SingularTable,
    z: CylPoint,
    big_n: f64,
    n: usize,
) -> Result<RadialStats> {
    if !(big_n > 0.0) {
        return Err(Error::Domain(format!("N must be positive, got {big_n}")));
    }
    if n > table.n_max() + 1 {
        return Err(Error::Bounds {
            index: n,
            len: table.n_max() + 1,
        });
    }
    let rec = orbit(&seq.etas, z, n.saturating_sub(1))?;
    let counted = rec
        .points
        .iter()
        .enumerate()
        .take(n)
        .filter(|&(j, &w)| w.re() <= OVERFLOW_RE && in_sufficient_set(table, j, w, big_n))
        .count();
    Ok(RadialStats {
        z,
        big_n,
        n,
        density: if n == 0 { 0.0 } else { counted as f64 / n as f64 },
        counted,
        truncated: rec.points.len() < n,
    })
}

/// Cell-centred sample grid on `Q_M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub m: f64,
    pub n_re: usize,
    pub n_im: usize,
}

impl ScanGrid {
    pub fn points(&self) -> Vec<CylPoint> {
        let (hx, hy) = (2.0 * self.m / self.n_re as f64, TWO_PI / self.n_im as f64);
        (0..self.n_re)
            .flat_map(|i| (0..self.n_im).map(move |j| (i, j)))
            .map(|(i, j)| {
                CylPoint::from_lift(-self.m + (i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy)
            })
            .collect()
    }
}

/// How a point met the dichotomy at time `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    /// `F^n(z)` shadows the singular orbit: the largest `k` with
    /// `F^{n-k+i}(z)` close to `T[n-k+i][i]` for all `i <= k`.
    Shadow(usize),
    /// `|F^n(z)| >= 1/δ` without a shadow.
    Large,
    Neither,
}

/// Closeness used for shadowing. Points with `Re >= 1/δ` (or escaped, `None`)
/// are all close to each other.
fn close(a: Option<CylPoint>, b: Option<CylPoint>, delta: f64) -> bool {
    let far = |p: Option<CylPoint>| p.is_none_or(|p| p.re() >= 1.0 / delta);
    match (a, b) {
        (Some(a), Some(b)) if cyl_distance(a, b) < delta => true,
        _ => far(a) && far(b),
    }
}

/// Dichotomy witnesses at each time in `times` (increasing, `<= table.n_max()`).
pub fn dichotomy(
    table: &SingularTable,
    etas: &[f64],
    z: CylPoint,
    times: &[usize],
    delta: f64,
) -> Result<Vec<Witness>> {
    let n = times.last().copied().unwrap_or(0);
    let rec = orbit(etas, z, n)?;
    let at = |j: usize| rec.points.get(j).copied().filter(|p| p.re() <= OVERFLOW_RE);
    let mut out = Vec::with_capacity(times.len());
    let mut next_time = times.iter().peekable();
    // chain lengths k for which the shadow holds up to the current time
    let mut active: Vec<usize> = Vec::new();
    for j in 0..=n {
        let w = at(j);
        let row = table.row(j)?;
        let mut next: Vec<usize> = active
            .iter()
            .map(|&k| k + 1)
            .filter(|&k| close(w, row[k], delta))
            .collect();
        if close(w, row[0], delta) {
            next.push(0);
        }
        active = next;
        while next_time.peek() == Some(&&j) {
            next_time.next();
            let large = w.is_none_or(|w| min_modulus(w) >= 1.0 / delta);
            out.push(match active.iter().max() {
                Some(&k) => Witness::Shadow(k),
                None if large => Witness::Large,
                None => Witness::Neither,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub grid: ScanGrid,
    pub n: usize,
    pub delta: f64,
    pub fraction_satisfying: f64,
    pub fraction_shadow: f64,
    pub fraction_large: f64,
    /// Times at which the largest witnessing `k` was recorded.
    pub schedule: Vec<usize>,
    pub max_k: Vec<usize>,
    pub k_growth: bool,
}

/// Dichotomy fractions over a grid on `Q_M` at time `n`, plus the largest
/// shadow length on the schedule `n/4, n/2, n`.
pub fn typical_scan(seq: &ParamSequence, grid: &ScanGrid, n: usize, delta: f64) -> Result<ScanReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if grid.n_re == 0 || grid.n_im == 0 || !(grid.m > 0.0) {
        return Err(Error::Config(format!("invalid scan grid {grid:?}")));
    }
    let table = SingularTable::build(&seq.etas, n)?;
    let points = grid.points();
    let mut schedule: Vec<usize> = vec![n / 4, n / 2, n];
    schedule.dedup();
    let results = par::map_collect(&points, |&z| dichotomy(&table, &seq.etas, z, &schedule, delta))
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let total = points.len() as f64;
    let last = schedule.len() - 1;
    let count = |f: fn(&Witness) -> bool| results.iter().filter(|r| f(&r[last])).count() as f64 / total;
    let fraction_shadow = count(|w| matches!(w, Witness::Shadow(_)));
    let fraction_large = count(|w| matches!(w, Witness::Large));
    let fraction_satisfying = count(|w| !matches!(w, Witness::Neither));
    let max_k: Vec<usize> = (0..schedule.len())
        .map(|s| {
            results
                .iter()
                .filter_map(|r| match r[s] {
                    Witness::Shadow(k) => Some(k),
                    _ => None,
                })
                .max()
                .unwrap_or(0)
        })
        .collect();
    let k_growth = max_k.windows(2).all(|w| w[0] <= w[1]) && max_k[last] > max_k[0];
    Ok(ScanReport {
        grid: *grid,
        n,
        delta,
        fraction_satisfying,
        fraction_shadow,
        fraction_large,
        schedule,
        max_k,
        k_growth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccumulationStats {
    pub tail_start: usize,
    /// Largest `|Im|` (distance to the real line) over non-escaped tail points.
    pub max_real_line_distance: f64,
    pub escaped: bool,
    pub min_re: f64,
}

pub fn accumulation_stats(record: &OrbitRecord, tail_fraction: f64) -> Result<AccumulationStats> {
    // an escaped orbit is complete however short it is
    if record.points.len() < 10 && record.escaped_at.is_none() {
        return Err(Error::Config(format!(
            "accumulation stats need at least 10 orbit points, got {}",
            record.points.len()
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Domain(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let len = record.points.len();
    let tail_start = len - ((len as f64 * tail_fraction).ceil() as usize).clamp(1, len);
    let tail = &record.points[tail_start..];
    let live = tail.iter().filter(|z| z.re() <= OVERFLOW_RE);
    Ok(AccumulationStats {
        tail_start,
        max_real_line_distance: live.clone().map(|z| z.centered_im().abs()).fold(0.0, f64::max),
        escaped: record.escaped_at.is_some(),
        min_re: live.map(|z| z.re()).fold(f64::INFINITY, f64::min),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterWindow {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub width: usize,
    pub height: usize,
}

pub const MAX_RASTER_SIDE: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub n_max: usize,
    /// Row-major, top row is `im_max`.
    pub index: Vec<u32>,
}

/// First `n` with `|(F^n)'(z)| >= threshold` or escape; `n_max` if neither.
pub fn expansion_index(etas: &[f64], z: CylPoint, n_max: usize, log_threshold: f64) -> usize {
    let mut acc = 0.0;
    let mut w = z;
    for (n, &eta) in etas[..n_max].iter().enumerate() {
        if acc >= log_threshold || w.re() > OVERFLOW_RE {
            return n;
        }
        acc += log_derivative(eta, w);
        w = step(eta, w);
    }
    n_max
}

pub fn expansion_raster(
    seq: &ParamSequence,
    window: &RasterWindow,
    n_max: usize,
    deriv_threshold: f64,
) -> Result<Raster> {
    let RasterWindow {
        re_min,
        re_max,
        im_min,
        im_max,
        width,
        height,
    } = *window;
    if width == 0 || height == 0 || width > MAX_RASTER_SIDE || height > MAX_RASTER_SIDE {
        return Err(Error::Config(format!(
            "raster size {width}x{height} outside 1..={MAX_RASTER_SIDE}"
        )));
    }
    if !(re_min < re_max && im_min < im_max) || ![re_min, re_max, im_min, im_max].iter().all(|v| v.is_finite()) {
        return Err(Error::Config(format!("invalid raster window {window:?}")));
    }
    if !(deriv_threshold > 0.0) {
        return Err(Error::Domain(format!(
            "derivative threshold must be positive, got {deriv_threshold}"
        )));
    }
    if seq.etas.len() < n_max {
        return Err(Error::Bounds {
            index: n_max,
            len: seq.etas.len(),
        });
    }
    let log_threshold = deriv_threshold.ln();
    let (hx, hy) = ((re_max - re_min) / width as f64, (im_max - im_min) / height as f64);
    let index = par::map_range(width * height, |p| {
        let (row, col) = (p / width, p % width);
        let z = CylPoint::from_lift(
            re_min + (col as f64 + 0.5) * hx,
            im_max - (row as f64 + 0.5) * hy,
        );
        expansion_index(&seq.etas, z, n_max, log_threshold) as u32
    });
    Ok(Raster {
        width,
        height,
        n_max,
        index,
    })
}

impl Raster {
    /// Gray level `255·index/n_max`.
    pub fn gray(&self) -> Vec<u8> {
        let scale = if self.n_max == 0 { 0.0 } else { 255.0 / self.n_max as f64 };
        self.index
            .iter()
            .map(|&i| (i as f64 * scale).round() as u8)
            .collect()
    }

    /// Binary PGM, header `P5\n<w> <h>\n255\n`.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.gray())?;
        Ok(())
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_pgm(&mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Fraction of interior pixels whose index differs from the majority of
    /// their four neighbours (or whose neighbours have no majority).
    pub fn neighbor_disagreement(&self) -> f64 {
        if self.width < 3 || self.height < 3 {
            return 0.0;
        }
        let at = |r: usize, c: usize| self.index[r * self.width + c];
        let mut differ = 0usize;
        let mut total = 0usize;
        for r in 1..self.height - 1 {
            for c in 1..self.width - 1 {
                let nb = [at(r - 1, c), at(r + 1, c), at(r, c - 1), at(r, c + 1)];
                let majority = nb
                    .iter()
                    .find(|&&v| nb.iter().filter(|&&u| u == v).count() >= 3);
                if majority != Some(&at(r, c)) {
                    differ += 1;
                }
                total += 1;
            }
        }
        differ as f64 / total as f64
    }
}
