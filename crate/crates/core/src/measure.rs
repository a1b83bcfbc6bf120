//! Atomic measures on a single fiber `{ω} × Q`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{cyl_distance, CylPoint, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: CylPoint,
    pub weight: f64,
}

impl Atom {
    #[inline]
    pub fn new(point: CylPoint, weight: f64) -> Self {
        Self { point, weight }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberMeasure {
    atoms: Vec<Atom>,
    fiber_index: usize,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    re: f64,
    im: f64,
    weight: f64,
}

impl FiberMeasure {
    pub fn from_atoms(atoms: Vec<(CylPoint, f64)>, fiber_index: usize) -> Result<Self> {
        Self::from_atom_vec(
            atoms.into_iter().map(|(p, w)| Atom::new(p, w)).collect(),
            fiber_index,
        )
    }

    pub fn from_atom_vec(atoms: Vec<Atom>, fiber_index: usize) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("a fiber measure needs at least one atom".into()));
        }
        if let Some((i, a)) = atoms
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.weight > 0.0) || !a.weight.is_finite())
        {
            return Err(Error::Domain(format!(
                "atom {i} has non-positive weight {}",
                a.weight
            )));
        }
        Ok(Self { atoms, fiber_index })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn into_atoms(self) -> Vec<Atom> {
        self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn fiber_index(&self) -> usize {
        self.fiber_index
    }

    pub fn with_fiber_index(mut self, fiber_index: usize) -> Self {
        self.fiber_index = fiber_index;
        self
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn is_normalized(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= 1e-9
    }

    pub fn normalized(mut self) -> Self {
        let m = self.total_mass();
        for a in &mut self.atoms {
            a.weight /= m;
        }
        self
    }

    /// `ν(A)` for `A = {z : pred(z)}`.
    pub fn mass_where<P: Fn(CylPoint) -> bool>(&self, pred: P) -> f64 {
        self.atoms
            .iter()
            .filter(|a| pred(a.point))
            .map(|a| a.weight)
            .sum()
    }

    /// `∫ g dν`.
    pub fn integrate<G: Fn(CylPoint) -> f64>(&self, g: G) -> f64 {
        self.atoms.iter().map(|a| g(a.point) * a.weight).sum()
    }

    /// Sort atoms into a canonical order, independent of how they were listed.
    pub fn canonicalize(&mut self) {
        self.atoms.sort_by(|a, b| {
            a.point
                .re()
                .total_cmp(&b.point.re())
                .then(a.point.im().total_cmp(&b.point.im()))
                .then(a.weight.total_cmp(&b.weight))
        });
    }

    /// CSV with header `re,im,weight`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for a in &self.atoms {
            wr.serialize(CsvRow {
                re: a.point.re(),
                im: a.point.im(),
                weight: a.weight,
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, fiber_index: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut atoms = Vec::new();
        for row in rd.deserialize() {
            let row: CsvRow = row?;
            atoms.push(Atom::new(CylPoint::new(row.re, row.im)?, row.weight));
        }
        Self::from_atom_vec(atoms, fiber_index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path, fiber_index: usize) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, fiber_index)
    }
}

/// Quasi-uniform atoms on `Q_{M0}` outside the balls `B(c, r0)`, equal weights.
/// Points come from the additive recurrence with the plastic-number constants.
pub fn seed_measure(
    m0: f64,
    r0: f64,
    excluded: &[CylPoint],
    n_atoms: usize,
    fiber_index: usize,
) -> Result<FiberMeasure> {
    if n_atoms == 0 || !(m0 > 0.0) || !(r0 >= 0.0) {
        return Err(Error::Config(format!(
            "seed measure needs n_atoms >= 1, M0 > 0, r0 >= 0 (got {n_atoms}, {m0}, {r0})"
        )));
    }
    // R2 sequence
    let g = 1.324_717_957_244_746_f64;
    let (a1, a2) = (1.0 / g, 1.0 / (g * g));
    let mut atoms = Vec::with_capacity(n_atoms);
    let limit = 100 * n_atoms + 1000;
    let mut i = 0usize;
    while atoms.len() < n_atoms {
        if i >= limit {
            return Err(Error::Config(
                "seed region is empty after removing the excluded balls".into(),
            ));
        }
        let u = (0.5 + a1 * (i + 1) as f64).fract();
        let v = (0.5 + a2 * (i + 1) as f64).fract();
        i += 1;
        let z = CylPoint::new(-m0 + 2.0 * m0 * u, TWO_PI * v)?;
        if excluded.iter().all(|c| cyl_distance(z, *c) >= r0) {
            atoms.push(Atom::new(z, 1.0));
        }
    }
    let w = 1.0 / n_atoms as f64;
    for a in &mut atoms {
        a.weight = w;
    }
    FiberMeasure::from_atom_vec(atoms, fiber_index)
}

/// Cell size used for the spatial ordering before resampling.
const CELL: f64 = 1.0 / 16.0;

/// Stable sort so that nearby atoms are adjacent.
pub fn spatial_sort(atoms: &mut [Atom]) {
    atoms.sort_by(|a, b| {
        let ka = (a.point.re() / CELL).floor();
        let kb = (b.point.re() / CELL).floor();
        ka.total_cmp(&kb).then(a.point.im().total_cmp(&b.point.im()))
    });
}

/// Systematic resampling to at most `cap` atoms with offset `u ∈ [0, 1)`.
/// Total mass is preserved; selected atoms keep their position and share the
/// mass equally, duplicates are merged.
pub fn systematic_resample(atoms: &[Atom], cap: usize, u: f64) -> Vec<Atom> {
    assert!(cap > 0 && (0.0..1.0).contains(&u));
    let total: f64 = atoms.iter().map(|a| a.weight).sum();
    if atoms.len() <= cap || total <= 0.0 {
        return atoms.to_vec();
    }
    let step = total / cap as f64;
    let mut out: Vec<Atom> = Vec::with_capacity(cap);
    let mut next = u * step;
    let mut acc = 0.0;
    let mut taken = 0usize;
    for a in atoms {
        acc += a.weight;
        let mut count = 0usize;
        while next < acc && taken < cap {
            count += 1;
            taken += 1;
            next = u * step + taken as f64 * step;
        }
        if count > 0 {
            out.push(Atom::new(a.point, count as f64 * step));
        }
    }
    // rounding can leave the last position just past the accumulated sum
    if taken < cap {
        let last = atoms.iter().rev().find(|a| a.weight > 0.0).unwrap();
        let missing = (cap - taken) as f64 * step;
        match out.last_mut() {
            Some(o) if o.point == last.point => o.weight += missing,
            _ => out.push(Atom::new(last.point, missing)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_measure(n: usize, seed: u64) -> Vec<Atom> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Atom::new(
                    CylPoint::new(rng.gen_range(-3.0..3.0), rng.gen_range(0.0..TWO_PI)).unwrap(),
                    rng.gen_range(0.01..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn construction_rejects_bad_weights() {
        let z = CylPoint::new(0.0, 0.0).unwrap();
        assert!(FiberMeasure::from_atoms(vec![(z, 0.0)], 0).is_err());
        assert!(FiberMeasure::from_atoms(vec![(z, f64::NAN)], 0).is_err());
        assert!(FiberMeasure::from_atoms(vec![], 0).is_err());
    }

    #[test]
    fn seed_examples() {
        let centers = [CylPoint::new(0.0, 0.0).unwrap(), CylPoint::new(1.0, 0.0).unwrap()];
        let nu = seed_measure(10.0, 0.02, &centers, 10_000, 0).unwrap();
        assert_eq!(nu.len(), 10_000);
        assert!(nu.atoms().iter().all(|a| a.point.re().abs() <= 10.0));
        assert!(nu
            .atoms()
            .iter()
            .all(|a| centers.iter().all(|c| cyl_distance(a.point, *c) >= 0.02)));
        assert!(nu.atoms().iter().all(|a| a.weight == 1e-4));
        assert!(nu.is_normalized());
        // a ball covering all of Q_1
        let big = [CylPoint::new(0.0, 3.0).unwrap()];
        assert!(seed_measure(1.0, 10.0, &big, 5, 0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let atoms = sample_measure(50, 3);
        let nu = FiberMeasure::from_atom_vec(atoms, 4).unwrap();
        let mut buf = Vec::new();
        nu.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"re,im,weight\n"));
        let back = FiberMeasure::read_csv(&buf[..], 4).unwrap();
        assert_eq!(back, nu);
    }

    #[test]
    fn canonical_order_ignores_input_order() {
        let atoms = sample_measure(30, 5);
        let mut a = FiberMeasure::from_atom_vec(atoms.clone(), 0).unwrap();
        let mut rev = atoms;
        rev.reverse();
        let mut b = FiberMeasure::from_atom_vec(rev, 0).unwrap();
        a.canonicalize();
        b.canonicalize();
        assert_eq!(a, b);
    }

    #[test]
    fn resample_preserves_mass_and_cap() {
        let atoms = sample_measure(1000, 9);
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        for &u in &[0.0, 0.3, 0.999] {
            let out = systematic_resample(&atoms, 100, u);
            assert!(out.len() <= 100);
            let m: f64 = out.iter().map(|a| a.weight).sum();
            assert!((m - total).abs() <= 1e-12 * total);
        }
        assert_eq!(systematic_resample(&atoms, 2000, 0.5), atoms);
    }

    #[test]
    fn resample_is_unbiased() {
        let mut atoms = sample_measure(500, 1);
        spatial_sort(&mut atoms);
        let region = |z: CylPoint| z.re() > 0.5 && z.im() < 2.0;
        let exact: f64 = atoms.iter().filter(|a| region(a.point)).map(|a| a.weight).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let reps = 1000;
        let vals: Vec<f64> = (0..reps)
            .map(|_| {
                let out = systematic_resample(&atoms, 50, rng.gen_range(0.0..1.0));
                out.iter().filter(|a| region(a.point)).map(|a| a.weight).sum()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se + 1e-12, "{mean} vs {exact} (se {se})");
    }
}
