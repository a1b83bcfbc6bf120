use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use expdyn::driver::sample_sequence;
use expdyn::radial::{
    expansion_raster, radial_density, typical_scan, RasterWindow, ScanGrid, SingularTable,
};
use expdyn::{CylPoint, DriverConfig};

const OVERFLOW: f64 = 700.0;

/// One step of `η e^z` on the cylinder, or `None` past the overflow line.
fn fwd(eta: f64, z: Option<CylPoint>) -> Option<CylPoint> {
    let z = z.filter(|z| z.re() <= OVERFLOW)?;
    let r = eta * z.re().exp();
    let (s, c) = z.im().sin_cos();
    CylPoint::new(r * c, r * s).ok().filter(|w| w.re() <= OVERFLOW)
}

fn dist(a: CylPoint, b: CylPoint) -> f64 {
    let dy = (a.im() - b.im()).rem_euclid(TAU);
    (a.re() - b.re()).hypot(dy.min(TAU - dy))
}

/// Count of `j < n` with `|Re F^j z| <= N` and every `F^k_{θ^{j-k}ω}(0)`
/// at distance at least `2/N` from `F^j z`.
fn oracle_count(etas: &[f64], z: CylPoint, big_n: f64, n: usize) -> usize {
    let mut w = Some(z);
    let mut count = 0;
    for j in 0..n {
        if let Some(p) = w {
            let clear = (0..=j).all(|k| {
                let mut s = CylPoint::new(0.0, 0.0).ok();
                for eta in &etas[j - k..j] {
                    s = fwd(*eta, s);
                }
                s.is_none_or(|s| dist(s, p) >= 2.0 / big_n)
            });
            if p.re().abs() <= big_n && clear {
                count += 1;
            }
        }
        if j + 1 < n {
            w = fwd(etas[j], w);
        }
    }
    count
}

#[test]
fn sufficient_set_matches_recomputation() {
    let cfg = DriverConfig::iid_uniform(1.0, 1.5, 21);
    let n = 16;
    let seq = sample_sequence(&cfg, n).unwrap();
    let table = SingularTable::build(&seq.etas, n).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut total = 0;
    for _ in 0..1000 {
        let z = CylPoint::new(rng.gen_range(-3.0..3.0), rng.gen_range(0.0..TAU)).unwrap();
        let big_n = [1.5, 3.0, 6.0][rng.gen_range(0..3)];
        let got = radial_density(&seq, &table, z, big_n, n).unwrap();
        let want = oracle_count(&seq.etas, z, big_n, n);
        assert_eq!(got.counted, want, "z = {z:?}, N = {big_n}");
        total += want;
    }
    // the check is not vacuous
    assert!(total > 1000);
}

#[test]
fn density_grows_with_n() {
    let cfg = DriverConfig::iid_uniform(1.0, 1.2, 5);
    let seq = sample_sequence(&cfg, 30).unwrap();
    let table = SingularTable::build(&seq.etas, 30).unwrap();
    for re in [-2.0, -0.5, 0.3, 1.1] {
        let z = CylPoint::new(re, 1.7).unwrap();
        let mut last = 0.0;
        for big_n in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let d = radial_density(&seq, &table, z, big_n, 30).unwrap().density;
            assert!(d >= last, "N = {big_n}: {d} < {last}");
            last = d;
        }
    }
}

#[test]
fn scan_fraction_monotone_in_delta() {
    let cfg = DriverConfig::iid_uniform(1.0, 1.2, 8);
    let seq = sample_sequence(&cfg, 40).unwrap();
    let grid = ScanGrid { m: 3.0, n_re: 30, n_im: 30 };
    let mut last = 0.0;
    for delta in [0.02, 0.05, 0.1, 0.2, 0.4] {
        let f = typical_scan(&seq, &grid, 40, delta).unwrap().fraction_satisfying;
        assert!((0.0..=1.0).contains(&f));
        assert!(f >= last, "δ = {delta}: {f} < {last}");
        last = f;
    }
}

#[test]
fn raster_is_deterministic_and_fractal() {
    let seq = sample_sequence(&DriverConfig::constant(1.0), 40).unwrap();
    let window = RasterWindow {
        re_min: -2.0,
        re_max: 2.0,
        im_min: 0.0,
        im_max: TAU,
        width: 96,
        height: 96,
    };
    let a = expansion_raster(&seq, &window, 40, 1e6).unwrap();
    let b = expansion_raster(&seq, &window, 40, 1e6).unwrap();
    assert_eq!(a.index, b.index);
    let mut pa = Vec::new();
    let mut pb = Vec::new();
    a.write_pgm(&mut pa).unwrap();
    b.write_pgm(&mut pb).unwrap();
    assert_eq!(pa, pb);
    assert!(pa.starts_with(b"P5\n96 96\n255\n"));
    assert_eq!(pa.len(), b"P5\n96 96\n255\n".len() + 96 * 96);
    assert!(a.neighbor_disagreement() >= 0.05, "{}", a.neighbor_disagreement());
}

#[test]
fn raster_rejects_bad_windows() {
    let seq = sample_sequence(&DriverConfig::constant(1.0), 5).unwrap();
    let flipped = RasterWindow {
        re_min: 1.0,
        re_max: -1.0,
        im_min: 0.0,
        im_max: 1.0,
        width: 4,
        height: 4,
    };
    assert!(expansion_raster(&seq, &flipped, 5, 1e6).is_err());
    let huge = RasterWindow {
        re_min: -1.0,
        re_max: 1.0,
        im_min: 0.0,
        im_max: 1.0,
        width: 100_000,
        height: 4,
    };
    assert!(expansion_raster(&seq, &huge, 5, 1e6).is_err());
}
