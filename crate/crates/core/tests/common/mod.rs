#![allow(dead_code)]

use std::f64::consts::TAU;

/// Neumaier-compensated accumulator.
#[derive(Default)]
pub struct Sum {
    s: f64,
    c: f64,
}

impl Sum {
    pub fn add(&mut self, v: f64) {
        let t = self.s + v;
        if self.s.abs() >= v.abs() {
            self.c += (self.s - t) + v;
        } else {
            self.c += (v - t) + self.s;
        }
        self.s = t;
    }

    pub fn value(&self) -> f64 {
        self.s + self.c
    }
}

/// `sum_{k=1}^{n} |z + 2πik|^{-t} + |z - 2πik|^{-t}` walked from the far end.
/// Consecutive terms differ by `(1 + ε)^{-t/2}` with `|ε| < 1e-4`, evaluated
/// by a short binomial series; an exact `powf` re-anchors every 1000 terms.
fn both_sides(t: f64, x: f64, y: f64, n: u64) -> f64 {
    const EXACT_BELOW: u64 = 20_000;
    let h = -t / 2.0;
    let q = |k: u64, sign: f64| {
        let u = y + sign * TAU * k as f64;
        x * x + u * u
    };
    let mut coef = [0.0; 4];
    let mut c = 1.0;
    for (i, slot) in coef.iter_mut().enumerate() {
        c *= (h - i as f64) / (i as f64 + 1.0);
        *slot = c;
    }
    let series = |e: f64| 1.0 + e * (coef[0] + e * (coef[1] + e * (coef[2] + e * coef[3])));
    let mut acc = Sum::default();
    let mut k = n;
    while k >= EXACT_BELOW {
        let stop = k.saturating_sub(1000).max(EXACT_BELOW);
        let (mut a1, mut a2) = (q(k, 1.0), q(k, -1.0));
        let (mut t1, mut t2) = (a1.powf(h), a2.powf(h));
        let mut block = t1 + t2;
        for j in (stop..k).rev() {
            let (b1, b2) = (q(j, 1.0), q(j, -1.0));
            t1 *= series((b1 - a1) / a1);
            t2 *= series((b2 - a2) / a2);
            block += t1 + t2;
            a1 = b1;
            a2 = b2;
        }
        acc.add(block);
        k = stop - 1;
    }
    for j in (1..=k).rev() {
        acc.add(q(j, 1.0).powf(h) + q(j, -1.0).powf(h));
    }
    acc.value()
}

/// `∫_{K+1/2}^∞ (x² + (y ± 2πs)²)^{-t/2} ds` from the expansion in `x²/u²`.
fn integral_tail(t: f64, x: f64, y: f64, k: u64, sign: f64) -> f64 {
    let u0 = (sign * y + TAU * (k as f64 + 0.5)).abs();
    let lead = u0.powf(1.0 - t) / (t - 1.0);
    let corr = t / 2.0 * x * x * u0.powf(-1.0 - t) / (t + 1.0);
    (lead - corr) / TAU
}

/// `sum_k |z + 2πik|^{-t}` with `z = x + iy`, skipping a zero term.
pub fn lattice_oracle(t: f64, x: f64, y: f64, k_brute: u64) -> f64 {
    let mut s = Sum::default();
    s.add(integral_tail(t, x, y, k_brute, 1.0));
    s.add(integral_tail(t, x, y, k_brute, -1.0));
    s.add(both_sides(t, x, y, k_brute));
    let r2 = x * x + y * y;
    if r2 > 0.0 {
        s.add(r2.powf(-t / 2.0));
    }
    s.value()
}
