//! Sums of `|x + i(y + 2πk)|^{-t}` over the lattice `k ∈ Z`.
//!
//! A finite window of terms is summed directly. Each one-sided tail is
//! expanded as
//!
//! ```text
//! Σ_{n>=0} (x² + (2π(n+a))²)^{-t/2} = Σ_j C(-t/2, j) x^{2j} (2π)^{-t-2j} ζ(t+2j, a)
//! ```
//!
//! where `ζ(s, a)` is the Hurwitz zeta function, evaluated by Euler–Maclaurin
//! summation. For real `s > 1` every even derivative of `u^{-s}` is positive,
//! so the Euler–Maclaurin remainder is bounded by the first omitted term; the
//! binomial series is cut once its terms decay geometrically. Both cuts are
//! accounted for in the returned bound.

use crate::geom::TWO_PI;

/// `B_2, B_4, …, B_20`.
const BERNOULLI_EVEN: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// Smallest offset at which the asymptotic expansion is used directly.
const HURWITZ_MIN_A: f64 = 8.0;

/// Euler–Maclaurin evaluation of the Hurwitz zeta function for `s > 1`,
/// `a >= 8`, given `a^{-s}` precomputed. Returns `(value, remainder_bound)`.
fn hurwitz_asymptotic(s: f64, a: f64, a_pow_neg_s: f64) -> (f64, f64) {
    debug_assert!(s > 1.0 && a >= HURWITZ_MIN_A);
    let inv_a = 1.0 / a;
    let inv_a2 = inv_a * inv_a;
    let mut value = a_pow_neg_s * a / (s - 1.0) + 0.5 * a_pow_neg_s;
    // term_i = B_{2i}/(2i)! · s(s+1)…(s+2i-2) · a^{-s-2i+1}
    let mut rising = s; // s(s+1)…(s+2i-2)
    let mut fact = 2.0; // (2i)!
    let mut power = a_pow_neg_s * inv_a; // a^{-s-2i+1}
    let mut bound = f64::INFINITY;
    for (i, b) in BERNOULLI_EVEN.iter().enumerate() {
        let term = b / fact * rising * power;
        if term.abs() <= 1e-18 * value.abs() || i + 1 == BERNOULLI_EVEN.len() {
            // the first omitted term bounds the remainder
            bound = term.abs();
            break;
        }
        value += term;
        let m = 2.0 * i as f64 + 2.0; // 2i for the next index minus one
        rising *= (s + m - 1.0) * (s + m);
        fact *= (m + 1.0) * (m + 2.0);
        power *= inv_a2;
    }
    (value, bound)
}

/// Hurwitz zeta `ζ(s, a) = Σ_{n>=0} (n + a)^{-s}` for `s > 1`, `a > 0`.
/// Returns `(value, error_bound)`.
pub fn hurwitz_zeta(s: f64, a: f64) -> (f64, f64) {
    assert!(s > 1.0 && a > 0.0, "hurwitz_zeta needs s > 1, a > 0");
    let mut head = 0.0;
    let mut a = a;
    while a < HURWITZ_MIN_A {
        head += a.powf(-s);
        a += 1.0;
    }
    let (v, b) = hurwitz_asymptotic(s, a, a.powf(-s));
    (head + v, b)
}

/// One-sided tail `Σ_{n>=0} (x² + (2π(n + a))²)^{-t/2}` for
/// `2π a >= 2|x|` and `a >= 8`. Returns `(value, error_bound)`.
pub fn shifted_tail(t: f64, x: f64, a: f64) -> (f64, f64) {
    debug_assert!(t > 1.0);
    debug_assert!(a >= HURWITZ_MIN_A && TWO_PI * a >= 2.0 * x.abs() - 1e-9);
    let u0 = TWO_PI * a;
    let a_pow = a.powf(-t);
    let two_pi_pow = TWO_PI.powf(-t);
    // ratio of successive binomial terms before the coefficient factor
    let r = (x / u0) * (x / u0);
    let x2 = x * x;
    let inv_two_pi2 = 1.0 / (TWO_PI * TWO_PI);
    let inv_a2 = 1.0 / (a * a);

    let mut coeff = 1.0; // C(-t/2, j)
    let mut x_pow = 1.0; // x^{2j}
    let mut scale = two_pi_pow; // (2π)^{-t-2j}
    let mut a_pow_j = a_pow; // a^{-t-2j}
    let mut value = 0.0;
    let mut bound = 0.0;
    let half_t = 0.5 * t;
    for j in 0..200usize {
        let s = t + 2.0 * j as f64;
        let (z, zb) = hurwitz_asymptotic(s, a, a_pow_j);
        let w = coeff * x_pow * scale;
        let term = w * z;
        value += term;
        bound += w.abs() * zb;
        if x == 0.0 {
            break;
        }
        let jf = j as f64;
        let ratio = (half_t + jf) / (jf + 1.0); // |C(-t/2,j+1) / C(-t/2,j)|
        // ζ(s+2, a) <= ζ(s, a) / a², so later terms shrink by at least rho
        let rho = r * ratio.max(1.0);
        if rho < 1.0 && term.abs() * rho / (1.0 - rho) <= 1e-17 * value.abs() {
            bound += term.abs() * rho / (1.0 - rho);
            break;
        }
        coeff *= -(half_t + jf) / (jf + 1.0);
        x_pow *= x2;
        scale *= inv_two_pi2;
        a_pow_j *= inv_a2;
    }
    (value, bound)
}

/// Direct term `|x + i u|^{-t}`.
#[inline]
pub fn lattice_term(t: f64, x: f64, u: f64) -> f64 {
    (x * x + u * u).powf(-0.5 * t)
}

/// Smallest explicit half-width `k0` such that both tails start in the
/// convergent regime of [`shifted_tail`].
pub fn min_explicit_half_width(x: f64) -> usize {
    let need = (x.abs() / std::f64::consts::PI).ceil() + 1.0;
    (need.max(HURWITZ_MIN_A + 1.0)) as usize
}

/// `Σ_{k>=k_start} |x + i(y + 2πk)|^{-t}` with `k_start >= 0` (upper side).
pub fn upper_tail(t: f64, x: f64, y: f64, k_start: f64) -> (f64, f64) {
    shifted_tail(t, x, k_start + y / TWO_PI)
}

/// `Σ_{m>=m_start} |x + i(y - 2πm)|^{-t}` with `m_start >= 1` (lower side).
pub fn lower_tail(t: f64, x: f64, y: f64, m_start: f64) -> (f64, f64) {
    shifted_tail(t, x, m_start - y / TWO_PI)
}

/// Result of a full lattice sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSum {
    pub value: f64,
    /// Certified bound on the error of the tail evaluation.
    pub tail_bound: f64,
    /// Half-width of the explicitly summed window.
    pub k_used: usize,
    /// True when `x + iy = 0` and the `k = 0` term was left out.
    pub skipped_zero: bool,
}

/// `Σ_{k∈Z} |x + i(y + 2πk)|^{-t}` with the explicit window `|k| < k0` and
/// the two tails expanded analytically.
pub fn lattice_sum(t: f64, x: f64, y: f64, k0: usize) -> LatticeSum {
    let k0 = k0.max(min_explicit_half_width(x));
    let mut value = 0.0;
    let mut skipped_zero = false;
    // small terms first
    for k in (1..k0).rev() {
        let kf = k as f64;
        value += lattice_term(t, x, y + TWO_PI * kf);
        value += lattice_term(t, x, y - TWO_PI * kf);
    }
    if x == 0.0 && y == 0.0 {
        skipped_zero = true;
    } else {
        value += lattice_term(t, x, y);
    }
    let (up, ub) = upper_tail(t, x, y, k0 as f64);
    let (lo, lb) = lower_tail(t, x, y, k0 as f64);
    value += up + lo;
    let rounding = 4.0 * f64::EPSILON * (2 * k0 + 1) as f64 * value;
    LatticeSum {
        value,
        tail_bound: ub + lb + rounding,
        k_used: k0,
        skipped_zero,
    }
}
