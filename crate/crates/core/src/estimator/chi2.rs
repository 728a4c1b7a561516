//! Chi-squared distribution through the regularized incomplete gamma function.

use crate::error::{invalid, Result};

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_TERMS: usize = 100_000;

/// ln Γ(a) for a > 0.
pub fn ln_gamma(a: f64) -> f64 {
    if a < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * a).sin()).ln() - ln_gamma(1.0 - a);
    }
    let a = a - 1.0;
    let mut s = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        s += c / (a + i as f64);
    }
    let t = a + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (a + 0.5) * t.ln() - t + s.ln()
}

fn prefactor(a: f64, x: f64) -> f64 {
    (a * x.ln() - x - ln_gamma(a)).exp()
}

fn lower_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_TERMS {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * prefactor(a, x)
}

fn upper_fraction(a: f64, x: f64) -> f64 {
    // modified Lentz on the continued fraction for Q(a, x)
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_TERMS {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    prefactor(a, x) * h
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x.is_infinite() {
        1.0
    } else if x < a + 1.0 {
        lower_series(a, x).min(1.0)
    } else {
        (1.0 - upper_fraction(a, x)).max(0.0)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x), evaluated directly.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x.is_infinite() {
        0.0
    } else if x < a + 1.0 {
        (1.0 - lower_series(a, x)).max(0.0)
    } else {
        upper_fraction(a, x).min(1.0)
    }
}

fn check(k: usize, x: f64) -> Result<()> {
    if k < 1 {
        return Err(invalid("chi-squared degrees of freedom must be >= 1"));
    }
    if x.is_nan() || x < 0.0 {
        return Err(invalid(format!("chi-squared argument {x} must be >= 0")));
    }
    Ok(())
}

/// P(X <= x) for X ~ chi-squared(k).
pub fn chi_squared_cdf(k: usize, x: f64) -> Result<f64> {
    check(k, x)?;
    Ok(gamma_p(k as f64 / 2.0, x / 2.0))
}

/// Goodness-of-fit confidence `1 - F_dof(J)`: 1 for a perfect fit, tending to 0 as J grows.
pub fn chi_squared_confidence(j: f64, dof: usize) -> Result<f64> {
    check(dof, j)?;
    Ok(gamma_q(dof as f64 / 2.0, j / 2.0))
}
