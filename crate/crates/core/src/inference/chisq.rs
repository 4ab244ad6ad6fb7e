//! Chi-square distribution via the regularized incomplete gamma function.

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Series for `P(a, x)`, valid for `x < a + 1`.
fn lower_series(a: f64, x: f64) -> f64 {
    let mut sum = 1.0 / a;
    let mut term = sum;
    let mut ap = a;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

/// Continued fraction for `Q(a, x)`, valid for `x ≥ a + 1` (modified Lentz).
fn upper_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
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
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x < a + 1.0 {
        lower_series(a, x)
    } else {
        1.0 - upper_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x < a + 1.0 {
        1.0 - lower_series(a, x)
    } else {
        upper_fraction(a, x)
    }
}

fn check(x: f64, df: u32) -> Result<()> {
    if df == 0 || !(x >= 0.0) {
        return Err(Error::Domain(format!(
            "chi-square needs x ≥ 0 and df ≥ 1 (x = {x}, df = {df})"
        )));
    }
    Ok(())
}

/// `P(χ²(df) ≤ x)`.
pub fn chisq_cdf(x: f64, df: u32) -> Result<f64> {
    check(x, df)?;
    if x.is_infinite() {
        return Ok(1.0);
    }
    Ok(gamma_p(df as f64 / 2.0, x / 2.0))
}

/// Upper tail `P(χ²(df) > x)`, computed directly for accuracy in the tail.
pub fn chisq_sf(x: f64, df: u32) -> Result<f64> {
    check(x, df)?;
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_q(df as f64 / 2.0, x / 2.0))
}

/// Inverse CDF by bracketing and bisection on the CDF.
pub fn chisq_quantile(p: f64, df: u32) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) || df == 0 {
        return Err(Error::Domain(format!(
            "chi-square quantile needs 0 < p < 1 and df ≥ 1 (p = {p}, df = {df})"
        )));
    }
    let cdf = |x: f64| gamma_p(df as f64 / 2.0, x / 2.0);
    let mut lo = 0.0;
    let mut hi = (df as f64).max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn cdf_at_zero() {
        for k in [1, 2, 14, 29, 179] {
            assert_eq!(chisq_cdf(0.0, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_degrees_of_freedom_closed_form() {
        // χ²(2) is exponential with mean 2
        for &x in &[0.1, 1.0, 3.0, 10.0, 40.0] {
            let exact = 1.0 - (-x / 2.0f64).exp();
            assert!((chisq_cdf(x, 2).unwrap() - exact).abs() < 1e-14);
            assert!((chisq_sf(x, 2).unwrap() - (-x / 2.0f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(chisq_cdf(-1.0, 3).is_err());
        assert!(chisq_cdf(1.0, 0).is_err());
        assert!(chisq_quantile(1.0, 3).is_err());
        assert!(chisq_quantile(0.0, 3).is_err());
    }

    #[test]
    fn cdf_decreasing_in_df() {
        for &x in &[0.5, 3.0, 12.0, 40.0] {
            let mut prev = 1.0;
            for df in 1..60 {
                let c = chisq_cdf(x, df).unwrap();
                assert!(c <= prev + 1e-15);
                prev = c;
            }
        }
    }
}
