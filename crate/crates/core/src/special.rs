//! Scalar special functions shared by the tape and the depth distributions.

use std::f64::consts::SQRT_2;

pub fn erf(x: f64) -> f64 {
    statrs::function::erf::erf(x)
}

pub fn erfc(x: f64) -> f64 {
    statrs::function::erf::erfc(x)
}

/// `½(erf(b) − erf(a))` for `a ≤ b`, switching to `erfc` differences when
/// both ends sit in the same tail so that tiny masses keep their relative
/// precision.
pub fn erf_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (erfc(a) - erfc(b))
    } else if b <= 0.0 {
        0.5 * (erfc(-b) - erfc(-a))
    } else {
        0.5 * (erf(b) - erf(a))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal c.d.f.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Inverse of the standard normal c.d.f. for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    SQRT_2 * statrs::function::erf::erf_inv(2.0 * p - 1.0)
}

/// `ln(x!)` by direct summation; exact enough for the small integers used
/// as layer indices.
pub fn ln_factorial(x: usize) -> f64 {
    (2..=x).map(|i| (i as f64).ln()).sum()
}
