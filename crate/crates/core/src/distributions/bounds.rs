//! Closed-form quantile brackets for the discrete folded normal, and the
//! search that turns a bracket into the exact integer quantile.
//!
//! The folded normal only depends on `|μ|`, so every bound below works with
//! the magnitude of the location parameter.

use crate::error::{AmpError, Result};
use crate::special::{normal_cdf, normal_quantile};

pub(crate) fn check_level(c: f64) -> Result<()> {
    if c > 0.0 && c < 1.0 {
        Ok(())
    } else {
        Err(AmpError::contract(format!(
            "quantile level must lie in (0, 1), got {c}"
        )))
    }
}

/// Lower bound from the Gaussian c.d.f., which dominates the folded one:
/// `⌊x_G⌋ − 1` clamped at zero.
pub fn dfn_lower_bound(mu: f64, sigma: f64, c: f64) -> usize {
    let x_gauss = mu.abs() + sigma * normal_quantile(c);
    let lower = x_gauss.floor() - 1.0;
    if lower <= 0.0 {
        0
    } else {
        lower as usize
    }
}

/// Chernoff bound on the folded-normal tail with `t = 1/σ`, shifted by one
/// for the discrete version.
pub fn dfn_upper_bound(mu: f64, sigma: f64, c: f64) -> usize {
    let m = mu.abs();
    let r = m / sigma;
    let k = 0.5f64.exp() * (normal_cdf(r + 1.0) + normal_cdf(1.0 - r) * (-2.0 * r).exp());
    let x = m + sigma * k.ln() - sigma * (1.0 - c).ln();
    let upper = x.ceil() - 1.0;
    if upper <= 0.0 {
        0
    } else {
        upper as usize
    }
}

/// `(lower, upper)` with `upper` clamped to be at least `lower`.
pub fn dfn_quantile_bounds(mu: f64, sigma: f64, c: f64) -> Result<(usize, usize)> {
    check_level(c)?;
    if !(sigma > 0.0) {
        return Err(AmpError::contract(format!("σ must be positive, got {sigma}")));
    }
    let lower = dfn_lower_bound(mu, sigma, c);
    let upper = dfn_upper_bound(mu, sigma, c).max(lower);
    Ok((lower, upper))
}

/// Smallest `x` in `[lower, upper]` with `cmf(x) ≥ c`.
///
/// If rounding leaves `cmf(upper)` a hair below `c`, the bracket is widened
/// upward until the predicate holds.
pub fn binary_search_quantile(
    cmf: impl Fn(usize) -> f64,
    c: f64,
    lower: usize,
    mut upper: usize,
) -> usize {
    while cmf(upper) < c {
        upper = upper * 2 + 1;
    }
    let (mut lo, mut hi) = (lower, upper);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if cmf(mid) >= c {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_must_be_open_unit_interval() {
        assert!(dfn_quantile_bounds(1.0, 1.0, 0.0).is_err());
        assert!(dfn_quantile_bounds(1.0, 1.0, 1.0).is_err());
        assert!(dfn_quantile_bounds(1.0, 0.0, 0.5).is_err());
    }

    #[test]
    fn search_finds_first_crossing() {
        let cmf = |x: usize| 1.0 - 0.5f64.powi(x as i32 + 1);
        // cmf: 0.5, 0.75, 0.875, 0.9375, ...
        assert_eq!(binary_search_quantile(cmf, 0.9, 0, 10), 3);
        assert_eq!(binary_search_quantile(cmf, 0.5, 0, 10), 0);
        // bracket too small on the right is widened
        assert_eq!(binary_search_quantile(cmf, 0.99, 0, 2), 6);
    }
}
