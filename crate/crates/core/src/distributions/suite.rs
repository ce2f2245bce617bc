use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LayerVariational;
use crate::error::Result;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantileSuiteReport {
    pub dfn_cases: usize,
    pub mixture_cases: usize,
    /// Cases where the scanned quantile fell outside the closed-form bracket.
    pub bracket_violations: usize,
    /// Cases where the bracketed binary search disagreed with the scan.
    pub search_mismatches: usize,
}

impl QuantileSuiteReport {
    pub fn passed(&self) -> bool {
        self.bracket_violations == 0 && self.search_mismatches == 0
    }
}

/// Linear scan for `min {x : cmf(x) ≥ c}`.
pub fn scan_quantile(d: &LayerVariational, c: f64) -> usize {
    (0..).find(|&x| d.cmf(x) >= c).expect("cmf reaches every level below 1")
}

/// Random folded-normal and two-component mixture parameterizations,
/// each checked against the scan.
pub fn quantile_suite(dfn_cases: usize, mixture_cases: usize, seed: u64) -> Result<QuantileSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = QuantileSuiteReport {
        dfn_cases,
        mixture_cases,
        ..Default::default()
    };
    let levels = [0.9, 0.95, 0.99, 0.999];
    for i in 0..dfn_cases + mixture_cases {
        let c = levels[rng.random_range(0..levels.len())];
        let comp = |rng: &mut ChaCha8Rng| (rng.random_range(0.0..30.0), rng.random_range(0.3..15.0));
        let d = if i < dfn_cases {
            let (mu, sigma) = comp(&mut rng);
            LayerVariational::folded_normal(mu, sigma, c)?
        } else {
            let (m1, s1) = comp(&mut rng);
            let (m2, s2) = comp(&mut rng);
            let w = rng.random_range(0.05..0.95);
            LayerVariational::mixture(&[(m1, s1, w), (m2, s2, 1.0 - w)], c)?
        };
        let q = scan_quantile(&d, c);
        let (lo, hi) = d.quantile_bounds(c)?;
        report.bracket_violations += usize::from(!(lo <= q && q <= hi));
        report.search_mismatches += usize::from(d.quantile(c)? != q);
    }
    Ok(report)
}
