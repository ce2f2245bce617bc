use proptest::prelude::*;

use super::*;
use crate::autodiff::relative_error;

/// Independent erf: Maclaurin series `2/√π · e^{−x²} Σ 2ⁿ x^{2n+1} / (2n+1)!!`,
/// summed until terms vanish. Good to ~1e-15 for |x| ≤ 4.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-18 * sum.abs().max(1e-300) {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
}

fn scan_quantile(d: &LayerVariational, c: f64) -> usize {
    (0..).find(|&x| d.cmf(x) >= c).unwrap()
}

#[test]
fn random_quantile_suite_passes() {
    let r = quantile_suite(200, 100, 31).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn dfn_pmf_at_zero_matches_series_oracle() {
    let d = LayerVariational::folded_normal(1.0, 5.0, 0.99).unwrap();
    let s = 5.0 * SQRT_2;
    let oracle = 0.5 * (erf_series((1.0 - 1.0) / s) + erf_series((1.0 + 1.0) / s));
    assert!((d.pmf(0) - oracle).abs() < 1e-14);
    assert!((d.pmf(0) - 0.1554).abs() < 5e-5, "{}", d.pmf(0));
}

#[test]
fn poisson_examples() {
    let d = LayerVariational::poisson(10.0, 0.99).unwrap();
    let total: f64 = (0..=60).map(|x| d.pmf(x)).sum();
    assert!(total > 1.0 - 1e-12);
    assert!((d.cmf(9) - 0.4579).abs() < 5e-5, "{}", d.cmf(9));

    // scan oracle by the pmf recurrence p(x) = p(x−1)·rate/x
    let mut p = (-10.0f64).exp();
    let mut acc = p;
    let mut x = 0;
    while acc < 0.99 {
        x += 1;
        p *= 10.0 / x as f64;
        acc += p;
    }
    assert_eq!(x, 18);
    assert_eq!(d.quantile(0.99).unwrap(), x);
    assert_eq!(d.support(), x + 1);

    let w = d.renormalized_weights();
    assert_eq!(w.len(), x + 1);
    let ratio = w[5] / w[4];
    assert!((ratio - 10.0 / 5.0).abs() < 1e-12);
}

#[test]
fn degenerate_mixture_matches_component() {
    let single = LayerVariational::folded_normal(4.0, 2.0, 0.99).unwrap();
    let mix = LayerVariational::mixture(&[(4.0, 2.0, 1.0)], 0.99).unwrap();
    for x in 0..20 {
        assert_eq!(mix.pmf(x), single.pmf(x));
    }
    assert_eq!(
        mix.quantile_bounds(0.99).unwrap(),
        single.quantile_bounds(0.99).unwrap()
    );
}

#[test]
fn bounds_bracket_scan_for_documented_case() {
    let d = LayerVariational::folded_normal(10.0, 5.0, 0.99).unwrap();
    let (lo, hi) = d.quantile_bounds(0.99).unwrap();
    let q = scan_quantile(&d, 0.99);
    assert!(lo <= q && q <= hi, "{lo} {q} {hi}");
    assert_eq!(d.quantile(0.99).unwrap(), q);
}

#[test]
fn quantile_level_validated() {
    let d = LayerVariational::folded_normal(1.0, 1.0, 0.99).unwrap();
    assert!(d.quantile_bounds(1.0).is_err());
    assert!(d.quantile(0.0).is_err());
    assert!(LayerVariational::folded_normal(1.0, 1.0, 1.5).is_err());
    assert!(LayerVariational::poisson(-1.0, 0.9).is_err());
}

#[test]
fn near_delta_truncates_to_one_layer() {
    // all mass on x = 0, i.e. layer 1
    let d = LayerVariational::folded_normal(0.5, 1e-3, 0.99).unwrap();
    assert_eq!(d.support(), 1);
    assert_eq!(d.renormalized_weights(), vec![1.0]);

    // μ = 1 sits on the boundary between x = 0 and x = 1
    let d = LayerVariational::folded_normal(1.0, 1e-3, 0.99).unwrap();
    assert!((d.pmf(0) - 0.5).abs() < 1e-12);
    assert_eq!(d.support(), 2);
}

#[test]
fn near_delta_at_three_gives_one_hot() {
    let d = LayerVariational::folded_normal(2.5, 1e-3, 0.99).unwrap();
    let w = d.renormalized_weights();
    assert_eq!(w.len(), 3);
    assert!((w[2] - 1.0).abs() < 1e-12);
    let tape = Tape::new();
    let (h, p) = depth_elbo_terms(&tape, &d, &LayerPrior::Uninformative).unwrap();
    assert!(h.item().abs() < 1e-9);
    assert_eq!(p.item(), 0.0);
}

#[test]
fn entropy_matches_direct_sum() {
    let d = LayerVariational::poisson(10.0, 0.99).unwrap();
    let w = d.renormalized_weights();
    let direct: f64 = -w.iter().map(|p| p * p.ln()).sum::<f64>();
    let tape = Tape::new();
    let prior = LayerPrior::Poisson { rate: 5.0 };
    let (h, p) = depth_elbo_terms(&tape, &d, &prior).unwrap();
    assert!((h.item() - direct).abs() < 1e-12);
    let direct_prior: f64 = w
        .iter()
        .enumerate()
        .map(|(i, q)| q * prior.ln_prob(i + 1).unwrap())
        .sum();
    assert!((p.item() - direct_prior).abs() < 1e-12);
}

#[test]
fn tape_weights_match_plain_weights() {
    let cases = [
        LayerVariational::poisson(7.0, 0.99).unwrap(),
        LayerVariational::folded_normal(6.0, 2.5, 0.99).unwrap(),
        LayerVariational::mixture(&[(5.0, 3.0, 0.3), (15.0, 3.0, 0.7)], 0.99).unwrap(),
        LayerVariational::fixed(4).unwrap(),
    ];
    for d in cases {
        let tape = Tape::new();
        let v = d.layer_weights(&tape).unwrap().value();
        let plain = d.renormalized_weights();
        assert_eq!(v.numel(), d.support());
        for (a, b) in v.data().iter().zip(&plain) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((plain.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn fixed_family_is_one_hot() {
    let d = LayerVariational::fixed(3).unwrap();
    assert_eq!(d.support(), 3);
    assert_eq!(d.renormalized_weights(), vec![0.0, 0.0, 1.0]);
    assert!(d.parameters().is_empty());
}

#[test]
fn growth_cap_is_reported() {
    let mut d = LayerVariational::poisson(10.0, 0.99).unwrap().with_max_support(10);
    assert!(matches!(d.truncate(), Err(AmpError::GrowthCap { cap: 10 })));
}

#[test]
fn serde_round_trip() {
    let d = LayerVariational::mixture(&[(5.0, 3.0, 0.5), (15.0, 3.0, 0.5)], 0.99).unwrap();
    let s = serde_json::to_string(&d).unwrap();
    let back: LayerVariational = serde_json::from_str(&s).unwrap();
    assert_eq!(back, d);
}

/// Analytic gradient of `Σ_x coef_x · pmf(x)` w.r.t. every parameter entry
/// against central differences of the plain f64 pmf.
fn check_pmf_gradients(d: &LayerVariational, tol: f64) {
    let n = d.support();
    let coef: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * i as f64).collect();
    let tape = Tape::new();
    let raw = d.support_pmf(&tape).unwrap();
    let obj = raw
        .mul(tape.constant(Tensor::vector(coef.clone()).unwrap()))
        .unwrap()
        .sum()
        .unwrap();
    let grads = tape.backward(obj).unwrap();
    let mut analytic = d.clone();
    grads.accumulate_into(analytic.parameters_mut());

    let f = |d: &LayerVariational| -> f64 { (0..n).map(|x| coef[x] * d.pmf(x)).sum() };
    let h = 1e-6;
    for (pi, p) in analytic.parameters().iter().enumerate() {
        for k in 0..p.numel() {
            let mut hi = d.clone();
            hi.parameters_mut()[pi].value.data_mut()[k] += h;
            let mut lo = d.clone();
            lo.parameters_mut()[pi].value.data_mut()[k] -= h;
            let numeric = (f(&hi) - f(&lo)) / (2.0 * h);
            let a = p.grad.data()[k];
            let e = relative_error(a, numeric);
            assert!(e < tol, "{} [{k}]: analytic {a} numeric {numeric}", p.name());
        }
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    check_pmf_gradients(&LayerVariational::poisson(6.0, 0.99).unwrap(), 1e-5);
    check_pmf_gradients(&LayerVariational::folded_normal(4.0, 2.0, 0.99).unwrap(), 1e-5);
    check_pmf_gradients(
        &LayerVariational::mixture(&[(3.0, 1.5, 0.4), (9.0, 2.0, 0.6)], 0.99).unwrap(),
        1e-5,
    );
}

#[test]
fn mode_can_be_placed_at_any_layer() {
    let argmax = |d: &LayerVariational| {
        let w = d.renormalized_weights();
        let best = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        w.iter().position(|&p| p == best).unwrap()
    };
    for l in 1..=50usize {
        // layer l owns the unit interval [l − 1, l); centring μ there gives
        // a strict mode
        let d = LayerVariational::folded_normal(l as f64 - 0.5, 0.5, 0.99).unwrap();
        assert_eq!(argmax(&d) + 1, l);

        // μ = l sits on the boundary and splits the peak between layers l
        // and l + 1 (exactly, once the folded tail is negligible)
        let d = LayerVariational::folded_normal(l as f64, 0.5, 0.99).unwrap();
        let w = d.renormalized_weights();
        if l >= 4 {
            assert!((w[l - 1] - w[l]).abs() < 1e-12);
        }
        assert!(argmax(&d) + 1 == l || argmax(&d) + 1 == l + 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dfn_bounds_sandwich_scan(
        mu in 0.0f64..30.0,
        sigma in 0.5f64..15.0,
        ci in 0usize..3,
    ) {
        let c = [0.9, 0.99, 0.999][ci];
        let d = LayerVariational::folded_normal(mu, sigma, c).unwrap();
        let (lo, hi) = d.quantile_bounds(c).unwrap();
        let q = scan_quantile(&d, c);
        prop_assert!(lo <= q && q <= hi, "lo={} q={} hi={}", lo, q, hi);
        prop_assert_eq!(d.quantile(c).unwrap(), q);
        prop_assert_eq!(d.support(), q + 1);
    }

    #[test]
    fn mixture_bounds_sandwich_scan(
        mu1 in 0.0f64..30.0, s1 in 0.5f64..15.0,
        mu2 in 0.0f64..30.0, s2 in 0.5f64..15.0,
        w in 0.05f64..0.95,
        ci in 0usize..3,
    ) {
        let c = [0.9, 0.99, 0.999][ci];
        let d = LayerVariational::mixture(&[(mu1, s1, w), (mu2, s2, 1.0 - w)], c).unwrap();
        let (lo, hi) = d.quantile_bounds(c).unwrap();
        let q = scan_quantile(&d, c);
        prop_assert!(lo <= q && q <= hi, "lo={} q={} hi={}", lo, q, hi);
        prop_assert_eq!(d.quantile(c).unwrap(), q);
    }

    #[test]
    fn cmf_is_monotone_and_matches_partial_sums(
        mu in -5.0f64..30.0,
        sigma in 0.3f64..15.0,
    ) {
        let d = LayerVariational::folded_normal(mu, sigma, 0.99).unwrap();
        let mut acc = 0.0;
        let mut prev = 0.0;
        for x in 0..=100 {
            acc += d.pmf(x);
            let c = d.cmf(x);
            prop_assert!(c >= prev);
            prop_assert!((c - acc).abs() < 1e-10);
            prev = c;
        }
    }

    #[test]
    fn weights_always_sum_to_one(rate in 0.5f64..40.0, mu in 0.0f64..30.0, sigma in 0.2f64..10.0) {
        for d in [
            LayerVariational::poisson(rate, 0.99).unwrap(),
            LayerVariational::folded_normal(mu, sigma, 0.99).unwrap(),
        ] {
            let s: f64 = d.renormalized_weights().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mixture_softmax_weights_sum_to_one(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let w = softmax(&[a, b]);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
