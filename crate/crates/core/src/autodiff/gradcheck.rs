use super::{Parameter, Tape, Tensor, Var};
use crate::error::Result;

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Magnitude below which discrepancies are measured absolutely rather than
/// relatively, so gradients that are legitimately ~0 do not blow up the ratio.
pub const REL_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub tolerance: f64,
    pub passed: bool,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of a scalar function against central finite
/// differences at `point`.
///
/// Evaluation errors and NaN discrepancies count as failures rather than
/// being propagated. A point sitting on a relu kink will usually fail: the
/// tape reports the 0 subgradient while the finite difference straddles
/// both slopes.
pub fn grad_check<F>(f: F, point: &Tensor, tolerance: f64) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let failed = |analytic: Vec<f64>, numeric: Vec<f64>| GradCheckReport {
        max_rel_error: f64::NAN,
        worst_index: None,
        tolerance,
        passed: false,
        analytic,
        numeric,
    };

    let analytic = match tape_gradient(&f, point) {
        Ok(g) => g,
        Err(_) => return failed(vec![], vec![]),
    };

    let mut numeric = Vec::with_capacity(point.numel());
    for i in 0..point.numel() {
        let eval = |delta: f64| -> Result<f64> {
            let mut p = point.clone();
            p.data_mut()[i] += delta;
            let tape = Tape::new();
            let x = tape.leaf(p);
            Ok(f(&tape, x)?.item())
        };
        match (eval(FD_STEP), eval(-FD_STEP)) {
            (Ok(hi), Ok(lo)) => numeric.push((hi - lo) / (2.0 * FD_STEP)),
            _ => return failed(analytic, numeric),
        }
    }

    let mut max_rel_error = 0.0f64;
    let mut worst_index = None;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a, n);
        if e.is_nan() {
            return GradCheckReport {
                worst_index: Some(i),
                ..failed(analytic, numeric)
            };
        }
        if e > max_rel_error || worst_index.is_none() {
            max_rel_error = max_rel_error.max(e);
            worst_index = Some(i);
        }
    }
    GradCheckReport {
        max_rel_error,
        worst_index,
        tolerance,
        passed: max_rel_error < tolerance,
        analytic,
        numeric,
    }
}

fn tape_gradient<F>(f: &F, point: &Tensor) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&tape, x)?;
    let grads = tape.backward(y)?;
    Ok(grads
        .wrt(x)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; point.numel()]))
}

/// Finite-difference check of named-parameter gradients on a whole model.
///
/// `loss` builds a scalar on a fresh tape from a model value; `params`
/// exposes the parameters to perturb. Every entry of every parameter is
/// perturbed by ±[`FD_STEP`].
pub fn param_grad_check<M, P, L>(model: &M, params: P, loss: L, tolerance: f64) -> GradCheckReport
where
    M: Clone,
    P: Fn(&mut M) -> Vec<&mut Parameter>,
    L: for<'t> Fn(&'t Tape, &M) -> Result<Var<'t>>,
{
    let failed = GradCheckReport {
        max_rel_error: f64::NAN,
        worst_index: None,
        tolerance,
        passed: false,
        analytic: vec![],
        numeric: vec![],
    };
    let mut with_grads = model.clone();
    for p in params(&mut with_grads) {
        p.zero_grad();
    }
    {
        let tape = Tape::new();
        let Ok(out) = loss(&tape, &with_grads) else {
            return failed;
        };
        let Ok(g) = tape.backward(out) else {
            return failed;
        };
        g.accumulate_into(params(&mut with_grads));
    }
    let analytic: Vec<f64> = params(&mut with_grads)
        .iter()
        .flat_map(|p| p.grad.data().to_vec())
        .collect();

    let eval = |pi: usize, k: usize, delta: f64| -> Result<f64> {
        let mut m = model.clone();
        params(&mut m)[pi].value.data_mut()[k] += delta;
        let tape = Tape::new();
        Ok(loss(&tape, &m)?.item())
    };
    let sizes: Vec<usize> = params(&mut model.clone()).iter().map(|p| p.numel()).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for (pi, &size) in sizes.iter().enumerate() {
        for k in 0..size {
            match (eval(pi, k, FD_STEP), eval(pi, k, -FD_STEP)) {
                (Ok(hi), Ok(lo)) => numeric.push((hi - lo) / (2.0 * FD_STEP)),
                _ => return failed,
            }
        }
    }

    let mut max_rel_error = 0.0f64;
    let mut worst_index = None;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = relative_error(a, n);
        if e.is_nan() {
            return GradCheckReport {
                worst_index: Some(i),
                analytic,
                numeric,
                ..failed
            };
        }
        if e > max_rel_error || worst_index.is_none() {
            max_rel_error = max_rel_error.max(e);
            worst_index = Some(i);
        }
    }
    GradCheckReport {
        max_rel_error,
        worst_index,
        tolerance,
        passed: max_rel_error < tolerance,
        analytic,
        numeric,
    }
}
