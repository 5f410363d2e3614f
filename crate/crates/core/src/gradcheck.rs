//! Central finite-difference check of tape gradients.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::format;

use crate::error::{Error, Result};
use crate::params::{BoundParams, Grads, ParamId, ParamSet};
use crate::tape::{Tape, Var};

/// Relative-error denominators are floored here.
pub const REL_ERR_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Number of parameter elements compared.
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Tape gradients of `loss_fn` for every trainable tensor of `params`.
pub fn analytic_gradients<F>(params: &ParamSet, loss_fn: &F) -> Result<Grads>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = loss_fn(&mut tape, &bound)?;
    tape.backward(loss)?;
    let mut grads = Grads::zeros_like(params);
    grads.accumulate(&tape, &bound, 1.0);
    Ok(grads)
}

/// Evaluates `loss_fn` without recording gradients.
pub fn evaluate<F>(params: &ParamSet, loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = tape.no_grad(|t| {
        let bound = params.bind(t);
        Ok(vec![loss_fn(t, &bound)?])
    })?;
    Ok(tape.value(out[0]).item())
}

/// Compares `analytic` against the fourth-order central difference
/// `(−f(θ+2ε) + 8f(θ+ε) − 8f(θ−ε) + f(θ−2ε)) / 12ε` for every trainable
/// element and reports the worst relative error.
pub fn compare_with_finite_differences<F>(
    params: &ParamSet,
    eps: f64,
    analytic: &Grads,
    loss_fn: &F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::config(format!("finite-difference eps {eps} outside [1e-7, 1e-3]")));
    }
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for i in 0..params.len() {
        let id = ParamId(i);
        let Some(grad) = analytic.get(id) else { continue };
        let name = params.get(id).name.clone();
        let non_finite = || Error::GradCheckNonFinite { param: name.to_string() };
        for j in 0..grad.numel() {
            let original = work.value(id).data()[j];
            let mut probe = |offset: f64| -> Result<f64> {
                work.value_mut(id).data_mut()[j] = original + offset;
                let f = evaluate(&work, loss_fn).map_err(|_| non_finite())?;
                f.is_finite().then_some(f).ok_or_else(non_finite)
            };
            let (p2, p1, m1, m2) = (probe(2.0 * eps), probe(eps), probe(-eps), probe(-2.0 * eps));
            work.value_mut(id).data_mut()[j] = original;
            let numeric = (8.0 * (p1? - m1?) - (p2? - m2?)) / (12.0 * eps);
            let a = grad.data()[j];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_err || report.worst_param.is_empty() {
                report.max_rel_err = err;
                report.worst_param = name.clone();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Full check: tape gradients versus central differences.
pub fn grad_check<F>(params: &ParamSet, eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let analytic = analytic_gradients(params, &loss_fn)?;
    compare_with_finite_differences(params, eps, &analytic, &loss_fn)
}
