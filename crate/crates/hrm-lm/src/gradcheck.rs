//! `gradcheck`: full-model tape gradients against central differences.

use hrm_lm_core::gradcheck::{analytic_gradients, compare_with_finite_differences, GradCheckReport};
use hrm_lm_core::model::anchors_at;
use hrm_lm_core::{LanguageModel, Model, Rng};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Trainable elements above which the check is refused; every element costs
/// four full forward passes.
pub const MAX_ELEMENTS: usize = 20_000;
pub const TOLERANCE: f64 = 1e-5;
/// Initialization used unless the config sets `model.init_std`. At the
/// training scale most gradients are so small that finite-difference
/// rounding dominates.
pub const DEFAULT_CHECK_STD: f64 = 0.3;

/// Step of the fourth-order stencil. Large enough that rounding in the
/// loss stays below the smallest gradients of a toy model.
pub const DEFAULT_EPS: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct GradcheckOptions {
    pub eps: Option<f64>,
    /// Negative control: scales the analytic gradient of this tensor by 1.5.
    pub corrupt: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GradcheckOutcome {
    pub report: GradCheckReport,
    pub eps: f64,
    pub init_std: f64,
    pub passed: bool,
}

pub fn gradcheck(config: &RunConfig, options: &GradcheckOptions) -> Result<GradcheckOutcome> {
    let init_std = config.init_std.unwrap_or(DEFAULT_CHECK_STD);
    let model = Model::new(&config.model, &mut Rng::new(config.train.seed), Some(init_std))?;
    let numel = model.params().trainable_numel();
    if numel > MAX_ELEMENTS {
        return Err(CliError::Refused(format!(
            "model has {numel} trainable elements; gradcheck is limited to {MAX_ELEMENTS}. \
             Reduce model.d, model.vocab or model.seq_len (e.g. d = 8, heads = 2, vocab = 11, seq_len = 6)"
        )));
    }
    let n = config.model.seq_len();
    let mut rng = Rng::derive(config.train.seed, 1);
    let tokens: Vec<usize> = (0..=n).map(|_| rng.below(config.model.vocab())).collect();
    let (x, y) = (&tokens[..n], &tokens[1..]);
    let eps = options.eps.unwrap_or(DEFAULT_EPS);

    let anchors = anchors_at(&model, x, y)?;
    let loss = |t: &mut hrm_lm_core::Tape, b: &hrm_lm_core::BoundParams| {
        Ok(model.loss(t, b, x, y, Some(&anchors))?.loss)
    };
    let mut grads = analytic_gradients(model.params(), &loss)?;
    if let Some(name) = &options.corrupt {
        let id = model
            .params()
            .find(name)
            .ok_or_else(|| CliError::config("--corrupt", format!("no tensor named `{name}`")))?;
        grads
            .get_mut(id)
            .ok_or_else(|| CliError::config("--corrupt", format!("`{name}` is frozen")))?
            .scale_in_place(1.5);
    }
    let report = compare_with_finite_differences(model.params(), eps, &grads, &loss)?;
    Ok(GradcheckOutcome {
        passed: report.max_rel_err < TOLERANCE,
        report,
        eps,
        init_std,
    })
}
