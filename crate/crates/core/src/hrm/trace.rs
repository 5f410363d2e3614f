use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Per-step observations of one recurrent step.
///
/// Norms are per-position Euclidean norms averaged over positions; the
/// cosine is likewise a per-position cosine averaged over positions.
/// The `*_inf` fields carry what the stability bound needs: the fast state's
/// max-norm before and after the step, and `‖α·h·W_out‖_∞` of the injected
/// content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Supervision pass, 1-indexed.
    pub pass: usize,
    /// Recurrent step within the pass, 1-indexed.
    pub step: usize,
    pub h_fired: bool,
    pub gate_mean: f64,
    pub norm_zl: f64,
    pub norm_zh_before: f64,
    pub norm_zh_after: f64,
    pub cos_hl: f64,
    pub zl_inf_before: f64,
    pub zl_inf_after: f64,
    pub injection_inf: f64,
}

pub fn mean_row_norm(t: &Tensor) -> f64 {
    let cols = t.cols();
    let total: f64 = t
        .data()
        .chunks(cols)
        .map(|r| libm::sqrt(r.iter().map(|v| v * v).sum()))
        .sum();
    total / t.rows() as f64
}

/// Mean over rows of the cosine between matching rows; rows with a zero
/// norm contribute 0.
pub fn mean_row_cosine(a: &Tensor, b: &Tensor) -> f64 {
    let cols = a.cols();
    let total: f64 = a
        .data()
        .chunks(cols)
        .zip(b.data().chunks(cols))
        .map(|(x, y)| {
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx = libm::sqrt(x.iter().map(|v| v * v).sum());
            let ny = libm::sqrt(y.iter().map(|v| v * v).sum());
            if nx == 0.0 || ny == 0.0 {
                0.0
            } else {
                dot / (nx * ny)
            }
        })
        .sum();
    total / a.rows() as f64
}
