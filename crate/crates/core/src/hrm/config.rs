use alloc::format;

use serde::{Deserialize, Serialize};

use crate::blocks::check_heads;
use crate::error::{Error, Result};

/// Base standard deviation for matrix initialization.
pub const BASE_INIT_STD: f64 = 0.02;
pub const DEFAULT_GATE_ENTROPY: f64 = 0.01;

/// Hyperparameters of an HRM-LM.
///
/// `steps_per_pass` (M = N·T) and `effective_depth` (M·S) are always
/// derived, never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HrmConfig {
    pub d: usize,
    pub heads: usize,
    pub vocab: usize,
    pub seq_len: usize,
    /// N: Slow-module cycles per pass.
    pub cycles: usize,
    /// T: Fast-module steps per cycle.
    pub steps_per_cycle: usize,
    /// S: supervision passes.
    pub passes: usize,
    /// K: recurrent steps recorded for backpropagation.
    pub grad_window: usize,
    /// λ: weight of the output-fusion entropy bonus.
    pub gate_entropy: f64,
}

impl HrmConfig {
    pub fn steps_per_pass(&self) -> usize {
        self.cycles * self.steps_per_cycle
    }

    pub fn effective_depth(&self) -> usize {
        self.steps_per_pass() * self.passes
    }

    /// `0.02 / √M`, the initialization scale of the shared blocks.
    pub fn shared_init_std(&self) -> f64 {
        BASE_INIT_STD / libm::sqrt(self.steps_per_pass() as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 || self.steps_per_cycle == 0 || self.passes == 0 {
            return Err(Error::config(format!(
                "cycles ({}), steps_per_cycle ({}) and passes ({}) must all be at least 1",
                self.cycles, self.steps_per_cycle, self.passes
            )));
        }
        let m = self.steps_per_pass();
        if self.grad_window == 0 || self.grad_window > m {
            return Err(Error::config(format!(
                "grad_window K={} must satisfy 1 <= K <= M={m}",
                self.grad_window
            )));
        }
        if self.d == 0 || self.vocab == 0 || self.seq_len == 0 {
            return Err(Error::config("d, vocab and seq_len must be positive"));
        }
        check_heads(self.d, self.heads)?;
        if (self.d / self.heads) % 2 != 0 {
            return Err(Error::config(format!(
                "head dim {} must be even for rotary embedding",
                self.d / self.heads
            )));
        }
        if !(self.gate_entropy.is_finite() && self.gate_entropy >= 0.0) {
            return Err(Error::config(format!(
                "gate_entropy {} must be a non-negative number",
                self.gate_entropy
            )));
        }
        Ok(())
    }
}
