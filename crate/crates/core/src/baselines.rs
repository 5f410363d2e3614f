//! Comparison architectures: a stacked Transformer with independent layers and
//! a flat Universal Transformer that iterates one shared block.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::blocks::{attn_block_forward, check_heads, AttnBlockParams, RopeTable, NORM_EPS};
use crate::error::{Error, Result};
use crate::hrm::BASE_INIT_STD;
use crate::params::{BoundParams, ParamId, ParamSet};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const UNITF_BASE_DIM: f64 = 4096.0;
pub const UNITF_SAFETY: f64 = 2.0;

/// `0.02 / √(safety · M · d / d_base)`.
pub fn unitf_init_std(steps: usize, d: usize, d_base: f64, safety: f64) -> f64 {
    BASE_INIT_STD / libm::sqrt(safety * steps as f64 * d as f64 / d_base)
}

fn check_dims(d: usize, heads: usize, vocab: usize, seq_len: usize) -> Result<()> {
    if d == 0 || vocab == 0 || seq_len == 0 {
        return Err(Error::config("d, vocab and seq_len must be positive"));
    }
    check_heads(d, heads)?;
    if (d / heads) % 2 != 0 {
        return Err(Error::config(format!("head dim {} must be even for rotary embedding", d / heads)));
    }
    Ok(())
}

fn check_length(tokens: &[usize], targets: &[usize], seq_len: usize) -> Result<()> {
    if tokens.is_empty() || tokens.len() > seq_len {
        return Err(Error::Data(format!("sequence length {} outside 1..={seq_len}", tokens.len())));
    }
    if tokens.len() != targets.len() {
        return Err(Error::Data(format!("{} inputs but {} targets", tokens.len(), targets.len())));
    }
    Ok(())
}

/// Final norm then weight-tied logits.
fn tied_head(tape: &mut Tape, bound: &BoundParams, h: Var, norm: ParamId, embedding: ParamId) -> Result<Var> {
    let h = tape.rms_norm(h, bound[norm], NORM_EPS)?;
    tape.matmul_nt(h, bound[embedding])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub d: usize,
    pub heads: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub layers: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("layers must be at least 1"));
        }
        check_dims(self.d, self.heads, self.vocab, self.seq_len)
    }
}

#[derive(Clone, Debug)]
pub struct TransformerModel {
    pub config: TransformerConfig,
    pub params: ParamSet,
    pub embedding: ParamId,
    pub layers: Vec<AttnBlockParams>,
    pub final_norm: ParamId,
    pub rope: RopeTable,
}

impl TransformerModel {
    pub fn new(config: TransformerConfig, rng: &mut Rng, init_std_override: Option<f64>) -> Result<Self> {
        config.validate()?;
        let std = init_std_override.unwrap_or(BASE_INIT_STD);
        let d = config.d;
        let mut params = ParamSet::new();
        let embedding = params.add("embedding", rng.normal_tensor(&[config.vocab, d], 0.0, std), true, true);
        let layers = (0..config.layers)
            .map(|l| AttnBlockParams::register(&mut params, &format!("layer{l}"), d, config.heads, std, rng))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = params.add("final_norm", Tensor::ones(&[d]), true, false);
        let rope = RopeTable::new(d / config.heads, config.seq_len)?;
        Ok(TransformerModel {
            config,
            params,
            embedding,
            layers,
            final_norm,
            rope,
        })
    }

    /// Embedding, `L` blocks with their own weights, final norm, tied logits.
    pub fn logits(&self, tape: &mut Tape, bound: &BoundParams, tokens: &[usize]) -> Result<Var> {
        let mut h = tape.gather_rows(bound[self.embedding], tokens)?;
        for layer in &self.layers {
            h = attn_block_forward(tape, bound, layer, &self.rope, h)?;
        }
        tied_head(tape, bound, h, self.final_norm, self.embedding)
    }

    pub fn loss(&self, tape: &mut Tape, bound: &BoundParams, tokens: &[usize], targets: &[usize]) -> Result<Var> {
        check_length(tokens, targets, self.config.seq_len)?;
        let logits = self.logits(tape, bound, tokens)?;
        tape.cross_entropy(logits, targets)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniTfConfig {
    pub d: usize,
    pub heads: usize,
    pub vocab: usize,
    pub seq_len: usize,
    /// M: applications of the shared block.
    pub steps: usize,
    /// K: final applications recorded for backpropagation.
    pub grad_window: usize,
}

impl UniTfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps M must be at least 1"));
        }
        check_window(self.grad_window, self.steps)?;
        check_dims(self.d, self.heads, self.vocab, self.seq_len)
    }
}

fn check_window(k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(Error::config(format!("grad_window K={k} must satisfy 1 <= K <= M={m}")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct UniTfModel {
    pub config: UniTfConfig,
    pub params: ParamSet,
    pub embedding: ParamId,
    pub block: AttnBlockParams,
    pub final_norm: ParamId,
    pub rope: RopeTable,
}

/// Logits of a UniTF forward and the representation the recorded window
/// started from.
pub struct UniTfOutput {
    pub logits: Var,
    pub anchor: Tensor,
}

impl UniTfModel {
    /// The shared block defaults to [`unitf_init_std`] with `d_base = 4096`
    /// and safety 2; the embedding uses 0.02.
    pub fn new(config: UniTfConfig, rng: &mut Rng, init_std_override: Option<f64>) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let block_std = init_std_override
            .unwrap_or_else(|| unitf_init_std(config.steps, d, UNITF_BASE_DIM, UNITF_SAFETY));
        let emb_std = init_std_override.unwrap_or(BASE_INIT_STD);
        let mut params = ParamSet::new();
        let embedding = params.add("embedding", rng.normal_tensor(&[config.vocab, d], 0.0, emb_std), true, true);
        let block = AttnBlockParams::register(&mut params, "shared", d, config.heads, block_std, rng)?;
        let final_norm = params.add("final_norm", Tensor::ones(&[d]), true, false);
        let rope = RopeTable::new(d / config.heads, config.seq_len)?;
        Ok(UniTfModel {
            config,
            params,
            embedding,
            block,
            final_norm,
            rope,
        })
    }

    /// All `M` applications on the tape.
    pub fn logits(&self, tape: &mut Tape, bound: &BoundParams, tokens: &[usize]) -> Result<Var> {
        Ok(self.logits_tbptt(tape, bound, tokens, self.config.steps, None)?.logits)
    }

    /// The first `M−K` applications without gradient, the final `K` on the
    /// tape. With `anchor`, the recorded window starts from that
    /// representation instead.
    pub fn logits_tbptt(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[usize],
        k: usize,
        anchor: Option<&Tensor>,
    ) -> Result<UniTfOutput> {
        let m = self.config.steps;
        check_window(k, m)?;
        let h = match anchor {
            Some(a) => tape.constant(a.clone()),
            None => {
                let h = tape.gather_rows(bound[self.embedding], tokens)?;
                if m > k {
                    tape.no_grad(|t| {
                        let mut h = h;
                        for _ in 0..m - k {
                            h = attn_block_forward(t, bound, &self.block, &self.rope, h)?;
                        }
                        Ok(vec![h])
                    })?[0]
                } else {
                    h
                }
            }
        };
        let anchor = tape.value(h).clone();
        let mut h = h;
        for _ in 0..k {
            h = attn_block_forward(tape, bound, &self.block, &self.rope, h)?;
        }
        let logits = tied_head(tape, bound, h, self.final_norm, self.embedding)?;
        Ok(UniTfOutput { logits, anchor })
    }

    pub fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[usize],
        targets: &[usize],
        anchor: Option<&Tensor>,
    ) -> Result<(Var, Tensor)> {
        check_length(tokens, targets, self.config.seq_len)?;
        let out = self.logits_tbptt(tape, bound, tokens, self.config.grad_window, anchor)?;
        Ok((tape.cross_entropy(out.logits, targets)?, out.anchor))
    }
}
