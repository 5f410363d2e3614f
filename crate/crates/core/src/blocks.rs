//! The shared computational primitive: rotary position embedding, causal
//! multi-head self-attention, the SwiGLU feed-forward network and the
//! post-norm `CausalAttnBlock` built from them.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::PairRotation;
use crate::params::{BoundParams, ParamId, ParamSet};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const ROPE_BASE: f64 = 10_000.0;
pub const NORM_EPS: f64 = 1e-6;

/// Rotary embedding angles `θ_j = base^(−2j/d_k) · pos`.
#[derive(Clone, Debug, PartialEq)]
pub struct RopeTable {
    base: f64,
    rotation: Arc<PairRotation>,
}

impl RopeTable {
    pub fn new(head_dim: usize, max_positions: usize) -> Result<Self> {
        Self::with_base(head_dim, max_positions, ROPE_BASE)
    }

    pub fn with_base(head_dim: usize, max_positions: usize, base: f64) -> Result<Self> {
        let rotation = PairRotation::new(head_dim, max_positions, |pos, j| {
            pos as f64 * libm::pow(base, -2.0 * j as f64 / head_dim as f64)
        })?;
        Ok(RopeTable {
            base,
            rotation: Arc::new(rotation),
        })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn head_dim(&self) -> usize {
        self.rotation.head_dim()
    }

    pub fn max_positions(&self) -> usize {
        self.rotation.max_positions()
    }

    pub fn cos_sin(&self, pos: usize, pair: usize) -> (f64, f64) {
        self.rotation.cos_sin(pos, pair)
    }
}

/// Rotates each head's consecutive value pairs of `x` (`n × H·d_k`, heads
/// contiguous) by the angle of the row's position.
pub fn rope_apply(tape: &mut Tape, x: Var, table: &RopeTable) -> Result<Var> {
    tape.rotate_pairs(x, &table.rotation)
}

/// Weight handles of one `CausalAttnBlock`.
///
/// `w_qkv` is the fused `d × 3d` query/key/value projection
/// (columns `[Q | K | V]`), `w_o` the `d × d` output projection, `w1`/`w2`
/// the `d × 4d` SwiGLU value/gate projections, `w3` the `4d × d` down
/// projection, `norm_attn`/`norm_ffn` the two RMSNorm scales. No biases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnBlockParams {
    pub d: usize,
    pub heads: usize,
    pub w_qkv: ParamId,
    pub w_o: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub norm_attn: ParamId,
    pub norm_ffn: ParamId,
}

impl AttnBlockParams {
    /// Adds a freshly initialized block to `set`: matrices `N(0, std²)`,
    /// norm scales one.
    pub fn register(
        set: &mut ParamSet,
        prefix: &str,
        d: usize,
        heads: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        check_heads(d, heads)?;
        let mut matrix = |set: &mut ParamSet, name: &str, rows: usize, cols: usize| {
            let t = rng.normal_tensor(&[rows, cols], 0.0, std);
            set.add(&format!("{prefix}.{name}"), t, true, true)
        };
        let w_qkv = matrix(set, "w_qkv", d, 3 * d);
        let w_o = matrix(set, "w_o", d, d);
        let w1 = matrix(set, "w1", d, 4 * d);
        let w2 = matrix(set, "w2", d, 4 * d);
        let w3 = matrix(set, "w3", 4 * d, d);
        let norm_attn = set.add(&format!("{prefix}.norm_attn"), Tensor::ones(&[d]), true, false);
        let norm_ffn = set.add(&format!("{prefix}.norm_ffn"), Tensor::ones(&[d]), true, false);
        Ok(AttnBlockParams {
            d,
            heads,
            w_qkv,
            w_o,
            w1,
            w2,
            w3,
            norm_attn,
            norm_ffn,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    pub fn ids(&self) -> [ParamId; 7] {
        [
            self.w_qkv,
            self.w_o,
            self.w1,
            self.w2,
            self.w3,
            self.norm_attn,
            self.norm_ffn,
        ]
    }

    /// Stored elements of this block in `set`.
    pub fn numel(&self, set: &ParamSet) -> usize {
        self.ids().iter().map(|&id| set.value(id).numel()).sum()
    }
}

pub fn check_heads(d: usize, heads: usize) -> Result<()> {
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!("model dim {d} is not divisible by {heads} heads")));
    }
    Ok(())
}

/// `16d² + 2d`: `3d² + d² + 2·4d² + 4d²` matrix weights plus two norm scales.
pub fn block_param_count(d: u64) -> u64 {
    16 * d * d + 2 * d
}

/// Additive causal mask: `0` on and below the diagonal, `-inf` above.
pub fn causal_mask(n: usize) -> Tensor {
    Tensor::from_fn(&[n, n], |i| if i % n > i / n { f64::NEG_INFINITY } else { 0.0 })
}

/// Causal multi-head self-attention with RoPE on queries and keys.
pub fn causal_mhsa(
    tape: &mut Tape,
    bound: &BoundParams,
    block: &AttnBlockParams,
    rope: &RopeTable,
    x: Var,
) -> Result<Var> {
    causal_mhsa_with_weights(tape, bound, block, rope, x).map(|(out, _)| out)
}

/// As [`causal_mhsa`], also returning each head's `n × n` attention matrix.
pub fn causal_mhsa_with_weights(
    tape: &mut Tape,
    bound: &BoundParams,
    block: &AttnBlockParams,
    rope: &RopeTable,
    x: Var,
) -> Result<(Var, Vec<Var>)> {
    let d = block.d;
    let head_dim = block.head_dim();
    if rope.head_dim() != head_dim {
        return Err(Error::config(format!(
            "rotary table head dim {} does not match block head dim {head_dim}",
            rope.head_dim()
        )));
    }
    let n = tape.value(x).rows();
    let qkv = tape.matmul(x, bound[block.w_qkv])?;
    let q = tape.slice_cols(qkv, 0, d)?;
    let k = tape.slice_cols(qkv, d, d)?;
    let v = tape.slice_cols(qkv, 2 * d, d)?;
    let q = rope_apply(tape, q, rope)?;
    let k = rope_apply(tape, k, rope)?;
    let mask = causal_mask(n);
    let inv_sqrt = 1.0 / libm::sqrt(head_dim as f64);
    let mut heads = Vec::with_capacity(block.heads);
    let mut weights = Vec::with_capacity(block.heads);
    for h in 0..block.heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, inv_sqrt)?;
        let probs = tape.softmax_lastdim(scores, Some(&mask))?;
        heads.push(tape.matmul(probs, vh)?);
        weights.push(probs);
    }
    let concat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let out = tape.matmul(concat, bound[block.w_o])?;
    Ok((out, weights))
}

/// `(x·W1 ⊙ SiLU(x·W2)) · W3`.
pub fn swiglu(tape: &mut Tape, x: Var, w1: Var, w2: Var, w3: Var) -> Result<Var> {
    let value = tape.matmul(x, w1)?;
    let gate = tape.matmul(x, w2)?;
    let gate = tape.silu(gate)?;
    let hidden = tape.mul(value, gate)?;
    tape.matmul(hidden, w3)
}

/// `x' = RMSNorm(x + MHSA(x))`, returns `RMSNorm(x' + SwiGLU(x'))`.
pub fn attn_block_forward(
    tape: &mut Tape,
    bound: &BoundParams,
    block: &AttnBlockParams,
    rope: &RopeTable,
    x: Var,
) -> Result<Var> {
    let attn = causal_mhsa(tape, bound, block, rope, x)?;
    let resid = tape.add(x, attn)?;
    let mid = tape.rms_norm(resid, bound[block.norm_attn], NORM_EPS)?;
    let ffn = swiglu(tape, mid, bound[block.w1], bound[block.w2], bound[block.w3])?;
    let resid = tape.add(mid, ffn)?;
    tape.rms_norm(resid, bound[block.norm_ffn], NORM_EPS)
}

/// Human-readable inventory, e.g. for reports: `(name, shape)` per tensor.
pub fn block_inventory(block: &AttnBlockParams, set: &ParamSet) -> Vec<(String, Vec<usize>)> {
    block
        .ids()
        .iter()
        .map(|&id| {
            let p = set.get(id);
            (p.name.clone(), p.value.shape().to_vec())
        })
        .collect()
}
