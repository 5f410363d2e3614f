//! HRM-LM: input encoder, gated Fast/Slow recurrence and output fusion.

mod config;
mod trace;

pub use config::{HrmConfig, BASE_INIT_STD, DEFAULT_GATE_ENTROPY};
pub use trace::{mean_row_cosine, mean_row_norm, StepRecord};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::blocks::{attn_block_forward, AttnBlockParams, RopeTable, NORM_EPS};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamId, ParamSet};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const ALPHA_INIT: f64 = 0.1;
pub const TAU_INIT: f64 = 1.0;

/// Handles of one gated recurrent module. The context is `parts · d` wide:
/// three parts for the Fast-module (`z_L, z_H, x̃`), two for the Slow-module.
#[derive(Clone, Debug)]
pub struct GatedModule {
    pub parts: usize,
    pub context_norm: ParamId,
    pub gate: ParamId,
    pub input: ParamId,
    pub block: AttnBlockParams,
    pub output: ParamId,
    pub alpha: ParamId,
}

impl GatedModule {
    #[allow(clippy::too_many_arguments)]
    fn register(
        set: &mut ParamSet,
        prefix: &str,
        parts: usize,
        d: usize,
        heads: usize,
        std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let width = parts * d;
        let context_norm = set.add(&format!("{prefix}.context_norm"), Tensor::ones(&[width]), true, false);
        let gate = set.add(&format!("{prefix}.gate"), rng.normal_tensor(&[width, d], 0.0, std), true, true);
        let input = set.add(&format!("{prefix}.input"), rng.normal_tensor(&[width, d], 0.0, std), true, true);
        let block = AttnBlockParams::register(set, &format!("{prefix}.block"), d, heads, std, rng)?;
        let output = set.add(&format!("{prefix}.output"), rng.normal_tensor(&[d, d], 0.0, std), true, true);
        let alpha = set.add(&format!("{prefix}.alpha"), Tensor::scalar(ALPHA_INIT), true, false);
        Ok(GatedModule {
            parts,
            context_norm,
            gate,
            input,
            block,
            output,
            alpha,
        })
    }
}

#[derive(Clone, Debug)]
pub struct OutputFusion {
    pub norm_h: ParamId,
    pub norm_l: ParamId,
    pub norm_i: ParamId,
    /// `3d × 3` source-selection matrix.
    pub gate: ParamId,
    pub final_proj: ParamId,
    pub tau: ParamId,
}

/// Where every HRM tensor lives inside the model's [`ParamSet`].
#[derive(Clone, Debug)]
pub struct HrmLayout {
    pub embedding: ParamId,
    pub encoder: AttnBlockParams,
    pub fast: GatedModule,
    pub slow: GatedModule,
    pub fusion: OutputFusion,
    pub proto_h: ParamId,
    pub proto_l: ParamId,
}

/// Recurrent state at the start of a pass's recorded window.
#[derive(Clone, Debug, PartialEq)]
pub struct PassAnchor {
    pub z_h: Tensor,
    pub z_l: Tensor,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'a> {
    /// Disables the Slow-module: `z_H` keeps its broadcast prototype value.
    pub freeze_slow: bool,
    /// Starts pass `s`'s recorded window from `anchors[s]` instead of running
    /// the warm-up. Used to give finite differences the same objective the
    /// truncated gradient differentiates.
    pub anchors: Option<&'a [PassAnchor]>,
    /// Keeps `(z_H, z_L)` after every step in [`ForwardOutput::states`].
    pub record_states: bool,
}

/// Collects per-step observations while the recurrence runs.
#[derive(Clone, Debug, Default)]
pub struct Recorder {
    pub trace: Vec<StepRecord>,
    pub states: Option<Vec<PassAnchor>>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub loss: Var,
    /// `CE − λ·H(w̄)` of each pass.
    pub pass_losses: Vec<f64>,
    pub pass_ce: Vec<f64>,
    /// Sequence-mean fusion weights of each pass.
    pub pass_weights: Vec<[f64; 3]>,
    pub anchors: Vec<PassAnchor>,
    pub trace: Vec<StepRecord>,
    pub states: Option<Vec<PassAnchor>>,
    pub final_z_h: Tensor,
    pub final_z_l: Tensor,
}

pub struct Fusion {
    pub logits: Var,
    /// Per-position `n × 3` weights.
    pub weights: Var,
    /// `1 × 3` sequence mean of `weights`.
    pub mean_weights: Var,
}

struct GateStep {
    state: Var,
    gate_mean: f64,
    injection_inf: f64,
}

#[derive(Clone, Debug)]
pub struct HrmModel {
    pub config: HrmConfig,
    pub layout: HrmLayout,
    pub params: ParamSet,
    pub rope: RopeTable,
}

impl HrmModel {
    /// Shared-block and recurrent matrices draw from `N(0, 0.02/√M)`, the
    /// embedding and fusion matrices from `N(0, 0.02)`. `init_std_override`
    /// replaces both scales.
    pub fn new(config: HrmConfig, rng: &mut Rng, init_std_override: Option<f64>) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let base = init_std_override.unwrap_or(BASE_INIT_STD);
        let shared = init_std_override.unwrap_or(config.shared_init_std());
        let mut set = ParamSet::new();
        let embedding = set.add("embedding", rng.normal_tensor(&[config.vocab, d], 0.0, base), true, true);
        let encoder = AttnBlockParams::register(&mut set, "encoder", d, config.heads, shared, rng)?;
        let fast = GatedModule::register(&mut set, "fast", 3, d, config.heads, shared, rng)?;
        let slow = GatedModule::register(&mut set, "slow", 2, d, config.heads, shared, rng)?;
        let fusion = OutputFusion {
            norm_h: set.add("fusion.norm_h", Tensor::ones(&[d]), true, false),
            norm_l: set.add("fusion.norm_l", Tensor::ones(&[d]), true, false),
            norm_i: set.add("fusion.norm_i", Tensor::ones(&[d]), true, false),
            gate: set.add("fusion.gate", rng.normal_tensor(&[3 * d, 3], 0.0, base), true, true),
            final_proj: set.add("fusion.final_proj", rng.normal_tensor(&[d, d], 0.0, base), true, true),
            tau: set.add("fusion.tau", Tensor::scalar(TAU_INIT), true, false),
        };
        let proto_h = rng.truncated_normal(&[d], 0.0, 1.0, -2.0, 2.0)?;
        let proto_l = rng.truncated_normal(&[d], 0.0, 1.0, -2.0, 2.0)?;
        let proto_h = set.add("proto.z_h", proto_h, false, false);
        let proto_l = set.add("proto.z_l", proto_l, false, false);
        let rope = RopeTable::new(d / config.heads, config.seq_len)?;
        Ok(HrmModel {
            config,
            layout: HrmLayout {
                embedding,
                encoder,
                fast,
                slow,
                fusion,
                proto_h,
                proto_l,
            },
            params: set,
            rope,
        })
    }

    /// `x̃`: the encoder block over the token embeddings.
    pub fn input_encode(&self, tape: &mut Tape, bound: &BoundParams, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() || tokens.len() > self.config.seq_len {
            return Err(Error::Data(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                self.config.seq_len
            )));
        }
        let emb = tape.gather_rows(bound[self.layout.embedding], tokens)?;
        attn_block_forward(tape, bound, &self.layout.encoder, &self.rope, emb)
    }

    fn gated_update(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        module: &GatedModule,
        context: &[Var],
        state: Var,
    ) -> Result<GateStep> {
        let c = tape.concat_cols(context)?;
        let c = tape.rms_norm(c, bound[module.context_norm], NORM_EPS)?;
        let gate_pre = tape.matmul(c, bound[module.gate])?;
        let g = tape.sigmoid(gate_pre)?;
        let u = tape.matmul(c, bound[module.input])?;
        let h = attn_block_forward(tape, bound, &module.block, &self.rope, u)?;
        let hw = tape.matmul(h, bound[module.output])?;
        let injection = tape.mul_scalar(hw, bound[module.alpha])?;
        let kept = tape.mul(g, state)?;
        let open = tape.one_minus(g)?;
        let fresh = tape.mul(open, injection)?;
        let next = tape.add(kept, fresh)?;
        let gv = tape.value(g);
        Ok(GateStep {
            state: next,
            gate_mean: gv.sum() / gv.numel() as f64,
            injection_inf: tape.value(injection).max_abs(),
        })
    }

    /// `z_L' = g⊙z_L + (1−g)⊙(α·h·W_out)` with context `[z_L; z_H; x̃]`.
    pub fn fast_update(&self, tape: &mut Tape, bound: &BoundParams, z_l: Var, z_h: Var, x: Var) -> Result<Var> {
        Ok(self.gated_update(tape, bound, &self.layout.fast, &[z_l, z_h, x], z_l)?.state)
    }

    /// Same gated form over `[z_H; z_L]`; no direct token access.
    pub fn slow_update(&self, tape: &mut Tape, bound: &BoundParams, z_h: Var, z_l: Var) -> Result<Var> {
        Ok(self.gated_update(tape, bound, &self.layout.slow, &[z_h, z_l], z_h)?.state)
    }

    #[allow(clippy::too_many_arguments)]
    fn run_steps(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        mut z_h: Var,
        mut z_l: Var,
        steps: core::ops::RangeInclusive<usize>,
        pass: usize,
        freeze_slow: bool,
        recorder: &mut Recorder,
    ) -> Result<(Var, Var)> {
        let t = self.config.steps_per_cycle;
        for i in steps {
            let zl_inf_before = tape.value(z_l).max_abs();
            let fast = self.gated_update(tape, bound, &self.layout.fast, &[z_l, z_h, x], z_l)?;
            z_l = fast.state;
            let norm_zh_before = mean_row_norm(tape.value(z_h));
            let fired = i % t == 0 && !freeze_slow;
            if fired {
                z_h = self.gated_update(tape, bound, &self.layout.slow, &[z_h, z_l], z_h)?.state;
            }
            let zl = tape.value(z_l);
            let zh = tape.value(z_h);
            if let Some(states) = recorder.states.as_mut() {
                states.push(PassAnchor {
                    z_h: zh.clone(),
                    z_l: zl.clone(),
                });
            }
            recorder.trace.push(StepRecord {
                pass,
                step: i,
                h_fired: fired,
                gate_mean: fast.gate_mean,
                norm_zl: mean_row_norm(zl),
                norm_zh_before,
                norm_zh_after: mean_row_norm(zh),
                cos_hl: mean_row_cosine(zh, zl),
                zl_inf_before,
                zl_inf_after: zl.max_abs(),
                injection_inf: fast.injection_inf,
            });
        }
        Ok((z_h, z_l))
    }

    /// One pass of `M` steps: steps `1..=M−K` without gradient, then the
    /// final `K` on the tape. Returns the final states and the anchor the
    /// recorded window started from.
    #[allow(clippy::too_many_arguments)]
    pub fn one_pass(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        x: Var,
        z_h: Var,
        z_l: Var,
        pass: usize,
        options: &ForwardOptions<'_>,
        recorder: &mut Recorder,
    ) -> Result<(Var, Var, PassAnchor)> {
        let m = self.config.steps_per_pass();
        let warm = m - self.config.grad_window;
        let freeze = options.freeze_slow;
        let (z_h, z_l) = match options.anchors {
            Some(anchors) => {
                let anchor = anchors.get(pass - 1).ok_or_else(|| {
                    Error::config(format!("no anchor for pass {pass}"))
                })?;
                (tape.constant(anchor.z_h.clone()), tape.constant(anchor.z_l.clone()))
            }
            None if warm > 0 => {
                let out = tape.no_grad(|t| {
                    let (h, l) = self.run_steps(t, bound, x, z_h, z_l, 1..=warm, pass, freeze, recorder)?;
                    Ok(vec![h, l])
                })?;
                (out[0], out[1])
            }
            None => (z_h, z_l),
        };
        let anchor = PassAnchor {
            z_h: tape.value(z_h).clone(),
            z_l: tape.value(z_l).clone(),
        };
        let (z_h, z_l) = self.run_steps(tape, bound, x, z_h, z_l, warm + 1..=m, pass, freeze, recorder)?;
        Ok((z_h, z_l, anchor))
    }

    /// Gated three-way fusion of `h_H, h_L, h_I` and weight-tied logits.
    pub fn output_fusion(&self, tape: &mut Tape, bound: &BoundParams, z_h: Var, z_l: Var, x: Var) -> Result<Fusion> {
        let f = &self.layout.fusion;
        let tau = tape.value(bound[f.tau]).item();
        if !(tau > 0.0) {
            return Err(Error::config(format!("fusion temperature {tau} must be positive")));
        }
        let hh = tape.rms_norm(z_h, bound[f.norm_h], NORM_EPS)?;
        let hl = tape.rms_norm(z_l, bound[f.norm_l], NORM_EPS)?;
        let hi = tape.rms_norm(x, bound[f.norm_i], NORM_EPS)?;
        let cat = tape.concat_cols(&[hh, hl, hi])?;
        let scores = tape.matmul(cat, bound[f.gate])?;
        let scores = tape.div_scalar(scores, bound[f.tau])?;
        let weights = tape.softmax_lastdim(scores, None)?;
        let mut mixed = None;
        for (k, source) in [hh, hl, hi].into_iter().enumerate() {
            let wk = tape.slice_cols(weights, k, 1)?;
            let term = tape.mul_col(source, wk)?;
            mixed = Some(match mixed {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        let h_out = tape.matmul(mixed.expect("three sources"), bound[f.final_proj])?;
        let logits = tape.matmul_nt(h_out, bound[self.layout.embedding])?;
        let mean_weights = tape.mean_rows(weights)?;
        Ok(Fusion {
            logits,
            weights,
            mean_weights,
        })
    }

    /// Broadcasts the frozen prototypes to `n × d`.
    pub fn initial_state(&self, tape: &mut Tape, bound: &BoundParams, n: usize) -> (Var, Var) {
        let h = Tensor::broadcast_rows(tape.value(bound[self.layout.proto_h]).data(), n);
        let l = Tensor::broadcast_rows(tape.value(bound[self.layout.proto_l]).data(), n);
        (tape.constant(h), tape.constant(l))
    }

    /// `L_acc = (1/S)·Σ_s (CE_s − λ·H(w̄_s))`, detaching the states between
    /// passes.
    pub fn forward_loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[usize],
        targets: &[usize],
        options: &ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        if tokens.len() != targets.len() {
            return Err(Error::Data(format!(
                "{} inputs but {} targets",
                tokens.len(),
                targets.len()
            )));
        }
        let passes = self.config.passes;
        let x = self.input_encode(tape, bound, tokens)?;
        let (mut z_h, mut z_l) = self.initial_state(tape, bound, tokens.len());
        let mut recorder = Recorder {
            trace: Vec::with_capacity(self.config.effective_depth()),
            states: options.record_states.then(Vec::new),
        };
        let mut anchors = Vec::with_capacity(passes);
        let mut pass_losses = Vec::with_capacity(passes);
        let mut pass_ce = Vec::with_capacity(passes);
        let mut pass_weights = Vec::with_capacity(passes);
        let mut total: Option<Var> = None;
        for s in 1..=passes {
            let (h, l, anchor) = self.one_pass(tape, bound, x, z_h, z_l, s, options, &mut recorder)?;
            anchors.push(anchor);
            let fusion = self.output_fusion(tape, bound, h, l, x)?;
            let ce = tape.cross_entropy(fusion.logits, targets)?;
            let entropy = tape.entropy(fusion.mean_weights)?;
            let bonus = tape.scale(entropy, self.config.gate_entropy)?;
            let loss = tape.sub(ce, bonus)?;
            pass_ce.push(tape.value(ce).item());
            pass_losses.push(tape.value(loss).item());
            let w = tape.value(fusion.mean_weights).data();
            pass_weights.push([w[0], w[1], w[2]]);
            total = Some(match total {
                None => loss,
                Some(acc) => tape.add(acc, loss)?,
            });
            z_h = tape.detach(h);
            z_l = tape.detach(l);
        }
        let loss = tape.scale(total.expect("at least one pass"), 1.0 / passes as f64)?;
        Ok(ForwardOutput {
            loss,
            pass_losses,
            pass_ce,
            pass_weights,
            anchors,
            trace: recorder.trace,
            states: recorder.states,
            final_z_h: tape.value(z_h).clone(),
            final_z_l: tape.value(z_l).clone(),
        })
    }

    /// Cross-entropy of the final pass, without the entropy bonus.
    pub fn eval_ce(&self, tokens: &[usize], targets: &[usize], options: &ForwardOptions<'_>) -> Result<f64> {
        let mut tape = Tape::new();
        let mut ce = 0.0;
        tape.no_grad(|t| {
            let bound = self.params.bind(t);
            let out = self.forward_loss(t, &bound, tokens, targets, options)?;
            ce = *out.pass_ce.last().expect("at least one pass");
            Ok(Vec::new())
        })?;
        Ok(ce)
    }

    /// Runs the forward pass without gradient and returns its per-step trace.
    pub fn trace(&self, tokens: &[usize], targets: &[usize], options: &ForwardOptions<'_>) -> Result<Vec<StepRecord>> {
        let mut tape = Tape::new();
        let mut trace = Vec::new();
        tape.no_grad(|t| {
            let bound = self.params.bind(t);
            trace = self.forward_loss(t, &bound, tokens, targets, options)?.trace;
            Ok(Vec::new())
        })?;
        Ok(trace)
    }
}

#[cfg(test)]
mod tests;
