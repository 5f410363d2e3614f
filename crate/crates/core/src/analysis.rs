//! Analytical calculators and empirical probes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::blocks::block_param_count;
use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::hrm::{ForwardOptions, HrmConfig, HrmModel, StepRecord};
use crate::model::{LanguageModel, ModelKind};
use crate::params::{Grads, ParamSet};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::STABILITY_TOL;

/// An exact non-negative fraction in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::config("ratio denominator must be positive"));
        }
        let g = gcd(num, den);
        Ok(Ratio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorySpec {
    pub kind: ModelKind,
    /// L for the Transformer, M for the recurrent models.
    pub depth: u64,
    pub seq_len: u64,
    pub heads: u64,
    pub head_dim: u64,
    pub d: u64,
    pub bytes_per_element: u64,
}

/// `2 · depth · n · H · d_k · bytes`: keys and values for every distinct
/// attention application.
pub fn kv_cache_bytes(spec: &MemorySpec) -> Result<u64> {
    if spec.heads * spec.head_dim != spec.d {
        return Err(Error::config(format!(
            "heads × head_dim = {} × {} does not equal d = {}",
            spec.heads, spec.head_dim, spec.d
        )));
    }
    Ok(2 * spec.depth * spec.seq_len * spec.heads * spec.head_dim * spec.bytes_per_element)
}

/// KV memory of an `M`-step recurrent model relative to an `L`-layer stack.
pub fn kv_ratio(steps: u64, layers: u64) -> Result<Ratio> {
    if steps == 0 {
        return Err(Error::config("M must be positive"));
    }
    Ratio::new(steps, layers)
}

/// Attention-block storage of an `L`-layer stack relative to HRM's three
/// blocks.
pub fn attention_savings_ratio(layers: u64) -> Result<Ratio> {
    Ratio::new(layers, 3)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub groups: Vec<(String, u64)>,
    pub total: u64,
}

impl ParamBreakdown {
    fn from_groups(groups: Vec<(&str, u64)>) -> Self {
        let total = groups.iter().map(|(_, n)| n).sum();
        ParamBreakdown {
            groups: groups.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            total,
        }
    }

    pub fn get(&self, group: &str) -> Option<u64> {
        self.groups.iter().find(|(k, _)| k == group).map(|(_, v)| *v)
    }
}

/// Trainable HRM elements by group. The count does not depend on N, T, S
/// or K; the frozen prototypes are excluded.
pub fn hrm_params(d: u64, vocab: u64) -> ParamBreakdown {
    let block = block_param_count(d);
    ParamBreakdown::from_groups(vec![
        ("embedding", vocab * d),
        ("input", block),
        ("fast", 3 * d + 6 * d * d + block + d * d + 1),
        ("slow", 2 * d + 4 * d * d + block + d * d + 1),
        ("output", 3 * d + 9 * d + d * d + 1),
    ])
}

pub fn transformer_params(d: u64, vocab: u64, layers: u64) -> ParamBreakdown {
    ParamBreakdown::from_groups(vec![
        ("embedding", vocab * d),
        ("layers", layers * block_param_count(d)),
        ("final_norm", d),
    ])
}

/// Independent of the iteration count.
pub fn unitf_params(d: u64, vocab: u64) -> ParamBreakdown {
    ParamBreakdown::from_groups(vec![
        ("embedding", vocab * d),
        ("shared", block_param_count(d)),
        ("final_norm", d),
    ])
}

/// Stored elements of `set` grouped by the name prefix before the first dot.
pub fn enumerate_params(set: &ParamSet, trainable_only: bool) -> ParamBreakdown {
    let mut groups: Vec<(String, u64)> = Vec::new();
    for p in set.iter().filter(|p| p.trainable || !trainable_only) {
        let group = p.name.split('.').next().unwrap_or(&p.name);
        let n = p.value.numel() as u64;
        match groups.iter_mut().find(|(g, _)| g == group) {
            Some((_, total)) => *total += n,
            None => groups.push((group.to_string(), n)),
        }
    }
    let total = groups.iter().map(|(_, n)| n).sum();
    ParamBreakdown { groups, total }
}

/// Training cost as a multiple of one block's forward cost `C(n, d)`:
/// `3L`, `S·(M+2K)` and `M+2K`.
pub fn train_flops_coefficient(kind: ModelKind, depth: u64, grad_window: u64, passes: u64) -> u64 {
    match kind {
        ModelKind::Transformer => 3 * depth,
        ModelKind::Hrm => passes * (depth + 2 * grad_window),
        ModelKind::UniTf => depth + 2 * grad_window,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub ce_normal: f64,
    pub ce_frozen: f64,
    pub delta: f64,
}

/// Cross-entropy with and without the Slow-module on identical sequences;
/// frozen means `z_H` stays at its broadcast prototype.
pub fn freeze_h_eval(model: &HrmModel, sequences: &[Sequence]) -> Result<FreezeReport> {
    if sequences.is_empty() {
        return Err(Error::Data("no sequences to evaluate".into()));
    }
    let mean = |freeze_slow: bool| -> Result<f64> {
        let options = ForwardOptions {
            freeze_slow,
            ..Default::default()
        };
        let mut total = 0.0;
        for s in sequences {
            total += model.eval_ce(&s.inputs, &s.targets, &options)?;
        }
        Ok(total / sequences.len() as f64)
    };
    let ce_normal = mean(false)?;
    let ce_frozen = mean(true)?;
    Ok(FreezeReport {
        ce_normal,
        ce_frozen,
        delta: ce_frozen - ce_normal,
    })
}

/// Per-step records of one full forward over `sequence`.
pub fn trace_report(model: &HrmModel, sequence: &Sequence) -> Result<Vec<StepRecord>> {
    model.trace(&sequence.inputs, &sequence.targets, &ForwardOptions::default())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub pass: usize,
    pub step: usize,
    pub value: f64,
    pub bound: f64,
}

/// Steps where `‖z_L'‖_∞ > max(‖z_L‖_∞, ‖α·h·W_out‖_∞)` beyond rounding.
pub fn stability_monitor(trace: &[StepRecord]) -> Vec<Violation> {
    trace
        .iter()
        .filter_map(|r| {
            let bound = r.zl_inf_before.max(r.injection_inf);
            (r.zl_inf_after > bound + STABILITY_TOL).then_some(Violation {
                pass: r.pass,
                step: r.step,
                value: r.zl_inf_after,
                bound,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub updates: usize,
    pub violations: usize,
    /// Largest `‖z_L'‖_∞ − bound` seen; non-positive when the bound holds.
    pub worst_margin: f64,
}

/// Draws fresh random Fast-module parameters and states for every update
/// and checks the stability bound on each.
pub fn fuzz_fast_updates(seed: u64, updates: usize) -> Result<FuzzReport> {
    let config = HrmConfig {
        d: 4,
        heads: 1,
        vocab: 5,
        seq_len: 3,
        cycles: 1,
        steps_per_cycle: 1,
        passes: 1,
        grad_window: 1,
        gate_entropy: 0.0,
    };
    let mut rng = Rng::new(seed);
    let mut model = HrmModel::new(config, &mut rng, Some(0.5))?;
    let fast = model.layout.fast.clone();
    let mut report = FuzzReport {
        updates,
        violations: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    for _ in 0..updates {
        let std = 0.05 + 2.0 * rng.uniform();
        for id in [fast.gate, fast.input, fast.output, fast.block.w_qkv, fast.block.w1, fast.block.w3] {
            let shape = model.params.value(id).shape().to_vec();
            *model.params.value_mut(id) = rng.normal_tensor(&shape, 0.0, std);
        }
        let alpha = 4.0 * rng.uniform() - 2.0;
        *model.params.value_mut(fast.alpha) = Tensor::scalar(alpha);
        let scale = libm::exp(6.0 * rng.uniform() - 3.0);
        let zl = rng.normal_tensor(&[3, 4], 0.0, scale);
        let zh = rng.normal_tensor(&[3, 4], 0.0, 1.0);
        let x = rng.normal_tensor(&[3, 4], 0.0, 1.0);
        let mut tape = Tape::new();
        let bound_params = model.params.bind(&mut tape);
        let (zl_v, zh_v, x_v) = (tape.constant(zl.clone()), tape.constant(zh), tape.constant(x));
        let c = tape.concat_cols(&[zl_v, zh_v, x_v])?;
        let c = tape.rms_norm(c, bound_params[fast.context_norm], crate::blocks::NORM_EPS)?;
        let u = tape.matmul(c, bound_params[fast.input])?;
        let h = crate::blocks::attn_block_forward(&mut tape, &bound_params, &fast.block, &model.rope, u)?;
        let hw = tape.matmul(h, bound_params[fast.output])?;
        let injection = alpha.abs() * tape.value(hw).max_abs();
        let next = model.fast_update(&mut tape, &bound_params, zl_v, zh_v, x_v)?;
        let bound = zl.max_abs().max(injection);
        let margin = tape.value(next).max_abs() - bound;
        report.worst_margin = report.worst_margin.max(margin);
        if margin > STABILITY_TOL {
            report.violations += 1;
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplificationRow {
    pub window: usize,
    pub grad_norm: f64,
    /// `‖∇L_K‖ / ‖∇L_1‖`.
    pub ratio: f64,
    /// Smallest pairwise cosine among the per-step gradient contributions.
    pub min_alignment: Option<f64>,
}

/// The aligned linear toy `z ← z + θ⊙x` over `steps` steps with loss
/// `w·z_M`: every step contributes the identical gradient `w⊙x`, so the
/// last-`K` window gradient is exactly `K` times the `K = 1` gradient.
pub fn linear_amplification(windows: &[usize], steps: usize, dim: usize, seed: u64) -> Result<Vec<AmplificationRow>> {
    let mut rng = Rng::new(seed);
    let theta = rng.normal_tensor(&[dim], 0.0, 1.0);
    let x = rng.normal_tensor(&[dim], 0.0, 1.0);
    let w = rng.normal_tensor(&[dim], 0.0, 1.0);
    let mut set = ParamSet::new();
    let id = set.add("theta", theta, true, false);
    let grad_for = |k: usize| -> Result<Tensor> {
        if k == 0 || k > steps {
            return Err(Error::config(format!("window K={k} must satisfy 1 <= K <= M={steps}")));
        }
        let mut tape = Tape::new();
        let bound = set.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let wv = tape.constant(w.clone());
        let z0 = tape.constant(Tensor::zeros(&[dim]));
        let step = |t: &mut Tape, z| -> Result<_> {
            let push = t.mul(bound[id], xv)?;
            t.add(z, push)
        };
        let mut z = tape.no_grad(|t| {
            let mut z = z0;
            for _ in 0..steps - k {
                z = step(t, z)?;
            }
            Ok(vec![z])
        })?[0];
        for _ in 0..k {
            z = step(&mut tape, z)?;
        }
        let weighted = tape.mul(wv, z)?;
        let loss = tape.sum(weighted)?;
        tape.backward(loss)?;
        let mut g = Grads::zeros_like(&set);
        g.accumulate(&tape, &bound, 1.0);
        Ok(g.get(id).expect("trainable").clone())
    };
    let base = grad_for(1)?;
    let base_norm = libm::sqrt(base.sum_squares());
    let mut rows = Vec::with_capacity(windows.len());
    for &k in windows {
        let g = grad_for(k)?;
        let norm = libm::sqrt(g.sum_squares());
        // Step i's contribution is g_i − g_{i−1}; in this toy each equals the base.
        let contributions: Vec<Tensor> = (1..=k)
            .map(|i| {
                let mut gi = grad_for(i)?;
                if i > 1 {
                    gi.add_scaled(&grad_for(i - 1)?, -1.0)?;
                }
                Ok(gi)
            })
            .collect::<Result<_>>()?;
        let mut min_alignment: Option<f64> = None;
        for a in 0..contributions.len() {
            for b in a + 1..contributions.len() {
                let cos = cosine(&contributions[a], &contributions[b]);
                min_alignment = Some(min_alignment.map_or(cos, |m| m.min(cos)));
            }
        }
        rows.push(AmplificationRow {
            window: k,
            grad_norm: norm,
            ratio: norm / base_norm,
            min_alignment,
        });
    }
    Ok(rows)
}

fn cosine(a: &Tensor, b: &Tensor) -> f64 {
    let dot: f64 = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
    dot / libm::sqrt(a.sum_squares() * b.sum_squares())
}

/// Measured `‖∇L_K‖ / ‖∇L_1‖` of a real HRM, one pass, on `sequence`.
/// Reported only: the alignment premise does not hold by construction.
pub fn hrm_amplification(model: &HrmModel, sequence: &Sequence, windows: &[usize]) -> Result<Vec<AmplificationRow>> {
    let norm_for = |k: usize| -> Result<f64> {
        let mut m = model.clone();
        m.config.grad_window = k;
        m.config.passes = 1;
        m.config.validate()?;
        let mut tape = Tape::new();
        let bound = m.params.bind(&mut tape);
        let out = m.loss(&mut tape, &bound, &sequence.inputs, &sequence.targets, None)?;
        tape.backward(out.loss)?;
        let mut g = Grads::zeros_like(&m.params);
        g.accumulate(&tape, &bound, 1.0);
        Ok(g.global_norm())
    };
    let base = norm_for(1)?;
    windows
        .iter()
        .map(|&k| {
            let n = norm_for(k)?;
            Ok(AmplificationRow {
                window: k,
                grad_norm: n,
                ratio: n / base,
                min_alignment: None,
            })
        })
        .collect()
}
