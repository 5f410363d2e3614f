//! Deterministic training: AdamW, warmup plus cosine decay, K/M-proportional
//! clipping and gradient accumulation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{DataSplit, Sequence};
use crate::error::{Error, Result};
use crate::hrm::StepRecord;
use crate::model::{LanguageModel, Model};
use crate::params::{Grads, ParamSet};
use crate::rng::Rng;
use crate::tape::Tape;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.95;
pub const WEIGHT_DECAY: f64 = 0.1;
pub const ADAM_EPS: f64 = 1e-8;
/// Floating-point slack of the fast-state stability bound.
pub const STABILITY_TOL: f64 = 1e-12;

/// `max(1000, N·T·100)`.
pub fn default_warmup(cycles: usize, steps_per_cycle: usize) -> u64 {
    (cycles as u64 * steps_per_cycle as u64 * 100).max(1000)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: u64,
    pub max_steps: u64,
}

impl Schedule {
    /// Linear ramp from 0 to `lr_max` over the warmup, then cosine decay to
    /// `lr_min` at `max_steps`; constant `lr_min` afterwards.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.lr_max * step as f64 / self.warmup_steps as f64;
        }
        let span = self.max_steps.saturating_sub(self.warmup_steps);
        if span == 0 {
            return if step >= self.max_steps { self.lr_min } else { self.lr_max };
        }
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        // Convex blend, exact at both ends.
        let w = 0.5 * (1.0 - libm::cos(core::f64::consts::PI * progress));
        self.lr_min * w + self.lr_max * (1.0 - w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipOutcome {
    /// Global L2 norm before clipping.
    pub norm: f64,
    /// Factor applied to every gradient (1 when below the threshold).
    pub scale: f64,
}

/// Rescales all gradients so their global norm is at most `max_norm`.
pub fn clip_gradients(grads: &mut Grads, set: &ParamSet, max_norm: f64) -> Result<ClipOutcome> {
    if !(max_norm > 0.0) {
        return Err(Error::config(format!("clip threshold {max_norm} must be positive")));
    }
    if let Some(param) = grads.first_non_finite(set) {
        return Err(Error::NonFiniteGradient { param });
    }
    let norm = grads.global_norm();
    let scale = if norm > max_norm { max_norm / norm } else { 1.0 };
    if scale != 1.0 {
        grads.scale(scale);
    }
    Ok(ClipOutcome { norm, scale })
}

/// AdamW with bias correction and decoupled weight decay on tensors flagged
/// for decay. Frozen tensors have no moments and are never touched.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec<Option<Tensor>>,
    pub v: Vec<Option<Tensor>>,
    pub t: u64,
}

impl AdamW {
    pub fn new(set: &ParamSet, weight_decay: f64) -> Self {
        let zeros = || -> Vec<Option<Tensor>> {
            set.iter().map(|p| p.trainable.then(|| Tensor::zeros(p.value.shape()))).collect()
        };
        AdamW {
            beta1: BETA1,
            beta2: BETA2,
            eps: ADAM_EPS,
            weight_decay,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, set: &mut ParamSet, grads: &Grads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (id, g) in grads.iter() {
            let decay = set.get(id).decay;
            let (Some(m), Some(v)) = (self.m[id.0].as_mut(), self.v[id.0].as_mut()) else {
                continue;
            };
            let theta = set.value_mut(id).data_mut();
            for (((p, &g), m), v) in theta.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                if decay {
                    *p -= lr * self.weight_decay * *p;
                }
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// G: micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    pub seed: u64,
    pub lr_max: f64,
    /// Defaults to `lr_max / 10`.
    pub lr_min: Option<f64>,
    /// Defaults to `max(1000, N·T·100)` for HRM and 1000 otherwise.
    pub warmup_steps: Option<u64>,
    pub max_steps: u64,
    pub eval_interval: u64,
    pub clip_base: f64,
    pub weight_decay: f64,
    /// Divides the learning rate by S for multi-pass HRM runs.
    pub scale_lr_by_passes: bool,
    /// Ends the run at the first evaluation below this cross-entropy.
    pub stop_below_val_ce: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            grad_accum: 1,
            seed: 0,
            lr_max: 3e-4,
            lr_min: None,
            warmup_steps: None,
            max_steps: 1000,
            eval_interval: 100,
            clip_base: 1.0,
            weight_decay: WEIGHT_DECAY,
            scale_lr_by_passes: false,
            stop_below_val_ce: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.grad_accum == 0 {
            return Err(Error::config("batch_size and grad_accum must be at least 1"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval must be at least 1"));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(Error::config(format!("lr_max {} must be positive", self.lr_max)));
        }
        if !(self.clip_base > 0.0) {
            return Err(Error::config(format!("clip_base {} must be positive", self.clip_base)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config(format!("weight_decay {} must be non-negative", self.weight_decay)));
        }
        Ok(())
    }
}

/// One optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Steps completed after this one.
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub clip_scale: f64,
    pub lr: f64,
    pub gate_mean: Option<f64>,
    pub norm_zl: Option<f64>,
    pub norm_zh: Option<f64>,
    pub stability_violations: usize,
}

/// One evaluation point of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: u64,
    pub train_loss: f64,
    pub val_ce: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub wall_seconds: Option<f64>,
    pub gate_mean: Option<f64>,
    pub norm_zl: Option<f64>,
    pub norm_zh: Option<f64>,
    pub stability_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub best_val_ce: f64,
    pub final_val_ce: f64,
    pub stability_violations: usize,
}

/// Steps whose fast-state update exceeds `max(previous, injection)`.
pub fn stability_violations(trace: &[StepRecord]) -> Vec<&StepRecord> {
    trace
        .iter()
        .filter(|r| r.zl_inf_after > r.zl_inf_before.max(r.injection_inf) + STABILITY_TOL)
        .collect()
}

pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub schedule: Schedule,
    pub config: TrainConfig,
    pub data: DataSplit,
    /// Completed optimizer steps.
    pub step: u64,
    pub clip_threshold: f64,
    pub warnings: Vec<String>,
    violations: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig, data: DataSplit) -> Result<Self> {
        config.validate()?;
        if data.seq_len != model.seq_len() {
            return Err(Error::config(format!(
                "data sequence length {} differs from model {}",
                data.seq_len,
                model.seq_len()
            )));
        }
        let mut warnings = Vec::new();
        let mut lr_max = config.lr_max;
        let warmup = match (&model, config.warmup_steps) {
            (_, Some(w)) => w,
            (Model::Hrm(m), None) => default_warmup(m.config.cycles, m.config.steps_per_cycle),
            (_, None) => 1000,
        };
        if let Model::Hrm(m) = &model {
            let s = m.config.passes;
            if s > 1 {
                if config.scale_lr_by_passes {
                    lr_max /= s as f64;
                    warnings.push(format!("S={s}: learning rate scaled by 1/S to {lr_max}"));
                } else {
                    warnings.push(format!(
                        "S={s}: gradients of {s} passes add up, so the effective learning rate grows with S; \
                         set scale_lr_by_passes to divide it by S"
                    ));
                }
            }
        }
        let schedule = Schedule {
            lr_max,
            lr_min: config.lr_min.unwrap_or(lr_max / 10.0),
            warmup_steps: warmup,
            max_steps: config.max_steps,
        };
        let clip_threshold = config.clip_base * model.clip_fraction();
        let optimizer = AdamW::new(model.params(), config.weight_decay);
        Ok(Trainer {
            model,
            optimizer,
            schedule,
            config,
            data,
            step: 0,
            clip_threshold,
            warnings,
            violations: 0,
        })
    }

    /// The `B·G` sequences of the optimizer step `step`, in micro-batch order.
    pub fn step_batch(&self, step: u64) -> Vec<Sequence> {
        let mut rng = Rng::derive(self.config.seed, step);
        self.data.sample(&mut rng, self.config.batch_size * self.config.grad_accum)
    }

    /// Per-sequence gradients of `loss / (B·G)`, reduced in sequence order.
    pub fn accumulate(&self, batch: &[Sequence]) -> Result<(Grads, f64, Vec<StepRecord>)> {
        let params = self.model.params();
        let mut grads = Grads::zeros_like(params);
        let weight = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut trace = Vec::new();
        for seq in batch {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let out = self.model.loss(&mut tape, &bound, &seq.inputs, &seq.targets, None)?;
            loss += weight * tape.value(out.loss).item();
            tape.backward(out.loss)?;
            grads.accumulate(&tape, &bound, weight);
            trace.extend(out.trace);
        }
        Ok((grads, loss, trace))
    }

    pub fn train_step(&mut self) -> Result<StepReport> {
        let lr = self.schedule.lr_at(self.step);
        let batch = self.step_batch(self.step);
        let micro = self.config.batch_size;
        let mut grads = Grads::zeros_like(self.model.params());
        let mut loss = 0.0;
        let mut trace = Vec::new();
        let g = self.config.grad_accum as f64;
        for chunk in batch.chunks(micro) {
            let (part, part_loss, part_trace) = self.accumulate(chunk)?;
            for (id, t) in part.iter() {
                grads.get_mut(id).expect("same layout").add_scaled(t, 1.0 / g)?;
            }
            loss += part_loss / g;
            trace.extend(part_trace);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "training loss" });
        }
        let clip = clip_gradients(&mut grads, self.model.params(), self.clip_threshold)?;
        self.optimizer.step(self.model.params_mut(), &grads, lr);
        self.step += 1;
        let violations = stability_violations(&trace).len();
        self.violations += violations;
        let mean = |f: fn(&StepRecord) -> f64| {
            (!trace.is_empty()).then(|| trace.iter().map(f).sum::<f64>() / trace.len() as f64)
        };
        Ok(StepReport {
            step: self.step,
            loss,
            grad_norm: clip.norm,
            clip_scale: clip.scale,
            lr,
            gate_mean: mean(|r| r.gate_mean),
            norm_zl: mean(|r| r.norm_zl),
            norm_zh: mean(|r| r.norm_zh_after),
            stability_violations: violations,
        })
    }

    /// Mean cross-entropy over the held-out sequences.
    pub fn evaluate(&self) -> Result<f64> {
        let mut total = 0.0;
        for seq in &self.data.eval {
            total += self.model.eval_ce(&seq.inputs, &seq.targets)?;
        }
        Ok(total / self.data.eval.len() as f64)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self.model.params(), &self.optimizer, self.step)
    }

    /// Continues from `ckpt`; the data order depends only on the seed and
    /// the step, so a resumed run matches an uninterrupted one.
    pub fn resume(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.restore(self.model.params_mut(), &mut self.optimizer)?;
        self.step = ckpt.step;
        Ok(())
    }

    pub fn total_violations(&self) -> usize {
        self.violations
    }

    /// Trains until `max_steps`, evaluating every `eval_interval` steps and
    /// after the last one. `observer` sees every evaluation record together
    /// with the trainer state that produced it.
    pub fn run(&mut self, observer: &mut dyn FnMut(&MetricsRecord, &Trainer)) -> Result<TrainSummary> {
        let mut best = f64::INFINITY;
        let mut last = f64::NAN;
        while self.step < self.config.max_steps {
            let report = self.train_step()?;
            let due = self.step % self.config.eval_interval == 0 || self.step == self.config.max_steps;
            if !due {
                continue;
            }
            let val_ce = self.evaluate()?;
            best = best.min(val_ce);
            last = val_ce;
            let record = MetricsRecord {
                iter: self.step,
                train_loss: report.loss,
                val_ce,
                grad_norm: report.grad_norm,
                lr: report.lr,
                wall_seconds: None,
                gate_mean: report.gate_mean,
                norm_zl: report.norm_zl,
                norm_zh: report.norm_zh,
                stability_violations: self.violations,
            };
            observer(&record, self);
            if self.config.stop_below_val_ce.is_some_and(|t| val_ce < t) {
                break;
            }
        }
        Ok(TrainSummary {
            steps: self.step,
            best_val_ce: best,
            final_val_ce: last,
            stability_violations: self.violations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{TransformerConfig, UniTfConfig};
    use crate::data::{Corpus, SyntheticTask};
    use crate::hrm::HrmConfig;
    use crate::model::ModelConfig;
    use crate::params::ParamId;

    #[test]
    fn warmup_defaults() {
        assert_eq!(default_warmup(2, 2), 1000);
        assert_eq!(default_warmup(4, 3), 1200);
    }

    #[test]
    fn schedule_shape() {
        let s = Schedule {
            lr_max: 1e-3,
            lr_min: 1e-4,
            warmup_steps: 100,
            max_steps: 1100,
        };
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(50), 5e-4);
        assert_eq!(s.lr_at(100), 1e-3);
        assert!((s.lr_at(600) - 5.5e-4).abs() < 1e-15);
        assert!((s.lr_at(1100) - 1e-4).abs() < 1e-15);
        assert_eq!(s.lr_at(5000), 1e-4);
        assert!((s.lr_at(99) - s.lr_at(100)).abs() < 1e-5 + 1e-12);
    }

    fn grads_with(values: &[f64]) -> (ParamSet, Grads) {
        let mut set = ParamSet::new();
        let ids: Vec<ParamId> = values
            .iter()
            .enumerate()
            .map(|(i, _)| set.add(&format!("p{i}"), Tensor::scalar(0.0), true, false))
            .collect();
        let mut grads = Grads::zeros_like(&set);
        for (id, v) in ids.iter().zip(values) {
            grads.get_mut(*id).unwrap().data_mut()[0] = *v;
        }
        (set, grads)
    }

    #[test]
    fn clipping() {
        let (set, mut g) = grads_with(&[0.3, 0.4]);
        let out = clip_gradients(&mut g, &set, 1.0).unwrap();
        assert_eq!(out.scale, 1.0);
        assert_eq!(g.get(ParamId(0)).unwrap().item(), 0.3);
        let (set, mut g) = grads_with(&[0.6, 0.8]);
        let out = clip_gradients(&mut g, &set, 0.5).unwrap();
        assert_eq!(out.norm, 1.0);
        assert_eq!(out.scale, 0.5);
        assert_eq!(g.get(ParamId(1)).unwrap().item(), 0.4);
        assert!(g.global_norm() <= 0.5 + 1e-12);
        let (set, mut g) = grads_with(&[0.6, f64::NAN]);
        assert_eq!(
            clip_gradients(&mut g, &set, 0.5).unwrap_err(),
            Error::NonFiniteGradient { param: "p1".into() }
        );
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut set = ParamSet::new();
        let theta = set.add("theta", Tensor::scalar(1.0), true, false);
        let mut opt = AdamW::new(&set, 0.0);
        let mut g = Grads::zeros_like(&set);
        g.get_mut(theta).unwrap().data_mut()[0] = 2.0;
        opt.step(&mut set, &g, 0.1);
        // m̂ = 2, v̂ = 4, so the step is 0.1 · 2 / (2 + 1e-8).
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((set.value(theta).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_and_decay() {
        let mut set = ParamSet::new();
        let a = set.add("a", Tensor::scalar(3.0), true, true);
        let frozen = set.add("f", Tensor::scalar(3.0), false, true);
        let g = Grads::zeros_like(&set);
        let mut opt = AdamW::new(&set, 0.0);
        opt.step(&mut set, &g, 0.1);
        assert_eq!(set.value(a).item(), 3.0);
        let mut opt = AdamW::new(&set, 0.1);
        opt.step(&mut set, &g, 0.1);
        assert!((set.value(a).item() - 3.0 * 0.99).abs() < 1e-15);
        assert_eq!(set.value(frozen).item(), 3.0);
    }

    fn split(seq_len: usize) -> DataSplit {
        let task = SyntheticTask::Copy {
            len: 600,
            period: 8,
            segment: None,
        };
        Corpus::synthetic(&task, &mut Rng::new(5)).unwrap().split(seq_len).unwrap()
    }

    fn hrm_config() -> ModelConfig {
        ModelConfig::Hrm(HrmConfig {
            d: 8,
            heads: 2,
            vocab: 256,
            seq_len: 8,
            cycles: 2,
            steps_per_cycle: 2,
            passes: 1,
            grad_window: 2,
            gate_entropy: 0.01,
        })
    }

    fn trainer(config: &ModelConfig, batch: usize, accum: usize) -> Trainer {
        let model = Model::new(config, &mut Rng::new(11), None).unwrap();
        let train = TrainConfig {
            batch_size: batch,
            grad_accum: accum,
            seed: 3,
            lr_max: 1e-2,
            warmup_steps: Some(5),
            max_steps: 50,
            eval_interval: 10,
            ..Default::default()
        };
        Trainer::new(model, train, split(config.seq_len())).unwrap()
    }

    #[test]
    fn clip_threshold_is_proportional_to_window() {
        let t = trainer(&hrm_config(), 1, 1);
        assert_eq!(t.clip_threshold, 0.5);
        let mut no_warmup = TrainConfig::default();
        no_warmup.warmup_steps = None;
        let model = Model::new(&hrm_config(), &mut Rng::new(1), None).unwrap();
        let t = Trainer::new(model, no_warmup, split(8)).unwrap();
        assert_eq!(t.schedule.warmup_steps, 1000);
        assert!((t.schedule.lr_min - 3e-5).abs() < 1e-18);
    }

    #[test]
    fn accumulation_matches_doubled_batch() {
        let configs = [
            hrm_config(),
            ModelConfig::Transformer(TransformerConfig {
                d: 8,
                heads: 2,
                vocab: 256,
                seq_len: 8,
                layers: 2,
            }),
            ModelConfig::UniTf(UniTfConfig {
                d: 8,
                heads: 2,
                vocab: 256,
                seq_len: 8,
                steps: 3,
                grad_window: 2,
            }),
        ];
        for config in &configs {
            let mut a = trainer(config, 1, 2);
            let mut b = trainer(config, 2, 1);
            for _ in 0..10 {
                a.train_step().unwrap();
                b.train_step().unwrap();
            }
            for (pa, pb) in a.model.params().iter().zip(b.model.params().iter()) {
                for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
                    assert!((x - y).abs() <= 1e-10 * x.abs().max(y.abs()).max(1e-300));
                }
            }
        }
    }

    #[test]
    fn run_is_deterministic_and_reports() {
        let run = || {
            let mut t = trainer(&hrm_config(), 2, 1);
            let mut records = Vec::new();
            let summary = t.run(&mut |r, _| records.push(r.clone())).unwrap();
            (summary, records)
        };
        let (s1, r1) = run();
        let (s2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(s1, s2);
        assert_eq!(r1.len(), 5);
        assert_eq!(s1.stability_violations, 0);
        assert!(r1.iter().all(|r| r.gate_mean.is_some()));
        assert!(r1.last().unwrap().val_ce < r1[0].val_ce + 1.0);
    }

    #[test]
    fn resumed_run_matches_uninterrupted() {
        let mut straight = trainer(&hrm_config(), 2, 1);
        for _ in 0..6 {
            straight.train_step().unwrap();
        }
        let mut first = trainer(&hrm_config(), 2, 1);
        for _ in 0..3 {
            first.train_step().unwrap();
        }
        let bytes = first.checkpoint().encode();
        let mut second = trainer(&hrm_config(), 2, 1);
        second.resume(&Checkpoint::decode(&bytes).unwrap()).unwrap();
        for _ in 0..3 {
            second.train_step().unwrap();
        }
        assert_eq!(second.model.params(), straight.model.params());
        assert_eq!(second.optimizer, straight.optimizer);
    }

    #[test]
    fn multi_pass_runs_warn_about_the_learning_rate() {
        let mut config = hrm_config();
        if let ModelConfig::Hrm(c) = &mut config {
            c.passes = 2;
        }
        let model = Model::new(&config, &mut Rng::new(1), None).unwrap();
        let t = Trainer::new(model.clone(), TrainConfig::default(), split(8)).unwrap();
        assert_eq!(t.warnings.len(), 1);
        let scaled = TrainConfig {
            scale_lr_by_passes: true,
            ..Default::default()
        };
        let t = Trainer::new(model, scaled, split(8)).unwrap();
        assert_eq!(t.schedule.lr_max, 1.5e-4);
    }
}
