//! One interface over the three architectures for the trainer and analyses.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{TransformerConfig, TransformerModel, UniTfConfig, UniTfModel};
use crate::error::{Error, Result};
use crate::hrm::{ForwardOptions, HrmConfig, HrmModel, PassAnchor, StepRecord};
use crate::params::{BoundParams, ParamSet};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hrm,
    Transformer,
    UniTf,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Hrm => "hrm",
            ModelKind::Transformer => "transformer",
            ModelKind::UniTf => "unitf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hrm" => Ok(ModelKind::Hrm),
            "transformer" => Ok(ModelKind::Transformer),
            "unitf" => Ok(ModelKind::UniTf),
            other => Err(Error::config(alloc::format!(
                "unknown model kind `{other}` (expected hrm, transformer or unitf)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Hrm(HrmConfig),
    Transformer(TransformerConfig),
    UniTf(UniTfConfig),
}

impl ModelConfig {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Hrm(_) => ModelKind::Hrm,
            ModelConfig::Transformer(_) => ModelKind::Transformer,
            ModelConfig::UniTf(_) => ModelKind::UniTf,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self {
            ModelConfig::Hrm(c) => c.seq_len,
            ModelConfig::Transformer(c) => c.seq_len,
            ModelConfig::UniTf(c) => c.seq_len,
        }
    }

    pub fn vocab(&self) -> usize {
        match self {
            ModelConfig::Hrm(c) => c.vocab,
            ModelConfig::Transformer(c) => c.vocab,
            ModelConfig::UniTf(c) => c.vocab,
        }
    }

    /// `K/M` for shared-weight models, 1 for the stacked Transformer.
    pub fn clip_fraction(&self) -> f64 {
        match self {
            ModelConfig::Hrm(c) => c.grad_window as f64 / c.steps_per_pass() as f64,
            ModelConfig::Transformer(_) => 1.0,
            ModelConfig::UniTf(c) => c.grad_window as f64 / c.steps as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Hrm(c) => c.validate(),
            ModelConfig::Transformer(c) => c.validate(),
            ModelConfig::UniTf(c) => c.validate(),
        }
    }
}

/// The training objective of one sequence.
pub struct LossOutput {
    pub loss: Var,
    /// Cross-entropy of the prediction the model would be evaluated on: the
    /// last pass for HRM.
    pub ce: f64,
    /// Recorded-window start states, flattened in pass order.
    pub anchors: Vec<Tensor>,
    /// HRM per-step trace; empty for the baselines.
    pub trace: Vec<StepRecord>,
}

pub trait LanguageModel {
    fn kind(&self) -> ModelKind;
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    fn seq_len(&self) -> usize;
    fn vocab(&self) -> usize;
    /// `K/M` for shared-weight models, 1 for the stacked Transformer.
    fn clip_fraction(&self) -> f64;

    /// With `anchors` (from an earlier [`LossOutput`]) each recorded window
    /// starts from the stored state instead of running the warm-up.
    fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[usize],
        targets: &[usize],
        anchors: Option<&[Tensor]>,
    ) -> Result<LossOutput>;

    fn eval_ce(&self, tokens: &[usize], targets: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let mut ce = 0.0;
        tape.no_grad(|t| {
            let bound = self.params().bind(t);
            ce = self.loss(t, &bound, tokens, targets, None)?.ce;
            Ok(Vec::new())
        })?;
        Ok(ce)
    }
}

impl LanguageModel for HrmModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Hrm
    }
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }
    fn vocab(&self) -> usize {
        self.config.vocab
    }
    fn clip_fraction(&self) -> f64 {
        self.config.grad_window as f64 / self.config.steps_per_pass() as f64
    }

    fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[usize],
        targets: &[usize],
        anchors: Option<&[Tensor]>,
    ) -> Result<LossOutput> {
        let passes = anchors
            .map(|a| {
                if a.len() != 2 * self.config.passes {
                    return Err(Error::config(alloc::format!(
                        "expected {} anchor tensors, got {}",
                        2 * self.config.passes,
                        a.len()
                    )));
                }
                Ok(a.chunks(2)
                    .map(|pair| PassAnchor {
                        z_h: pair[0].clone(),
                        z_l: pair[1].clone(),
                    })
                    .collect::<Vec<_>>())
            })
            .transpose()?;
        let options = ForwardOptions {
            anchors: passes.as_deref(),
            ..Default::default()
        };
        let out = self.forward_loss(tape, bound, tokens, targets, &options)?;
        Ok(LossOutput {
            loss: out.loss,
            ce: *out.pass_ce.last().expect("at least one pass"),
            anchors: out.anchors.into_iter().flat_map(|a| [a.z_h, a.z_l]).collect(),
            trace: out.trace,
        })
    }
}

impl LanguageModel for TransformerModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Transformer
    }
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }
    fn vocab(&self) -> usize {
        self.config.vocab
    }
    fn clip_fraction(&self) -> f64 {
        1.0
    }

    fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[usize],
        targets: &[usize],
        _anchors: Option<&[Tensor]>,
    ) -> Result<LossOutput> {
        let loss = TransformerModel::loss(self, tape, bound, tokens, targets)?;
        Ok(LossOutput {
            loss,
            ce: tape.value(loss).item(),
            anchors: Vec::new(),
            trace: Vec::new(),
        })
    }
}

impl LanguageModel for UniTfModel {
    fn kind(&self) -> ModelKind {
        ModelKind::UniTf
    }
    fn params(&self) -> &ParamSet {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }
    fn seq_len(&self) -> usize {
        self.config.seq_len
    }
    fn vocab(&self) -> usize {
        self.config.vocab
    }
    fn clip_fraction(&self) -> f64 {
        self.config.grad_window as f64 / self.config.steps as f64
    }

    fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[usize],
        targets: &[usize],
        anchors: Option<&[Tensor]>,
    ) -> Result<LossOutput> {
        let anchor = anchors.and_then(|a| a.first());
        let (loss, anchor) = UniTfModel::loss(self, tape, bound, tokens, targets, anchor)?;
        Ok(LossOutput {
            loss,
            ce: tape.value(loss).item(),
            anchors: vec![anchor],
            trace: Vec::new(),
        })
    }
}

/// Any of the three architectures.
#[derive(Clone, Debug)]
pub enum Model {
    Hrm(HrmModel),
    Transformer(TransformerModel),
    UniTf(UniTfModel),
}

impl Model {
    pub fn new(config: &ModelConfig, rng: &mut Rng, init_std_override: Option<f64>) -> Result<Self> {
        Ok(match config {
            ModelConfig::Hrm(c) => Model::Hrm(HrmModel::new(c.clone(), rng, init_std_override)?),
            ModelConfig::Transformer(c) => {
                Model::Transformer(TransformerModel::new(c.clone(), rng, init_std_override)?)
            }
            ModelConfig::UniTf(c) => Model::UniTf(UniTfModel::new(c.clone(), rng, init_std_override)?),
        })
    }

    pub fn as_dyn(&self) -> &dyn LanguageModel {
        match self {
            Model::Hrm(m) => m,
            Model::Transformer(m) => m,
            Model::UniTf(m) => m,
        }
    }

    pub fn as_dyn_mut(&mut self) -> &mut dyn LanguageModel {
        match self {
            Model::Hrm(m) => m,
            Model::Transformer(m) => m,
            Model::UniTf(m) => m,
        }
    }

    pub fn as_hrm(&self) -> Option<&HrmModel> {
        match self {
            Model::Hrm(m) => Some(m),
            _ => None,
        }
    }
}

impl LanguageModel for Model {
    fn kind(&self) -> ModelKind {
        self.as_dyn().kind()
    }
    fn params(&self) -> &ParamSet {
        self.as_dyn().params()
    }
    fn params_mut(&mut self) -> &mut ParamSet {
        self.as_dyn_mut().params_mut()
    }
    fn seq_len(&self) -> usize {
        self.as_dyn().seq_len()
    }
    fn vocab(&self) -> usize {
        self.as_dyn().vocab()
    }
    fn clip_fraction(&self) -> f64 {
        self.as_dyn().clip_fraction()
    }
    fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        tokens: &[usize],
        targets: &[usize],
        anchors: Option<&[Tensor]>,
    ) -> Result<LossOutput> {
        self.as_dyn().loss(tape, bound, tokens, targets, anchors)
    }
}

/// Full-model gradient check against the objective the truncated gradient
/// differentiates: window-start states are recorded once at the unperturbed
/// parameters and held fixed for every finite-difference probe.
pub fn model_grad_check(
    model: &dyn LanguageModel,
    tokens: &[usize],
    targets: &[usize],
    eps: f64,
) -> Result<crate::gradcheck::GradCheckReport> {
    let anchors = anchors_at(model, tokens, targets)?;
    crate::gradcheck::grad_check(model.params(), eps, |t, b| {
        Ok(model.loss(t, b, tokens, targets, Some(&anchors))?.loss)
    })
}

/// Window-start states of an evaluation at the current parameters.
pub fn anchors_at(model: &dyn LanguageModel, tokens: &[usize], targets: &[usize]) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let mut anchors = Vec::new();
    tape.no_grad(|t| {
        let bound = model.params().bind(t);
        anchors = model.loss(t, &bound, tokens, targets, None)?.anchors;
        Ok(Vec::new())
    })?;
    Ok(anchors)
}
