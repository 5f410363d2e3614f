//! Named parameter storage and gradient accumulators.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::Index;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    /// Frozen tensors (state prototypes) are stored but never optimized.
    pub trainable: bool,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

/// Ordered, named tensors. Insertion order is the canonical order for
/// checkpoints, gradient reduction and finite-difference sweeps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool, decay: bool) -> ParamId {
        debug_assert!(self.find(name).is_none(), "duplicate parameter {name}");
        self.params.push(Param {
            name: name.to_string(),
            value,
            trainable,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total stored elements, frozen tensors included.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Elements that receive optimizer updates.
    pub fn trainable_numel(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Registers every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams(
            self.params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), p.trainable))
                .collect(),
        )
    }

    /// Replaces values from `(name, tensor)` pairs, which must list exactly
    /// this set's tensors in order with matching shapes.
    pub fn load_values(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            let Some((name, t)) = tensors.get(i) else {
                return Err(Error::Schema {
                    name: p.name.clone(),
                    detail: "missing from checkpoint".into(),
                });
            };
            if *name != p.name {
                return Err(Error::Schema {
                    name: p.name.clone(),
                    detail: alloc::format!("checkpoint has `{name}` at this position"),
                });
            }
            if t.shape() != p.value.shape() {
                return Err(Error::Schema {
                    name: p.name.clone(),
                    detail: alloc::format!("shape {:?} vs checkpoint {:?}", p.value.shape(), t.shape()),
                });
            }
        }
        if let Some((extra, _)) = tensors.get(self.params.len()) {
            return Err(Error::Schema {
                name: extra.clone(),
                detail: "not present in the model".into(),
            });
        }
        for (p, (_, t)) in self.params.iter_mut().zip(tensors) {
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect()
    }
}

/// Tape handles for every tensor of a [`ParamSet`], index-aligned.
#[derive(Clone, Debug)]
pub struct BoundParams(pub Vec<Var>);

impl Index<ParamId> for BoundParams {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Index<usize> for BoundParams {
    type Output = Var;
    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}

/// Per-parameter gradient accumulators, index-aligned with a [`ParamSet`].
/// Frozen parameters have no slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    slots: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn zeros_like(set: &ParamSet) -> Self {
        Grads {
            slots: set
                .iter()
                .map(|p| p.trainable.then(|| Tensor::zeros(p.value.shape())))
                .collect(),
        }
    }

    /// Adds `scale ×` the tape gradients of the bound parameters.
    pub fn accumulate(&mut self, tape: &Tape, bound: &BoundParams, scale: f64) {
        for (slot, &var) in self.slots.iter_mut().zip(&bound.0) {
            if let (Some(acc), Some(g)) = (slot.as_mut(), tape.grad(var)) {
                acc.add_scaled(g, scale).expect("gradient shape mirrors parameter");
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots[id.0].as_ref()
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.slots[id.0].as_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|t| (ParamId(i), t)))
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(self.iter().map(|(_, g)| g.sum_squares()).sum())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.slots.iter_mut().flatten() {
            t.scale_in_place(factor);
        }
    }

    /// First parameter holding a non-finite gradient entry.
    pub fn first_non_finite(&self, set: &ParamSet) -> Option<String> {
        self.iter()
            .find(|(_, g)| !g.is_finite())
            .map(|(id, _)| set.get(id).name.clone())
    }
}
