//! Named parameter storage shared by the tape, the optimizer and checkpoints.

use std::collections::BTreeMap;

use crate::error::{PadError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    /// `None` for frozen tensors.
    pub grad: Option<Vec<f64>>,
    /// Excluded from decoupled weight decay when false.
    pub decay: bool,
}

impl Parameter {
    pub fn requires_grad(&self) -> bool {
        self.grad.is_some()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool, decay: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(PadError::InvalidArgument(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        let grad = trainable.then(|| vec![0.0; value.numel()]);
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            decay,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    /// Learnable tensor subject to weight decay.
    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, true, true)
    }

    pub fn add_no_decay(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, true, false)
    }

    /// Frozen tensor: never receives gradient, never updated.
    pub fn add_frozen(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.insert(name, value, false, false)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f64]> {
        self.params[id.0].grad.as_deref()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if let Some(g) = p.grad.as_mut() {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Copy a value in, keeping the destination shape.
    pub fn assign(&mut self, id: ParamId, value: &Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(PadError::shape(
                "assign",
                format!("{}: {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            ));
        }
        p.value = value.clone();
        Ok(())
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
