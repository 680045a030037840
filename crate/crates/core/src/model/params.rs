use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tensor::{Scalar, Tensor};

/// What a parameter tensor is, as far as initialisation is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize, fan_out: usize },
    LinearWeight { fan_in: usize, fan_out: usize },
    Bias,
    BnGamma,
    BnBeta,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Flat, ordered list of trainable tensors. The order in which parameters
/// are registered is the order optimisers and checkpoints see them.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub(crate) fn add(&mut self, name: String, kind: ParamKind, shape: Vec<usize>) -> ParamId {
        let mut tensor = Tensor::zeros(shape);
        tensor.ensure_grad();
        self.params.push(Parameter { name, kind, tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[T]) {
        let g = self.params[id.0].tensor.ensure_grad();
        debug_assert_eq!(g.len(), grad.len());
        for (a, &b) in g.iter_mut().zip(grad) {
            *a = *a + b;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> Option<&Parameter<T>> {
        self.params.get(index)
    }

    pub fn find(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Sum of element counts over all parameters.
    pub fn total_numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Mutable gradient slices in parameter order.
    pub fn grads_mut(&mut self) -> Vec<&mut [T]> {
        self.params.iter_mut().map(|p| p.tensor.ensure_grad()).collect()
    }

    /// Overwrites the values of parameter `index`, keeping its shape.
    pub fn set_values(&mut self, index: usize, values: &[T]) -> Result<()> {
        let p = self
            .params
            .get_mut(index)
            .ok_or_else(|| Error::config(format!("no parameter #{index}")))?;
        if p.tensor.numel() != values.len() {
            return Err(Error::config(format!(
                "{} has {} values, got {}",
                p.name,
                p.tensor.numel(),
                values.len()
            )));
        }
        p.tensor.data_mut().copy_from_slice(values);
        Ok(())
    }
}

/// Non-trainable per-channel statistics of each batch-norm layer.
#[derive(Clone, Debug, Default)]
pub struct BufferStore<T> {
    pub(crate) entries: Vec<(String, RunningStats<T>)>,
}

impl<T: Scalar> BufferStore<T> {
    pub(crate) fn add(&mut self, name: String, channels: usize) -> BufferId {
        self.entries.push((name, RunningStats::new(channels)));
        BufferId(self.entries.len() - 1)
    }

    pub(crate) fn get_mut(&mut self, id: BufferId) -> &mut RunningStats<T> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &RunningStats<T>)> {
        self.entries.iter().map(|(n, s)| (n.as_str(), s))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut RunningStats<T>)> {
        self.entries.iter_mut().map(|(n, s)| (n.as_str(), s))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
