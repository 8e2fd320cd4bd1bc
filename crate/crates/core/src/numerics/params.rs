use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

use super::Tensor;

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    fan_in: Vec<usize>,
    lookup: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. `fan_in` is the input width used for He-normal
    /// initialization; 0 marks a bias.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, fan_in: usize) -> ParamId {
        let name = name.into();
        assert!(!self.lookup.contains_key(&name), "duplicate parameter `{name}`");
        let id = self.names.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        self.fan_in.push(fan_in);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn fan_in(&self, id: ParamId) -> usize {
        self.fan_in[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar coordinates.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Maps a flat coordinate to `(param, offset)`.
    pub fn locate(&self, mut coordinate: usize) -> (ParamId, usize) {
        for (i, t) in self.tensors.iter().enumerate() {
            if coordinate < t.len() {
                return (ParamId(i), coordinate);
            }
            coordinate -= t.len();
        }
        panic!("coordinate out of range");
    }

    /// Replaces every value from another set with the same layout.
    pub fn assign_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.names != other.names
            || self.tensors.iter().zip(&other.tensors).any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::shape("assign_from", "parameter layouts differ"));
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

/// Gradient per parameter, aligned with the owning [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &ParamSet) -> Self {
        Gradients(params.tensors().iter().map(|t| t.map(|_| 0.0)).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn named(&self, params: &ParamSet) -> BTreeMap<String, Tensor> {
        params.ids().map(|id| (params.name(id).to_owned(), self.0[id.0].clone())).collect()
    }
}
