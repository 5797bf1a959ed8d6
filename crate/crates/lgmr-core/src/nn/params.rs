//! Named parameter storage shared by the encoder, decoder, and heads.
//!
//! Parameters live outside any graph; each forward pass binds them as leaves
//! so concurrent inference over frozen parameters needs no synchronization.

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Index of one named tensor inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PId(pub(crate) usize);

#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> PId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        PId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.num_elements()).sum()
    }

    pub fn name(&self, id: PId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: PId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: PId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names
            .iter()
            .map(|s| s.as_str())
            .zip(self.tensors.iter_mut())
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }
}

/// All parameters of a set bound as graph leaves, aligned with the set.
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn bind(g: &mut Graph, params: &ParamSet) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|t| g.leaf(t.clone()))
            .collect();
        BoundParams { vars }
    }

    pub fn var(&self, id: PId) -> Var {
        self.vars[id.0]
    }

    /// Collects gradients for every parameter, zeros where the loss does not
    /// depend on it.
    pub fn gradients(&self, params: &ParamSet, grads: &[Option<Tensor>]) -> Vec<Tensor> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, v)| {
                grads[v.0].clone().unwrap_or_else(|| {
                    let t = params.tensor(PId(i));
                    Tensor::zeros(t.rows, t.cols)
                })
            })
            .collect()
    }
}
