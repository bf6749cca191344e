use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::error::{contract, ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Insertion order is the checkpoint order. Frozen parameters enter graphs
/// as constants and are skipped by the optimizer.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    frozen: Vec<bool>,
    index: HashMap<String, ParamId>,
}

/// Uniform init in `[-s, s]` with `s = sqrt(1 / fan_in)`.
pub fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let s = (1.0 / fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-s..=s)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        ensure!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_requires_grad(true));
        self.frozen.push(false);
        Ok(id)
    }

    /// Inserts a fan-in-scaled uniform tensor.
    pub fn init(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<ParamId> {
        self.insert(name, fan_in_uniform(shape, fan_in, rng))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.id(name)
            .map(|id| self.get(id))
            .ok_or_else(|| contract!("unknown parameter {name}"))
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.frozen[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.frozen[id.0] = frozen;
    }

    /// Freezes every parameter for which `keep_trainable` returns false.
    pub fn freeze_except(&mut self, keep_trainable: impl Fn(&str) -> bool) {
        for i in 0..self.names.len() {
            self.frozen[i] = !keep_trainable(&self.names[i]);
        }
    }

    pub fn total_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Places every parameter on `g`, returning handles indexed by [`ParamId`].
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .zip(&self.frozen)
            .map(|(t, &frozen)| {
                if frozen {
                    g.constant(t.clone())
                } else {
                    g.leaf(t.clone().with_requires_grad(true))
                }
            })
            .collect();
        BoundParams { vars }
    }

    /// Places every parameter on `g` as a constant, for inference.
    pub fn bind_constants(&self, g: &mut Graph) -> BoundParams {
        let vars = self.tensors.iter().map(|t| g.constant(t.clone())).collect();
        BoundParams { vars }
    }

    /// Adds the gradients of bound parameters into their accumulators. A
    /// trainable parameter that received no gradient gets zeros.
    pub fn accumulate(&mut self, bound: &BoundParams, grads: &Gradients) -> Result<()> {
        ensure!(
            bound.vars.len() == self.tensors.len(),
            "bound parameter set does not match the store"
        );
        for (i, &v) in bound.vars.iter().enumerate() {
            if self.frozen[i] {
                continue;
            }
            let t = &mut self.tensors[i];
            match grads.get(v) {
                Some(g) => t.accumulate_grad(g)?,
                None => t.accumulate_grad(&vec![0.0; t.len()])?,
            }
        }
        Ok(())
    }
}

/// Graph handles for one [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps handles created elsewhere (for example leaves under a gradient check).
    pub fn from_vars(vars: Vec<Var>) -> Self {
        BoundParams { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<ParamId> for BoundParams {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = fan_in_uniform(&[50, 16], 16, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.25));
        assert!(t.data().iter().any(|v| v.abs() > 0.2));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.zeros("a", &[2]).unwrap();
        assert!(s.zeros("a", &[3]).is_err());
    }

    #[test]
    fn frozen_params_bind_as_constants() {
        let mut s = ParamStore::new();
        let a = s.zeros("a", &[2]).unwrap();
        let b = s.zeros("b", &[2]).unwrap();
        s.freeze_except(|n| n == "b");
        let mut g = Graph::new();
        let bound = s.bind(&mut g);
        let sum = g.add(bound[a], bound[b]).unwrap();
        let loss = g.sum(sum);
        let grads = g.backward(loss).unwrap();
        s.accumulate(&bound, &grads).unwrap();
        assert!(s.get(a).grad().is_none());
        assert_eq!(s.get(b).grad().unwrap(), &[1.0, 1.0]);
    }
}
