use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::autodiff::{Gradients, Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

/// Owned, ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

/// Graph handles for every parameter of a store, valid for one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Collects the gradient of every parameter; `None` for parameters that
    /// were bound without `requires_grad`.
    pub fn gradients(&self, g: &Graph, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.vars
            .iter()
            .map(|&v| g.requires_grad(v).then(|| grads.wrt(v)))
            .collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            frozen: false,
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

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn param(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub(crate) fn param_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Marks every parameter whose name starts with `prefix` as frozen.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for p in &mut self.params {
            if p.name.starts_with(prefix) {
                p.frozen = true;
            }
        }
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = true);
    }

    /// Adds every parameter to `g`. Frozen parameters, and all parameters
    /// when `trainable` is false, are bound as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.input(p.value.clone(), trainable && !p.frozen))
            .collect();
        Bound { vars }
    }

    /// Hash of names, shapes and exact bit patterns of the selected parameters.
    pub fn fingerprint(&self, select: impl Fn(&Param) -> bool) -> u64 {
        let mut h = DefaultHasher::new();
        for p in self.params.iter().filter(|p| select(p)) {
            p.name.hash(&mut h);
            p.value.shape().hash(&mut h);
            for v in p.value.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Replaces values from another store with identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::invalid("parameter stores differ in length"));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::invalid(format!(
                    "parameter `{}` does not match `{}`",
                    dst.name, src.name
                )));
            }
            dst.value = src.value.clone();
            dst.frozen = src.frozen;
        }
        Ok(())
    }
}
