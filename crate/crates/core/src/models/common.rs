use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::layers::Linear;
use crate::models::params::{Bound, ParamStore};

/// Adapter output width (channels entering the shared MLP).
pub const ADAPTER_WIDTH: usize = 256;
/// Width of the common feature space.
pub const COMMON_WIDTH: usize = 128;

/// Per-model feature widths and the shared MLP's layer widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommonSpaceSpec {
    /// Feature width of each model, indexed by model id (0 = student).
    pub model_feature_dims: Vec<usize>,
    pub adapter_width: usize,
    /// Shared MLP widths after the adapter, ending at the common width.
    pub shared_widths: Vec<usize>,
}

impl CommonSpaceSpec {
    pub fn new(model_feature_dims: Vec<usize>) -> Self {
        Self {
            model_feature_dims,
            adapter_width: ADAPTER_WIDTH,
            shared_widths: vec![COMMON_WIDTH, COMMON_WIDTH],
        }
    }

    pub fn common_width(&self) -> usize {
        *self.shared_widths.last().unwrap_or(&self.adapter_width)
    }
}

/// One linear adapter per model into `adapter_width` channels, followed by a
/// single MLP whose parameters every model path shares.
#[derive(Clone, Debug, PartialEq)]
pub struct CommonSpaceStack {
    pub spec: CommonSpaceSpec,
    pub params: ParamStore,
    pub adapters: Vec<Linear>,
    pub shared: Vec<Linear>,
}

impl CommonSpaceStack {
    pub fn init(spec: CommonSpaceSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let adapters = spec
            .model_feature_dims
            .iter()
            .enumerate()
            .map(|(i, &m)| Linear::init(&mut params, &format!("adapter.{i}"), m, spec.adapter_width, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut shared = Vec::new();
        let mut width = spec.adapter_width;
        for (i, &w) in spec.shared_widths.iter().enumerate() {
            shared.push(Linear::init(&mut params, &format!("shared.{i}"), width, w, &mut rng)?);
            width = w;
        }
        Ok(Self {
            spec,
            params,
            adapters,
            shared,
        })
    }

    pub fn from_params(spec: CommonSpaceSpec, params: ParamStore) -> Result<Self> {
        let adapters = (0..spec.model_feature_dims.len())
            .map(|i| Linear::attach(&params, &format!("adapter.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let shared = (0..spec.shared_widths.len())
            .map(|i| Linear::attach(&params, &format!("shared.{i}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            params,
            adapters,
            shared,
        })
    }

    pub fn model_count(&self) -> usize {
        self.adapters.len()
    }

    /// Freezes the per-model adapters (shared MLP stays trainable).
    pub fn freeze_adapters(&mut self, model_ids: impl IntoIterator<Item = usize>) {
        for id in model_ids {
            self.params.freeze_prefix(&format!("adapter.{id}."));
        }
    }

    /// Routes `features` through the adapter of `model_id`, then the shared MLP.
    pub fn to_common(&self, g: &mut Graph, p: &Bound, model_id: usize, features: Var) -> Result<Var> {
        let adapter = self
            .adapters
            .get(model_id)
            .ok_or_else(|| Error::invalid(format!("no adapter for model id {model_id}")))?;
        let mut h = adapter.forward(g, p, features)?;
        for layer in &self.shared {
            h = g.relu(h)?;
            h = layer.forward(g, p, h)?;
        }
        Ok(h)
    }

    pub fn shared_fingerprint(&self) -> u64 {
        self.params.fingerprint(|p| p.name.starts_with("shared."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn probe(stack: &CommonSpaceStack, id: usize, width: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = stack.params.bind(&mut g, false);
        let x = g.constant(Tensor::new(3, width, (0..3 * width).map(|i| (i as f64).cos()).collect())?);
        let out = stack.to_common(&mut g, &p, id, x)?;
        Ok(g.value(out).clone())
    }

    #[test]
    fn routes_every_model_to_common_width() {
        let stack = CommonSpaceStack::init(CommonSpaceSpec::new(vec![8, 5, 12]), 1).unwrap();
        for (id, w) in [(0, 8), (1, 5), (2, 12)] {
            assert_eq!(probe(&stack, id, w).unwrap().shape(), (3, COMMON_WIDTH));
        }
        assert!(probe(&stack, 3, 8).is_err());
    }

    #[test]
    fn shared_mlp_is_one_set_of_parameters() {
        let mut stack = CommonSpaceStack::init(CommonSpaceSpec::new(vec![4, 6]), 2).unwrap();
        let before = probe(&stack, 1, 6).unwrap();
        let id = stack.shared[0].bias;
        stack.params.get_mut(id).data_mut()[0] += 1.0;
        let after = probe(&stack, 1, 6).unwrap();
        assert_ne!(before, after);
    }
}
