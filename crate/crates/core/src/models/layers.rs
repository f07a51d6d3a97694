use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::params::{Bound, ParamId, ParamStore};
use crate::slots::SlotRange;

/// Affine map `x·W + b`, `W` stored `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Uniform fan-in initialization on `[−1/√in, 1/√in]` for weights and bias.
    pub fn init(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(Error::invalid(format!("layer `{name}` has a zero width ({input} → {output})")));
        }
        let bound = 1.0 / (input as f64).sqrt();
        let w: Vec<f64> = (0..input * output).map(|_| rng.gen_range(-bound..bound)).collect();
        let b: Vec<f64> = (0..output).map(|_| rng.gen_range(-bound..bound)).collect();
        let weight = store.add(format!("{name}.weight"), Tensor::new(input, output, w)?);
        let bias = store.add(format!("{name}.bias"), Tensor::new(1, output, b)?);
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    /// Re-attaches to existing `{name}.weight` / `{name}.bias` entries.
    pub fn attach(store: &ParamStore, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            store
                .id_of(&format!("{name}.{suffix}"))
                .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}.{suffix}`")))
        };
        let weight = find("weight")?;
        let bias = find("bias")?;
        let (input, output) = store.get(weight).shape();
        if store.get(bias).shape() != (1, output) {
            return Err(Error::Checkpoint(format!("array `{name}.bias` has the wrong shape")));
        }
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let h = g.matmul(x, p.var(self.weight))?;
        g.add(h, p.var(self.bias))
    }
}

/// Stack of ReLU layers mapping inputs to an `m`-dimensional feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpEncoder {
    pub widths: Vec<usize>,
    pub layers: Vec<Linear>,
}

impl MlpEncoder {
    pub fn init(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::invalid("encoder needs an input width and at least one layer width"));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn attach(store: &ParamStore, name: &str, widths: &[usize]) -> Result<Self> {
        let layers: Vec<Linear> = (0..widths.len().saturating_sub(1))
            .map(|i| Linear::attach(store, &format!("{name}.{i}")))
            .collect::<Result<_>>()?;
        for (l, w) in layers.iter().zip(widths.windows(2)) {
            if (l.input, l.output) != (w[0], w[1]) {
                return Err(Error::Checkpoint(format!("encoder widths do not match {widths:?}")));
            }
        }
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            let z = layer.forward(g, p, h)?;
            h = g.relu(z)?;
        }
        Ok(h)
    }
}

/// Two-layer projection `m → hidden → out` with L2-normalized output rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionHead {
    pub first: Linear,
    pub second: Linear,
}

impl ProjectionHead {
    pub fn init(store: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            first: Linear::init(store, &format!("{name}.0"), input, hidden, rng)?,
            second: Linear::init(store, &format!("{name}.1"), hidden, output, rng)?,
        })
    }

    pub fn attach(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            first: Linear::attach(store, &format!("{name}.0"))?,
            second: Linear::attach(store, &format!("{name}.1"))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, features: Var) -> Result<Var> {
        let h = self.first.forward(g, p, features)?;
        let h = g.relu(h)?;
        let z = self.second.forward(g, p, h)?;
        g.normalize_rows(z)
    }
}

/// Linear classifier over a contiguous range of union-space slots.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub linear: Linear,
    pub slots: SlotRange,
}

impl ClassifierHead {
    pub fn init(store: &mut ParamStore, name: &str, input: usize, slots: SlotRange, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            linear: Linear::init(store, name, input, slots.width(), rng)?,
            slots,
        })
    }

    pub fn attach(store: &ParamStore, name: &str, slots: SlotRange) -> Result<Self> {
        let linear = Linear::attach(store, name)?;
        if linear.output != slots.width() {
            return Err(Error::Checkpoint(format!(
                "head width {} does not match slot range {}..{}",
                linear.output, slots.start, slots.end
            )));
        }
        Ok(Self { linear, slots })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, features: Var) -> Result<Var> {
        self.linear.forward(g, p, features)
    }
}

/// Architecture of a projection head: `hidden` and `output` widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub hidden: usize,
    pub output: usize,
}
