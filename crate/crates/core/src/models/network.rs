use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::layers::{ClassifierHead, MlpEncoder, ProjectionHead, ProjectionSpec};
use crate::models::params::{Bound, ParamStore};
use crate::slots::SlotRange;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Teacher,
    Student,
}

/// Widths and label slots of a classifier network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    /// Input width followed by every encoder layer width; the last entry is
    /// the feature dimension `m`.
    pub encoder_widths: Vec<usize>,
    pub projection: Option<ProjectionSpec>,
    pub slots: SlotRange,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.len() < 2 {
            return Err(Error::invalid("encoder_widths needs at least two entries"));
        }
        if let Some(w) = self.encoder_widths.iter().find(|&&w| w == 0) {
            return Err(Error::invalid(format!("zero width {w} in encoder_widths")));
        }
        if let Some(p) = self.projection {
            if p.hidden == 0 || p.output == 0 {
                return Err(Error::invalid("projection widths must be positive"));
            }
        }
        SlotRange::new(self.slots.start, self.slots.end)?;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.encoder_widths.last().expect("validated")
    }
}

/// Encoder, optional projection head and classifier head over one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: ParamStore,
    pub encoder: MlpEncoder,
    pub projection: Option<ProjectionHead>,
    pub head: ClassifierHead,
    pub frozen: bool,
}

/// Teachers and students share one network type and differ by [`Role`].
pub type TeacherModel = Network;
pub type StudentModel = Network;

/// Everything a forward pass produced for one batch.
pub struct Forward {
    pub features: Var,
    pub logits: Var,
}

impl Network {
    /// Fresh parameters drawn deterministically from `seed`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = MlpEncoder::init(&mut params, "encoder", &spec.encoder_widths, &mut rng)?;
        let m = encoder.feature_dim();
        let projection = spec
            .projection
            .map(|p| ProjectionHead::init(&mut params, "projection", m, p.hidden, p.output, &mut rng))
            .transpose()?;
        let head = ClassifierHead::init(&mut params, "head", m, spec.slots, &mut rng)?;
        Ok(Self {
            spec,
            params,
            encoder,
            projection,
            head,
            frozen: false,
        })
    }

    /// Rebuilds the layer structure over an existing store.
    pub fn from_params(spec: NetworkSpec, params: ParamStore, frozen: bool) -> Result<Self> {
        spec.validate()?;
        let encoder = MlpEncoder::attach(&params, "encoder", &spec.encoder_widths)?;
        let projection = match spec.projection {
            Some(p) => {
                let head = ProjectionHead::attach(&params, "projection")?;
                if head.first.output != p.hidden || head.second.output != p.output {
                    return Err(Error::Checkpoint("projection widths do not match manifest".into()));
                }
                Some(head)
            }
            None => None,
        };
        let head = ClassifierHead::attach(&params, "head", spec.slots)?;
        Ok(Self {
            spec,
            params,
            encoder,
            projection,
            head,
            frozen,
        })
    }

    /// Freezes every parameter.
    pub fn freeze(&mut self) {
        self.frozen = true;
        self.params.freeze_all();
    }

    pub fn slots(&self) -> SlotRange {
        self.spec.slots
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.feature_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.spec.encoder_widths[0]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        self.params.bind(g, trainable && !self.frozen)
    }

    pub fn encode(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        self.encoder.forward(g, p, x)
    }

    pub fn project(&self, g: &mut Graph, p: &Bound, features: Var) -> Result<Var> {
        self.projection
            .as_ref()
            .ok_or_else(|| Error::invalid("network has no projection head"))?
            .forward(g, p, features)
    }

    pub fn classify(&self, g: &mut Graph, p: &Bound, features: Var) -> Result<Var> {
        self.head.forward(g, p, features)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Forward> {
        let features = self.encode(g, p, x)?;
        let logits = self.classify(g, p, features)?;
        Ok(Forward { features, logits })
    }

    /// Feature map and logits without gradient tracking.
    pub fn evaluate(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let f = self.forward(&mut g, &p, xv)?;
        Ok((g.value(f.features).clone(), g.value(f.logits).clone()))
    }

    /// Logits over this network's own slots.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.evaluate(x)?.1)
    }

    /// Hash of the encoder and classifier parameters.
    pub fn backbone_fingerprint(&self) -> u64 {
        self.params
            .fingerprint(|p| p.name.starts_with("encoder.") || p.name.starts_with("head."))
    }
}
