use serde::{Deserialize, Serialize};

use crate::data::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::losses::{KlDirection, LossWeights, Metric, Reduction};
use crate::models::{AdamConfig, ADAPTER_WIDTH, COMMON_WIDTH};

/// Which input the frozen teachers see during amalgamation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherView {
    /// The un-augmented batch.
    #[default]
    Clean,
    /// The student's first augmented view.
    View1,
}

/// How the distillation target is assembled from teacher outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMode {
    /// Per-teacher softmax blocks, concatenated and divided by the teacher count.
    #[default]
    TeacherBlocks,
    /// One softmax over the concatenated raw logits (vanilla KD).
    ConcatenatedLogits,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmalgamationConfig {
    pub weights: LossWeights,
    pub metric: Metric,
    /// Channels per spatial position; only used by the `mmd-spatial` metric.
    pub spatial_channels: Option<usize>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub reduction: Reduction,
    pub kl_direction: KlDirection,
    pub teacher_view: TeacherView,
    pub target_mode: TargetMode,
    /// Keep the teachers' adapters at their initial values.
    pub freeze_adapters: bool,
    /// Global gradient-norm clip; `None` aborts on bad steps instead.
    pub grad_clip: Option<f64>,
    pub augmentation: AugmentationPolicy,
    /// Width every model's adapter maps into.
    pub adapter_width: usize,
    /// Output width of both shared MLP layers.
    pub common_width: usize,
}

impl Default for AmalgamationConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            metric: Metric::Euclidean,
            spatial_channels: None,
            adam: AdamConfig::default(),
            batch_size: 64,
            epochs: 100,
            seed: 0,
            reduction: Reduction::Mean,
            kl_direction: KlDirection::StudentFirst,
            teacher_view: TeacherView::Clean,
            target_mode: TargetMode::TeacherBlocks,
            freeze_adapters: false,
            grad_clip: None,
            augmentation: AugmentationPolicy::default(),
            adapter_width: ADAPTER_WIDTH,
            common_width: COMMON_WIDTH,
        }
    }
}

impl AmalgamationConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.augmentation.validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if self.adapter_width == 0 || self.common_width == 0 {
            return Err(Error::invalid("adapter_width and common_width must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid(format!("grad_clip must be positive, got {c}")));
            }
        }
        if self.metric == Metric::MmdSpatial && self.spatial_channels.is_none() {
            return Err(Error::invalid("metric mmd-spatial needs spatial_channels"));
        }
        Ok(())
    }
}

/// Supervised teacher training on one task's classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            seed: 0,
        }
    }
}
