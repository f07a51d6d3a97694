//! Differentiable amalgamation objectives.
//!
//! Every loss takes and returns [`Var`](crate::autodiff::Var)s on a caller-owned
//! [`Graph`](crate::autodiff::Graph), so the trainer can combine them into one
//! backward pass. [`gw_discrepancy`] is the exception: it is a plain-value
//! diagnostic and never enters the trained objective.

mod contrastive;
mod distill;
mod gw;
mod mmd;
mod total;
mod transport;

use serde::{Deserialize, Serialize};

pub use contrastive::{cosine_matrix, cosine_similarity, info_nce_loss, inter_contrast_loss, intra_margin_loss, intra_margin_from_similarity};
pub use distill::{kl_to_target, soft_target_from_blocks, soft_target_from_logits, soft_target_loss, TeacherBlock};
pub use gw::{gw_discrepancy, GW_MAX_BATCH};
pub use mmd::{alignment_loss, mmd_sq, KernelBank};
pub use total::{total_loss, LossBreakdown, LossTerms, LossWeights};
pub use transport::{pairwise_distance_matrix, transport_map, TransportMap};

/// Instance-to-instance distance used to build transport maps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Euclidean,
    /// `1 − cos(p_i, p_j)`.
    Cosine,
    /// Squared MMD between the spatial point sets of two instances. Needs a
    /// declared channel count so each row can be read as `m / c` points in `ℝ^c`.
    MmdSpatial,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::MmdSpatial => "mmd-spatial",
        }
    }
}

/// How per-row and per-negative terms of the contrastive losses are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Argument order of the distillation KL divergence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `KL(student ‖ teacher)`.
    #[default]
    StudentFirst,
    /// `KL(teacher ‖ student)`, the usual distillation direction.
    TeacherFirst,
}
