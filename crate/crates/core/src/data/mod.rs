//! Datasets, task partitions, two-view augmentation and batching.

mod augment;
mod batch;
mod blobs;
mod idx;
mod persist;
mod tasks;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use augment::{two_views, AugmentationPolicy};
pub use batch::make_batches;
pub use blobs::{gen_blobs, gen_cross_dataset, BlobConfig};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use persist::{load_dataset, save_dataset, DatasetMeta};
pub use tasks::{split_tasks, TaskPartition, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Labelled samples in the union label space.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Tensor, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Self {
            samples,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Rows whose label is in `classes`, relabelled by position in `classes`.
    pub fn restrict(&self, classes: &[usize]) -> Result<Dataset> {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        if rows.is_empty() {
            return Err(Error::invalid("no samples belong to the requested classes"));
        }
        let labels = rows
            .iter()
            .map(|&i| classes.iter().position(|&c| c == self.labels[i]).expect("filtered"))
            .collect();
        Dataset::new(self.samples.gather_rows(&rows)?, labels, classes.len(), self.split)
    }

    /// Appends `other` with its labels shifted past this dataset's classes.
    pub fn concat_disjoint(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                op: "concat_disjoint",
                lhs: self.samples.shape(),
                rhs: other.samples.shape(),
            });
        }
        let mut data = self.samples.data().to_vec();
        data.extend_from_slice(other.samples.data());
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().map(|l| l + self.num_classes));
        Dataset::new(
            Tensor::new(self.len() + other.len(), self.dim(), data)?,
            labels,
            self.num_classes + other.num_classes,
            self.split,
        )
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledPool {
        UnlabeledPool {
            samples: self.samples.clone(),
        }
    }
}

/// Training inputs with no annotation attached.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlabeledPool {
    pub samples: Tensor,
}

impl UnlabeledPool {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }
}

/// Deterministic seed for a sub-stream identified by `parts`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 finalizer applied per component
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        x = x.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}
