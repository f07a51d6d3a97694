use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::{derive_seed, Dataset, Split};
use crate::error::{Error, Result};

const CENTER_RETRIES: usize = 1000;
const TRAIN_FRACTION: f64 = 0.8;

/// Isotropic Gaussian clusters with a minimum distance between centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Minimum pairwise distance between class centers.
    pub separation: f64,
    /// Standard deviation of the per-class noise.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            dim: 32,
            per_class: 500,
            separation: 10.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

fn draw_centers(cfg: &BlobConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    // per-axis spread so that typical center distances are ~1.5 × separation
    let spread = 1.5 * cfg.separation / (2.0 * cfg.dim as f64).sqrt();
    let normal = Normal::new(0.0, spread.max(f64::MIN_POSITIVE)).map_err(|e| Error::invalid(e.to_string()))?;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
    for c in 0..cfg.classes {
        let mut placed = false;
        for _ in 0..CENTER_RETRIES {
            let cand: Vec<f64> = (0..cfg.dim).map(|_| normal.sample(rng)).collect();
            let ok = centers.iter().all(|o| {
                let d2: f64 = o.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= cfg.separation
            });
            if ok {
                centers.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "could not place class {c} at separation {} in {} dimensions after {CENTER_RETRIES} tries",
                cfg.separation, cfg.dim
            )));
        }
    }
    Ok(centers)
}

/// Seeded train/test pair; each class contributes exactly
/// `floor(0.8 · per_class)` training rows and the rest to test.
pub fn gen_blobs(cfg: &BlobConfig) -> Result<(Dataset, Dataset)> {
    if cfg.classes < 2 || cfg.per_class < 2 || cfg.dim == 0 {
        return Err(Error::invalid(format!(
            "blobs need ≥ 2 classes, ≥ 2 samples per class and dim ≥ 1 (got {}, {}, {})",
            cfg.classes, cfg.per_class, cfg.dim
        )));
    }
    if !(cfg.separation >= 0.0 && cfg.noise_std >= 0.0) {
        return Err(Error::invalid("separation and noise_std must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let centers = draw_centers(cfg, &mut rng)?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;

    let n_train = ((cfg.per_class as f64 * TRAIN_FRACTION).floor() as usize).clamp(1, cfg.per_class - 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for k in 0..cfg.per_class {
            let x: Vec<f64> = center.iter().map(|m| m + noise.sample(&mut rng)).collect();
            if k < n_train {
                train.push((x, c));
            } else {
                test.push((x, c));
            }
        }
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2]));
    train.shuffle(&mut order_rng);
    test.shuffle(&mut order_rng);

    let build = |rows: Vec<(Vec<f64>, usize)>, split| -> Result<Dataset> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * cfg.dim);
        let mut labels = Vec::with_capacity(n);
        for (x, c) in rows {
            data.extend(x);
            labels.push(c);
        }
        Dataset::new(Tensor::new(n, cfg.dim, data)?, labels, cfg.classes, split)
    };
    Ok((build(train, Split::Train)?, build(test, Split::Test)?))
}

/// Two independently generated blob sets with disjoint label ranges,
/// concatenated. The second set's classes follow the first's.
pub fn gen_cross_dataset(a: &BlobConfig, b: &BlobConfig) -> Result<(Dataset, Dataset)> {
    if a.dim != b.dim {
        return Err(Error::invalid("cross-dataset blobs need a common input dimension"));
    }
    let (train_a, test_a) = gen_blobs(a)?;
    let (train_b, test_b) = gen_blobs(b)?;
    Ok((train_a.concat_disjoint(&train_b)?, test_a.concat_disjoint(&test_b)?))
}
