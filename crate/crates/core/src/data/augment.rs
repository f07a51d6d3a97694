use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::derive_seed;
use crate::error::{Error, Result};

/// Stochastic view generator for vector inputs: per-row scale jitter,
/// additive Gaussian noise and feature dropout (masked to zero).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationPolicy {
    pub noise_std: f64,
    pub mask_prob: f64,
    /// Scale factor drawn uniformly from `[1 - jitter, 1 + jitter]`.
    pub scale_jitter: f64,
    pub seed: u64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            noise_std: 0.5,
            mask_prob: 0.1,
            scale_jitter: 0.1,
            seed: 0,
        }
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("augmentation noise_std must be finite and ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::invalid("augmentation mask_prob must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) {
            return Err(Error::invalid("augmentation scale_jitter must lie in [0, 1)"));
        }
        Ok(())
    }

    fn view(&self, x: &Tensor, stream: u64) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let noise = Normal::new(0.0, self.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            let scale = if self.scale_jitter > 0.0 {
                rng.gen_range(1.0 - self.scale_jitter..=1.0 + self.scale_jitter)
            } else {
                1.0
            };
            for v in out.row_mut(r) {
                let keep = self.mask_prob == 0.0 || rng.gen::<f64>() >= self.mask_prob;
                let e = noise.sample(&mut rng);
                *v = if keep { scale * *v + e } else { 0.0 };
            }
        }
        Ok(out)
    }
}

/// Two independent views of `batch`. The pair is a pure function of the
/// policy seed, the epoch and the batch index.
pub fn two_views(policy: &AugmentationPolicy, batch: &Tensor, epoch: usize, batch_index: usize) -> Result<(Tensor, Tensor)> {
    policy.validate()?;
    let base = [epoch as u64, batch_index as u64];
    let s1 = derive_seed(policy.seed, &[base[0], base[1], 1]);
    let s2 = derive_seed(policy.seed, &[base[0], base[1], 2]);
    Ok((policy.view(batch, s1)?, policy.view(batch, s2)?))
}
