use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one [`ParamStore`], with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub lr: f64,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            lr: config.lr,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// One update of every non-frozen parameter that has a gradient.
    pub fn adam_step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, store has {}, got {} gradients",
                self.first.len(),
                store.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                let p = store.param(i);
                if g.shape() != p.value.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "adam_step",
                        lhs: p.value.shape(),
                        rhs: g.shape(),
                    });
                }
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let lr = self.lr;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let param = store.param_mut(i);
            if param.frozen {
                continue;
            }
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, &gk), mk), vk) in param.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mk = beta1 * *mk + (1.0 - beta1) * gk;
                *vk = beta2 * *vk + (1.0 - beta2) * gk * gk;
                let m_hat = *mk / c1;
                let v_hat = *vk / c2;
                *w -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *w);
            }
        }
        Ok(())
    }
}

/// `base · ½ · (1 + cos(π · epoch / total))`.
pub fn cosine_lr(base_lr: f64, epoch: usize, total_epochs: usize) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::invalid("cosine schedule needs at least one epoch"));
    }
    if epoch > total_epochs {
        return Err(Error::invalid(format!("epoch {epoch} beyond schedule length {total_epochs}")));
    }
    let progress = epoch as f64 / total_epochs as f64;
    Ok(base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = values.len();
        s.add("w", Tensor::new(1, n, values).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(vec![0.3, -1.2, 2.0]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&s, cfg);
        opt.adam_step(&mut s, &[Some(Tensor::ones(1, 3))]).unwrap();
        // m̂ / √v̂ = 1, so the step is lr / (1 + ε)
        let expected = 5e-4 / (1.0 + 1e-8);
        for (after, before) in s.param(0).value.data().iter().zip([0.3, -1.2, 2.0]) {
            assert!((before - after - expected).abs() < 1e-15);
        }

        // with the default weight decay the delta is still ≈ −lr
        let mut s = store(vec![0.3]);
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        opt.adam_step(&mut s, &[Some(Tensor::ones(1, 1))]).unwrap();
        assert!((s.param(0).value.item() - 0.3 + 5e-4).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = store(vec![0.3, -1.2]);
        let before = s.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(&s, cfg);
        opt.adam_step(&mut s, &[Some(Tensor::zeros(1, 2))]).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn step_opposes_gradient() {
        let mut s = store(vec![0.0, 0.0]);
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        opt.adam_step(&mut s, &[Some(Tensor::row_vector(vec![2.0, -3.0]).unwrap())]).unwrap();
        let w = s.param(0).value.data();
        assert!(w[0] < 0.0 && w[1] > 0.0);
    }

    #[test]
    fn frozen_and_non_finite() {
        let mut s = store(vec![1.0]);
        s.freeze_all();
        let mut opt = OptimizerState::new(&s, AdamConfig::default());
        opt.adam_step(&mut s, &[Some(Tensor::ones(1, 1))]).unwrap();
        assert_eq!(s.param(0).value.item(), 1.0);

        let err = opt.adam_step(&mut s, &[Some(Tensor::scalar(f64::NAN))]).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn cosine_schedule() {
        assert_eq!(cosine_lr(0.1, 0, 10).unwrap(), 0.1);
        assert!(cosine_lr(0.1, 10, 10).unwrap().abs() < 1e-17);
        assert!((cosine_lr(0.1, 5, 10).unwrap() - 0.05).abs() < 1e-17);
        assert!(cosine_lr(0.1, 0, 0).is_err());
        assert!(cosine_lr(0.1, 11, 10).is_err());
    }
}
