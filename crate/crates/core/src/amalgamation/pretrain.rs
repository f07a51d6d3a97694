use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{derive_seed, make_batches, Dataset, TaskSpec};
use crate::error::{Error, Result};
use crate::models::{cosine_lr, Network, NetworkSpec, OptimizerState, Role};

use super::config::PretrainConfig;

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = g.shape(logits);
    if labels.len() != n {
        return Err(Error::invalid(format!("{n} logit rows but {} labels", labels.len())));
    }
    let mut onehot = Tensor::zeros(n, c);
    for (r, &l) in labels.iter().enumerate() {
        if l >= c {
            return Err(Error::invalid(format!("label {l} outside 0..{c}")));
        }
        onehot.set(r, l, 1.0);
    }
    let logp = g.log_softmax(logits)?;
    let mask = g.constant(onehot);
    let picked = g.mul(logp, mask)?;
    let total = g.sum(picked)?;
    g.scale(total, -1.0 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub teacher_id: usize,
    pub epoch_losses: Vec<f64>,
    /// Accuracy on the task's own training classes after the last epoch.
    pub train_accuracy: f64,
}

/// Trains a teacher on `task`'s classes of `train` and returns it frozen.
/// `hidden` lists the encoder widths after the input layer.
pub fn pretrain_teacher(task: &TaskSpec, train: &Dataset, hidden: &[usize], cfg: &PretrainConfig) -> Result<(Network, PretrainReport)> {
    let subset = train.restrict(&task.classes)?;
    let mut widths = vec![train.dim()];
    widths.extend_from_slice(hidden);
    let spec = NetworkSpec {
        role: Role::Teacher,
        encoder_widths: widths,
        projection: None,
        slots: task.slots,
    };
    let mut net = Network::init(spec, derive_seed(cfg.seed, &[10, task.teacher_id as u64]))?;
    let mut opt = OptimizerState::new(&net.params, cfg.adam);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    let batch_size = cfg.batch_size.min(subset.len()).max(2);
    let data_seed = derive_seed(cfg.seed, &[11, task.teacher_id as u64]);
    for epoch in 0..cfg.epochs {
        opt.lr = cosine_lr(cfg.adam.lr, epoch, cfg.epochs)?;
        let batches = if subset.len() >= 2 {
            make_batches(subset.len(), batch_size, data_seed, epoch, false)?
        } else {
            vec![vec![0]]
        };
        let mut sum = 0.0;
        for idx in &batches {
            let x = subset.samples.gather_rows(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| subset.labels[i]).collect();
            let mut g = Graph::new();
            let p = net.bind(&mut g, true);
            let xv = g.constant(x);
            let out = net.forward(&mut g, &p, xv)?;
            let loss = cross_entropy(&mut g, out.logits, &labels)?;
            sum += g.value(loss).item();
            let grads = g.backward(loss)?;
            opt.adam_step(&mut net.params, &p.gradients(&g, &grads))?;
        }
        epoch_losses.push(sum / batches.len() as f64);
    }

    let predicted = net.logits(&subset.samples)?.argmax_rows();
    let correct = predicted.iter().zip(&subset.labels).filter(|(p, l)| p == l).count();
    net.freeze();
    Ok((
        net,
        PretrainReport {
            teacher_id: task.teacher_id,
            epoch_losses,
            train_accuracy: correct as f64 / subset.len() as f64,
        },
    ))
}
