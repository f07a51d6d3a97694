use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::slots::{check_partition, union_width, SlotRange};

/// Anything that can score the union label space.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    /// Raw logits of one network; labels index its own head. A student's
    /// head spans the whole union, so its labels are union slots.
    Direct(&'a Network),
    /// A single teacher; probabilities outside its slots are zero.
    ZeroPadded { teacher: &'a Network, width: usize },
    /// Raw teacher logits concatenated into their slots.
    Ensemble(&'a [Network]),
}

/// Concatenates raw teacher logits into union slots. Placement follows each
/// teacher's slot range, not its position in `teachers`.
pub fn ensemble_predict(teachers: &[Network], x: &Tensor) -> Result<Tensor> {
    let ranges: Vec<SlotRange> = teachers.iter().map(Network::slots).collect();
    if ranges.is_empty() {
        return Err(Error::invalid("ensemble needs at least one teacher"));
    }
    check_partition(&ranges, None)?;
    let width = union_width(&ranges);
    let blocks = crate::par::map_slice(teachers, |t| t.logits(x));
    let mut out = Tensor::zeros(x.rows(), width);
    for (block, s) in blocks.into_iter().zip(&ranges) {
        let block = block?;
        for r in 0..x.rows() {
            out.row_mut(r)[s.start..s.end].copy_from_slice(block.row(r));
        }
    }
    Ok(out)
}

pub fn union_scores(pred: Predictor<'_>, x: &Tensor) -> Result<Tensor> {
    match pred {
        Predictor::Direct(net) => net.logits(x),
        Predictor::ZeroPadded { teacher, width } => {
            let s = teacher.slots();
            if s.end > width {
                return Err(Error::invalid(format!("teacher slots {s:?} exceed union width {width}")));
            }
            let probs = softmax_rows(&teacher.logits(x)?)?;
            let mut out = Tensor::zeros(x.rows(), width);
            for r in 0..x.rows() {
                out.row_mut(r)[s.start..s.end].copy_from_slice(probs.row(r));
            }
            Ok(out)
        }
        Predictor::Ensemble(teachers) => ensemble_predict(teachers, x),
    }
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let p = g.softmax(l)?;
    Ok(g.value(p).clone())
}

/// Top-1 accuracy over the union and restricted to each task's samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub union: f64,
    pub per_task: Vec<f64>,
}

/// `test` labels must index the predictor's score columns.
pub fn evaluate_union(pred: Predictor<'_>, test: &Dataset, tasks: &[SlotRange]) -> Result<Accuracy> {
    let scores = union_scores(pred, &test.samples)?;
    if let Some(&bad) = test.labels.iter().find(|&&l| l >= scores.cols()) {
        return Err(Error::invalid(format!("label {bad} outside the {}-slot union", scores.cols())));
    }
    let predicted = scores.argmax_rows();
    let hit: Vec<bool> = predicted.iter().zip(&test.labels).map(|(p, l)| p == l).collect();
    let frac = |rows: &mut dyn Iterator<Item = usize>| {
        let (mut n, mut k) = (0usize, 0usize);
        for i in rows {
            n += 1;
            k += hit[i] as usize;
        }
        if n == 0 {
            0.0
        } else {
            k as f64 / n as f64
        }
    };
    let union = frac(&mut (0..test.len()));
    let per_task = tasks
        .iter()
        .map(|s| frac(&mut (0..test.len()).filter(|&i| s.contains(test.labels[i]))))
        .collect();
    Ok(Accuracy { union, per_task })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::models::{NetworkSpec, Role};

    fn teacher(slots: SlotRange, seed: u64) -> Network {
        let mut n = Network::init(
            NetworkSpec {
                role: Role::Teacher,
                encoder_widths: vec![3, 4],
                projection: None,
                slots,
            },
            seed,
        )
        .unwrap();
        n.freeze();
        n
    }

    fn x() -> Tensor {
        Tensor::new(5, 3, (0..15).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap()
    }

    #[test]
    fn ensemble_places_by_slot() {
        let a = teacher(SlotRange::new(0, 2).unwrap(), 1);
        let b = teacher(SlotRange::new(2, 4).unwrap(), 2);
        let ab = ensemble_predict(&[a.clone(), b.clone()], &x()).unwrap();
        let ba = ensemble_predict(&[b.clone(), a.clone()], &x()).unwrap();
        assert_eq!(ab, ba);
        assert_eq!(ab.cols(), 4);
        assert_eq!(ab.slice_cols(2, 4).unwrap(), b.logits(&x()).unwrap());
        let overlap = teacher(SlotRange::new(1, 3).unwrap(), 3);
        assert!(ensemble_predict(&[a, overlap], &x()).is_err());
    }

    #[test]
    fn zero_padded_teacher_only_predicts_own_slots() {
        let a = teacher(SlotRange::new(2, 4).unwrap(), 1);
        let s = union_scores(Predictor::ZeroPadded { teacher: &a, width: 4 }, &x()).unwrap();
        assert!(s.argmax_rows().iter().all(|&p| (2..4).contains(&p)));
        let test = Dataset::new(x(), vec![0, 1, 2, 3, 0], 4, Split::Test).unwrap();
        let acc = evaluate_union(
            Predictor::ZeroPadded { teacher: &a, width: 4 },
            &test,
            &[SlotRange::new(0, 2).unwrap(), SlotRange::new(2, 4).unwrap()],
        )
        .unwrap();
        assert!(acc.union <= 2.0 / 5.0);
        assert_eq!(acc.per_task[0], 0.0);
    }

    #[test]
    fn label_outside_union_errors() {
        let a = teacher(SlotRange::new(0, 2).unwrap(), 1);
        let test = Dataset::new(x(), vec![0, 1, 2, 1, 0], 3, Split::Test).unwrap();
        assert!(evaluate_union(Predictor::Ensemble(&[a]), &test, &[]).is_err());
    }
}
