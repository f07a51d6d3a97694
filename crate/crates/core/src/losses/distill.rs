use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::KlDirection;
use crate::slots::{check_partition, union_width, SlotRange};

/// Smallest probability used when taking the log of a target. Only reached
/// if a teacher softmax underflows.
const MIN_PROB: f64 = 1e-300;

/// One teacher's softmax output over its own slots.
#[derive(Clone, Debug)]
pub struct TeacherBlock {
    pub probs: Tensor,
    pub slots: SlotRange,
}

/// Places each teacher's probability block into its slots of the union space
/// and divides by the teacher count so every row sums to one.
pub fn soft_target_from_blocks(blocks: &[TeacherBlock]) -> Result<Tensor> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::invalid("soft target needs at least one teacher block"))?;
    let ranges: Vec<SlotRange> = blocks.iter().map(|b| b.slots).collect();
    let width = union_width(&ranges);
    check_partition(&ranges, Some(width))?;
    let rows = first.probs.rows();
    let share = 1.0 / blocks.len() as f64;
    let mut target = Tensor::zeros(rows, width);
    for (t, b) in blocks.iter().enumerate() {
        if b.probs.shape() != (rows, b.slots.width()) {
            return Err(Error::ShapeMismatch {
                op: "soft_target_from_blocks",
                lhs: (rows, b.slots.width()),
                rhs: b.probs.shape(),
            });
        }
        for r in 0..rows {
            let row = b.probs.row(r);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::invalid(format!(
                    "teacher {t} block row {r} is not a distribution (sum {sum})"
                )));
            }
            for (k, &p) in row.iter().enumerate() {
                target.set(r, b.slots.start + k, share * p);
            }
        }
    }
    Ok(target)
}

/// Single softmax over concatenated raw logits, each placed in its slots.
pub fn soft_target_from_logits(blocks: &[(Tensor, SlotRange)], temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let first = blocks
        .first()
        .ok_or_else(|| Error::invalid("soft target needs at least one teacher block"))?;
    let ranges: Vec<SlotRange> = blocks.iter().map(|b| b.1).collect();
    let width = union_width(&ranges);
    check_partition(&ranges, Some(width))?;
    let rows = first.0.rows();
    let mut logits = Tensor::zeros(rows, width);
    for (t, s) in blocks {
        if t.shape() != (rows, s.width()) {
            return Err(Error::ShapeMismatch {
                op: "soft_target_from_logits",
                lhs: (rows, s.width()),
                rhs: t.shape(),
            });
        }
        for r in 0..rows {
            for (k, &v) in t.row(r).iter().enumerate() {
                logits.set(r, s.start + k, v / temperature);
            }
        }
    }
    let mut g = Graph::new();
    let l = g.constant(logits);
    let p = g.softmax(l)?;
    Ok(g.value(p).clone())
}

/// Batch-mean KL divergence between `softmax(logits / T)` and a fixed target.
pub fn kl_to_target(
    g: &mut Graph,
    student_logits: Var,
    target: &Tensor,
    temperature: f64,
    direction: KlDirection,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if g.shape(student_logits) != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl_to_target",
            lhs: g.shape(student_logits),
            rhs: target.shape(),
        });
    }
    let scaled = g.scale(student_logits, 1.0 / temperature)?;
    let log_s = g.log_softmax(scaled)?;
    let log_t = g.constant(target.map(|p| p.max(MIN_PROB).ln()));
    let per_entry = match direction {
        KlDirection::StudentFirst => {
            let p_s = g.exp(log_s)?;
            let diff = g.sub(log_s, log_t)?;
            g.mul(p_s, diff)?
        }
        KlDirection::TeacherFirst => {
            let p_t = g.constant(target.clone());
            let diff = g.sub(log_t, log_s)?;
            g.mul(p_t, diff)?
        }
    };
    let rows = g.sum_axis(per_entry, Axis::Cols)?;
    g.mean(rows)
}

/// Soft-target distillation: KL between the student's union distribution and
/// the renormalized concatenation of teacher softmax blocks.
pub fn soft_target_loss(
    g: &mut Graph,
    student_logits: Var,
    blocks: &[TeacherBlock],
    temperature: f64,
    direction: KlDirection,
) -> Result<Var> {
    let target = soft_target_from_blocks(blocks)?;
    kl_to_target(g, student_logits, &target, temperature, direction)
}
