use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{Reduction, TransportMap};

/// Cosine similarity of two equal-length, non-zero vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: (1, a.len()),
            rhs: (1, b.len()),
        });
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("cosine similarity of a zero-norm vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `S[i][j] = cos(a_i, b_j)` for every row pair.
pub fn cosine_matrix(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a).1 != g.shape(b).1 {
        return Err(Error::ShapeMismatch {
            op: "cosine_matrix",
            lhs: g.shape(a),
            rhs: g.shape(b),
        });
    }
    let an = g.normalize_rows(a)?;
    let bn = g.normalize_rows(b)?;
    let bt = g.transpose(bn)?;
    g.matmul(an, bt)
}

fn identity_and_off_diagonal(g: &mut Graph, n: usize) -> (Var, Var) {
    let eye = Tensor::identity(n);
    let off = eye.map(|v| 1.0 - v);
    (g.constant(eye), g.constant(off))
}

fn check_pair(g: &Graph, a: Var, b: Var, op: &'static str) -> Result<usize> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: g.shape(a),
            rhs: g.shape(b),
        });
    }
    Ok(g.shape(a).0)
}

fn reduce_rows(g: &mut Graph, per_row: Var, reduction: Reduction) -> Result<Var> {
    match reduction {
        Reduction::Mean => g.mean(per_row),
        Reduction::Sum => g.sum(per_row),
    }
}

/// Sums off-diagonal entries per row, divided by `n − 1` in mean mode.
fn negative_term(g: &mut Graph, masked: Var, n: usize, reduction: Reduction) -> Result<Var> {
    let s = g.sum_axis(masked, Axis::Cols)?;
    match reduction {
        Reduction::Mean if n > 1 => g.scale(s, 1.0 / (n - 1) as f64),
        _ => Ok(s),
    }
}

/// InfoNCE with in-batch negatives: row `i` of `za` is positive with row `i`
/// of `zb` and negative with every other row of `zb`.
pub fn info_nce_loss(g: &mut Graph, za: Var, zb: Var, temperature: f64) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let n = check_pair(g, za, zb, "info_nce_loss")?;
    let s = cosine_matrix(g, za, zb)?;
    let logits = g.scale(s, 1.0 / temperature)?;
    let logp = g.log_softmax(logits)?;
    let (eye, _) = identity_and_off_diagonal(g, n);
    let diag = g.mul(logp, eye)?;
    let total = g.sum(diag)?;
    g.scale(total, -1.0 / n as f64)
}

/// Margin contrast between two views: `(1 − s(z̃_i, ẑ_i))` plus the hinge
/// `max(0, s(z̃_i, ẑ_j) − α)` over in-batch negatives `j ≠ i`.
pub fn intra_margin_loss(g: &mut Graph, view1: Var, view2: Var, margin: f64, reduction: Reduction) -> Result<Var> {
    check_pair(g, view1, view2, "intra_margin_loss")?;
    let s = cosine_matrix(g, view1, view2)?;
    intra_margin_from_similarity(g, s, margin, reduction)
}

/// [`intra_margin_loss`] starting from a precomputed `B × B` similarity matrix.
pub fn intra_margin_from_similarity(g: &mut Graph, sim: Var, margin: f64, reduction: Reduction) -> Result<Var> {
    let (n, m) = g.shape(sim);
    if n != m {
        return Err(Error::ShapeMismatch {
            op: "intra_margin_loss",
            lhs: (n, m),
            rhs: (n, n),
        });
    }
    let (eye, off) = identity_and_off_diagonal(g, n);
    let diag = g.mul(sim, eye)?;
    let diag = g.sum_axis(diag, Axis::Cols)?;
    let neg_diag = g.scale(diag, -1.0)?;
    let pos = g.add_scalar(neg_diag, 1.0)?;

    let shifted = g.add_scalar(sim, -margin)?;
    let hinge = g.relu(shifted)?;
    let hinge = g.mul(hinge, off)?;
    let neg = negative_term(g, hinge, n, reduction)?;

    let per_row = g.add(pos, neg)?;
    reduce_rows(g, per_row, reduction)
}

/// Inter-model contrast between the student's transport map and each
/// teacher's. Row `k` of the student map is positive with row `k` of a
/// teacher map and negative with that teacher's other rows.
pub fn inter_contrast_loss(
    g: &mut Graph,
    student: &TransportMap,
    teachers: &[TransportMap],
    reduction: Reduction,
) -> Result<Var> {
    if teachers.is_empty() {
        return Err(Error::invalid("inter-model contrast needs at least one teacher map"));
    }
    let n = g.shape(student.pi).0;
    let (eye, off) = identity_and_off_diagonal(g, n);
    let mut total: Option<Var> = None;
    for t in teachers {
        if g.shape(t.pi) != g.shape(student.pi) {
            return Err(Error::ShapeMismatch {
                op: "inter_contrast_loss",
                lhs: g.shape(student.pi),
                rhs: g.shape(t.pi),
            });
        }
        let c = cosine_matrix(g, student.pi, t.pi)?;
        let diag = g.mul(c, eye)?;
        let diag = g.sum_axis(diag, Axis::Cols)?;
        let neg_diag = g.scale(diag, -1.0)?;
        let pos = g.add_scalar(neg_diag, 1.0)?;
        let masked = g.mul(c, off)?;
        let neg = negative_term(g, masked, n, reduction)?;
        let per_row = g.add(pos, neg)?;
        let term = reduce_rows(g, per_row, reduction)?;
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}
