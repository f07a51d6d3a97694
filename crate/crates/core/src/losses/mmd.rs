use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Bandwidth multipliers applied to the median pairwise distance.
pub const MEDIAN_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Convex combination of Gaussian kernels `exp(−‖a − b‖² / (2 h²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    bandwidths: Vec<f64>,
    coefficients: Vec<f64>,
}

impl KernelBank {
    pub fn new(bandwidths: Vec<f64>, coefficients: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.len() != coefficients.len() {
            return Err(Error::invalid(format!(
                "kernel bank needs matching non-empty bandwidths and coefficients ({} vs {})",
                bandwidths.len(),
                coefficients.len()
            )));
        }
        if bandwidths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::invalid("kernel bandwidths must be positive and finite"));
        }
        if coefficients.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::invalid("kernel coefficients must be non-negative"));
        }
        let total: f64 = coefficients.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("kernel coefficients sum to {total}, not 1")));
        }
        Ok(Self {
            bandwidths,
            coefficients,
        })
    }

    pub fn single(bandwidth: f64) -> Result<Self> {
        Self::new(vec![bandwidth], vec![1.0])
    }

    /// Five equally weighted kernels at `median × {¼, ½, 1, 2, 4}`, where the
    /// median is over all distinct-row pairwise distances of `a` (stacked
    /// with `b` when given). Falls back to a median of 1 when every
    /// distance is zero.
    pub fn median_heuristic(a: &Tensor, b: Option<&Tensor>) -> Result<Self> {
        let mut rows: Vec<&[f64]> = (0..a.rows()).map(|i| a.row(i)).collect();
        if let Some(b) = b {
            if b.cols() != a.cols() {
                return Err(Error::ShapeMismatch {
                    op: "median_heuristic",
                    lhs: a.shape(),
                    rhs: b.shape(),
                });
            }
            rows.extend((0..b.rows()).map(|i| b.row(i)));
        }
        let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let sq: f64 = rows[i].iter().zip(rows[j]).map(|(x, y)| (x - y) * (x - y)).sum();
                dists.push(sq.sqrt());
            }
        }
        let median = if dists.is_empty() {
            0.0
        } else {
            dists.sort_by(f64::total_cmp);
            let mid = dists.len() / 2;
            if dists.len() % 2 == 0 {
                0.5 * (dists[mid - 1] + dists[mid])
            } else {
                dists[mid]
            }
        };
        let median = if median > 0.0 && median.is_finite() { median } else { 1.0 };
        let k = MEDIAN_MULTIPLIERS.len();
        Self::new(
            MEDIAN_MULTIPLIERS.iter().map(|m| m * median).collect(),
            vec![1.0 / k as f64; k],
        )
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Mean of the combined kernel over all row pairs of `a` and `b`.
    fn mean_kernel(&self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        let sq = g.pairwise_sq_dist(a, b)?;
        let mut acc: Option<Var> = None;
        for (&h, &c) in self.bandwidths.iter().zip(&self.coefficients) {
            let scaled = g.scale(sq, -1.0 / (2.0 * h * h))?;
            let k = g.exp(scaled)?;
            let k = g.scale(k, c)?;
            acc = Some(match acc {
                Some(prev) => g.add(prev, k)?,
                None => k,
            });
        }
        let k = acc.expect("non-empty bank");
        let rows = g.mean_axis(k, Axis::Cols)?;
        g.mean(rows)
    }
}

/// Biased multi-kernel MMD²:
/// `mean K(f_s, f_s) − 2·mean K(f_s, f_t) + mean K(f_t, f_t)`.
pub fn mmd_sq(g: &mut Graph, fs: Var, ft: Var, bank: &KernelBank) -> Result<Var> {
    if g.shape(fs).1 != g.shape(ft).1 {
        return Err(Error::ShapeMismatch {
            op: "mmd_sq",
            lhs: g.shape(fs),
            rhs: g.shape(ft),
        });
    }
    let kss = bank.mean_kernel(g, fs, fs)?;
    let kst = bank.mean_kernel(g, fs, ft)?;
    let ktt = bank.mean_kernel(g, ft, ft)?;
    let cross = g.scale(kst, -2.0)?;
    let partial = g.add(kss, cross)?;
    g.add(partial, ktt)
}

/// Sum of [`mmd_sq`] between the student features and each teacher's.
pub fn alignment_loss(g: &mut Graph, student: Var, teachers: &[Var], bank: &KernelBank) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &t in teachers {
        let m = mmd_sq(g, student, t, bank)?;
        total = Some(match total {
            Some(acc) => g.add(acc, m)?,
            None => m,
        });
    }
    total.ok_or_else(|| Error::invalid("alignment loss needs at least one teacher"))
}
