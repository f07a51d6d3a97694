use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::par;

/// Largest batch accepted by [`gw_discrepancy`]; the general path is `O(B⁴)`.
pub const GW_MAX_BATCH: usize = 64;

/// `Σ_{i,j,k,l} |Dx[i][k] − Dy[j][l]|^q · π[i][j] · π[k][l]`.
///
/// For `q = 2` this uses the expansion into marginal terms and one
/// `Dx · π · Dyᵀ` product; other exponents sum over `(k, l)` for each
/// `(i, j)` in parallel.
pub fn gw_discrepancy(dx: &Tensor, dy: &Tensor, pi: &Tensor, q: f64) -> Result<f64> {
    let b = dx.rows();
    for (name, t) in [("dx", dx), ("dy", dy), ("pi", pi)] {
        if t.shape() != (b, b) {
            return Err(Error::invalid(format!(
                "gw_discrepancy: {name} has shape {:?}, expected {:?}",
                t.shape(),
                (b, b)
            )));
        }
    }
    if b > GW_MAX_BATCH {
        return Err(Error::invalid(format!(
            "gw_discrepancy is limited to batches of {GW_MAX_BATCH}, got {b}"
        )));
    }
    if !(q > 0.0) {
        return Err(Error::invalid(format!("exponent q must be positive, got {q}")));
    }
    if pi.data().iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("coupling entries must be non-negative"));
    }

    if q == 2.0 {
        let row_mass: Vec<f64> = (0..b).map(|i| pi.row(i).iter().sum()).collect();
        let col_mass: Vec<f64> = (0..b).map(|j| (0..b).map(|i| pi.get(i, j)).sum()).collect();
        let quad = |d: &Tensor, w: &[f64]| -> f64 {
            (0..b)
                .map(|i| (0..b).map(|k| d.get(i, k) * d.get(i, k) * w[i] * w[k]).sum::<f64>())
                .sum()
        };
        let cross_mat = dx.matmul(pi)?.matmul_t(dy)?;
        let cross: f64 = cross_mat.data().iter().zip(pi.data()).map(|(a, p)| a * p).sum();
        return Ok(quad(dx, &row_mass) + quad(dy, &col_mass) - 2.0 * cross);
    }

    let partial: Vec<f64> = par::map_range(b * b, |ij| {
        let (i, j) = (ij / b, ij % b);
        let w = pi.get(i, j);
        if w == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for k in 0..b {
            let a = dx.get(i, k);
            for l in 0..b {
                s += (a - dy.get(j, l)).abs().powf(q) * pi.get(k, l);
            }
        }
        w * s
    });
    Ok(partial.iter().sum())
}
