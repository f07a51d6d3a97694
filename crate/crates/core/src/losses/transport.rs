use crate::autodiff::{Graph, KernelTerm, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{KernelBank, Metric};

/// Row-stochastic `B × B` affinity map of one model over a batch:
/// `π[i][j] = exp(−d(p_i, p_j)) / Σ_j exp(−d(p_i, p_j))`.
#[derive(Clone, Debug)]
pub struct TransportMap {
    pub pi: Var,
    pub metric: Metric,
    /// Index of the model whose features produced the map.
    pub source: usize,
}

impl TransportMap {
    pub fn matrix<'g>(&self, g: &'g Graph) -> &'g Tensor {
        g.value(self.pi)
    }

    /// Checks row sums, strict positivity and diagonal dominance of each row.
    pub fn check_invariants(&self, g: &Graph, tol: f64) -> Result<()> {
        let pi = self.matrix(g);
        for i in 0..pi.rows() {
            let row = pi.row(i);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::invalid(format!("row {i} sums to {sum}")));
            }
            if row.iter().any(|&v| v <= 0.0) {
                return Err(Error::invalid(format!("row {i} has a non-positive entry")));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if row[i] < max {
                return Err(Error::invalid(format!("row {i} diagonal is not the row maximum")));
            }
        }
        Ok(())
    }
}

/// Pairwise distances between the rows of `features`.
///
/// `spatial_channels` declares how many channels each spatial position has;
/// it is required for [`Metric::MmdSpatial`] and ignored otherwise.
pub fn pairwise_distance_matrix(
    g: &mut Graph,
    features: Var,
    metric: Metric,
    spatial_channels: Option<usize>,
) -> Result<Var> {
    let n = g.shape(features).0;
    match metric {
        Metric::Euclidean => {
            let sq = g.pairwise_sq_dist(features, features)?;
            g.sqrt(sq)
        }
        Metric::Cosine => {
            let s = super::cosine_matrix(g, features, features)?;
            let neg = g.scale(s, -1.0)?;
            let d = g.add_scalar(neg, 1.0)?;
            let off = g.constant(Tensor::identity(n).map(|v| 1.0 - v));
            g.mul(d, off)
        }
        Metric::MmdSpatial => {
            let channels = spatial_channels.ok_or_else(|| {
                Error::invalid("mmd-spatial distance needs features with a declared spatial factorization")
            })?;
            let width = g.shape(features).1;
            if channels == 0 || !width.is_multiple_of(channels) {
                return Err(Error::invalid(format!(
                    "feature width {width} does not factor into {channels} channels"
                )));
            }
            let points = Tensor::new(n * width / channels, channels, g.value(features).data().to_vec())?;
            let bank = KernelBank::median_heuristic(&points, None)?;
            let terms: Vec<KernelTerm> = bank
                .bandwidths()
                .iter()
                .zip(bank.coefficients())
                .map(|(&bandwidth, &weight)| KernelTerm { bandwidth, weight })
                .collect();
            g.pairwise_set_mmd(features, channels, &terms)
        }
    }
}

/// Row-softmax of negated distances.
pub fn transport_map(g: &mut Graph, distances: Var, metric: Metric, source: usize) -> Result<TransportMap> {
    let (r, c) = g.shape(distances);
    if r != c {
        return Err(Error::ShapeMismatch {
            op: "transport_map",
            lhs: (r, c),
            rhs: (r, r),
        });
    }
    let neg = g.scale(distances, -1.0)?;
    let pi = g.softmax(neg)?;
    Ok(TransportMap { pi, metric, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distances(rows: &[Vec<f64>], metric: Metric) -> Tensor {
        let mut g = Graph::new();
        let f = g.constant(Tensor::from_rows(rows).unwrap());
        let d = pairwise_distance_matrix(&mut g, f, metric, None).unwrap();
        g.value(d).clone()
    }

    #[test]
    fn distance_examples() {
        let d = distances(&[vec![0.0, 0.0], vec![3.0, 4.0]], Metric::Euclidean);
        assert_eq!(d.data(), &[0.0, 5.0, 5.0, 0.0]);

        let d = distances(&[vec![1.0, 2.0], vec![1.0, 2.0]], Metric::Euclidean);
        assert!(d.data().iter().all(|&v| v == 0.0));

        let d = distances(&[vec![1.0, 0.0], vec![0.0, 2.0]], Metric::Cosine);
        assert_eq!(d.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn mmd_spatial_requires_factorization() {
        let mut g = Graph::new();
        let f = g.constant(Tensor::from_rows(&[vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 1.0, 0.0, 2.0]]).unwrap());
        assert!(pairwise_distance_matrix(&mut g, f, Metric::MmdSpatial, None).is_err());
        assert!(pairwise_distance_matrix(&mut g, f, Metric::MmdSpatial, Some(3)).is_err());
        let d = pairwise_distance_matrix(&mut g, f, Metric::MmdSpatial, Some(2)).unwrap();
        let d = g.value(d);
        assert_eq!(d.get(0, 0), 0.0);
        assert!(d.get(0, 1) > 0.0);
    }

    #[test]
    fn transport_examples() {
        let mut g = Graph::new();
        let d = g.constant(Tensor::zeros(2, 2));
        let t = transport_map(&mut g, d, Metric::Euclidean, 0).unwrap();
        assert_eq!(t.matrix(&g).data(), &[0.5, 0.5, 0.5, 0.5]);

        let d = g.constant(Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap());
        let t = transport_map(&mut g, d, Metric::Euclidean, 0).unwrap();
        let e = std::f64::consts::E;
        let expected = [e / (e + 1.0), 1.0 / (e + 1.0)];
        assert!((expected[0] - 0.73105858).abs() < 1e-8);
        let pi = t.matrix(&g);
        assert!((pi.get(0, 0) - expected[0]).abs() < 1e-15);
        assert!((pi.get(0, 1) - expected[1]).abs() < 1e-15);
        assert!((pi.get(1, 1) - expected[0]).abs() < 1e-15);
        t.check_invariants(&g, 1e-12).unwrap();
    }
}
