use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Weights and shape parameters of the combined objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_intra: f64,
    pub lambda_inter: f64,
    pub lambda_align: f64,
    pub lambda_std: f64,
    /// Similarity margin α of the intra-model hinge.
    pub margin: f64,
    /// InfoNCE temperature τ.
    pub infonce_temperature: f64,
    pub distill_temperature: f64,
    /// Exponent of the transport discrepancy diagnostic.
    pub gw_exponent: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_intra: 1.0,
            lambda_inter: 1.0,
            lambda_align: 10.0,
            lambda_std: 1.0,
            margin: 0.4,
            infonce_temperature: 0.5,
            distill_temperature: 1.0,
            gw_exponent: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_intra", self.lambda_intra),
            ("lambda_inter", self.lambda_inter),
            ("lambda_align", self.lambda_align),
            ("lambda_std", self.lambda_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(-1.0..=1.0).contains(&self.margin) {
            return Err(Error::invalid(format!("margin must lie in [-1, 1], got {}", self.margin)));
        }
        for (name, v) in [
            ("infonce_temperature", self.infonce_temperature),
            ("distill_temperature", self.distill_temperature),
            ("gw_exponent", self.gw_exponent),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Component losses on a graph; `None` means the term was not computed.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub intra: Option<Var>,
    pub inter: Option<Var>,
    pub align: Option<Var>,
    pub std: Option<Var>,
}

/// Scalar values of each component and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub intra: f64,
    pub inter: f64,
    pub align: f64,
    pub std: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `|total − Σ λ·component|`.
    pub fn identity_residual(&self, w: &LossWeights) -> f64 {
        let recomposed = w.lambda_intra * self.intra
            + w.lambda_inter * self.inter
            + w.lambda_align * self.align
            + w.lambda_std * self.std;
        (self.total - recomposed).abs()
    }

    pub fn components(&self) -> [(&'static str, f64); 4] {
        [
            ("intra", self.intra),
            ("inter", self.inter),
            ("align", self.align),
            ("std", self.std),
        ]
    }
}

/// `λ_intra·intra + λ_inter·inter + λ_a·align + λ_d·std`.
pub fn total_loss(g: &mut Graph, terms: &LossTerms, w: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let mut breakdown = LossBreakdown::default();
    let mut total: Option<Var> = None;
    let parts = [
        (terms.intra, w.lambda_intra, &mut breakdown.intra),
        (terms.inter, w.lambda_inter, &mut breakdown.inter),
        (terms.align, w.lambda_align, &mut breakdown.align),
        (terms.std, w.lambda_std, &mut breakdown.std),
    ];
    for (term, lambda, slot) in parts {
        let Some(v) = term else { continue };
        *slot = g.value(v).item();
        let scaled = g.scale(v, lambda)?;
        total = Some(match total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(crate::autodiff::Tensor::scalar(0.0)),
    };
    breakdown.total = g.value(total).item();
    Ok((total, breakdown))
}
