//! Scalar losses: cross-entropy, the feature reconstruction penalty with its
//! batch-aggregation variants, the full-rank penalty, and phase composites.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grad::{Graph, NodeId, NormKind, Tensor};
use crate::nets::ForwardNodes;
use crate::phase::Phase;
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum NormVariant {
    /// Batch mean of per-sample l1 norms.
    #[default]
    #[serde(rename = "l1")]
    L1,
    /// Batch mean of per-sample l-inf norms.
    #[serde(rename = "l1_inf")]
    L1Inf,
    /// l-inf over features of the batch-mean absolute residual.
    #[serde(rename = "linf_1")]
    LinfL1,
}

impl NormVariant {
    pub const ALL: [NormVariant; 3] = [NormVariant::L1, NormVariant::L1Inf, NormVariant::LinfL1];

    pub fn as_str(self) -> &'static str {
        match self {
            NormVariant::L1 => "l1",
            NormVariant::L1Inf => "l1_inf",
            NormVariant::LinfL1 => "linf_1",
        }
    }
}

impl fmt::Display for NormVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        NormVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown norm variant `{s}`")))
    }
}

#[allow(non_snake_case)]
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct LossWeights {
    pub lambda_L: f64,
    pub lambda_FLFT: f64,
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), Error> {
        for (name, v) in [("lambda_L", self.lambda_L), ("lambda_FLFT", self.lambda_FLFT)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidSpec(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean softmax cross-entropy (binary logistic when `k == 1`).
pub fn cross_entropy(g: &mut Graph, logits: NodeId, labels: &[usize]) -> Result<NodeId, Error> {
    Ok(g.softmax_cross_entropy(logits, labels)?)
}

pub fn frr_loss(g: &mut Graph, features: NodeId, reconstruction: NodeId, variant: NormVariant) -> Result<NodeId, Error> {
    let r = g.sub(features, reconstruction)?;
    let out = match variant {
        NormVariant::L1 => {
            let n = g.row_norm(r, NormKind::L1)?;
            g.mean(n)?
        }
        NormVariant::L1Inf => {
            let n = g.row_norm(r, NormKind::Linf)?;
            g.mean(n)?
        }
        NormVariant::LinfL1 => {
            let c = g.col_mean_abs(r)?;
            g.norm(c, NormKind::Linf)?
        }
    };
    Ok(out)
}

/// `||W^T W - I_k||_F` for a head `W (m, k)`: the classifier matrix is
/// `W^T (k, m)`, so the identity lives on the `k x k` side.
pub fn full_rank_reg(g: &mut Graph, w: NodeId) -> Result<NodeId, Error> {
    let k = g.value(w).shape().get(1).copied().unwrap_or(1);
    let wt = g.transpose(w)?;
    let gram = g.matmul(wt, w)?;
    let eye = g.constant(Tensor::identity(k));
    let diff = g.sub(gram, eye)?;
    Ok(g.frobenius(diff)?)
}

/// Loss nodes of one phase objective.
#[derive(Clone, Copy, Debug)]
pub struct PhaseLoss {
    pub total: NodeId,
    pub ce: NodeId,
    pub regularizer: Option<NodeId>,
}

/// Phase composite on an already-recorded forward pass. The head weight is
/// taken from the forward bindings.
pub fn phase_loss(
    g: &mut Graph,
    out: &ForwardNodes,
    labels: &[usize],
    phase: Phase,
    weights: LossWeights,
    variant: NormVariant,
) -> Result<PhaseLoss, Error> {
    weights.validate()?;
    let ce = cross_entropy(g, out.logits, labels)?;
    let (reg, lambda) = match phase {
        Phase::Erm | Phase::ErmL | Phase::ErmFt | Phase::ErmFlft => (None, 0.0),
        Phase::FrrL => (Some(frr_loss(g, out.features, out.reconstruction, variant)?), weights.lambda_L),
        Phase::FrrFt | Phase::FrrFlft => (
            Some(frr_loss(g, out.features, out.reconstruction, variant)?),
            weights.lambda_FLFT,
        ),
        Phase::FullRankL => {
            let w = out
                .bindings
                .iter()
                .find(|(k, _)| k.group == crate::nets::ParamGroup::Head)
                .map(|(_, n)| *n)
                .ok_or_else(|| Error::InvalidInput("forward pass has no head binding".into()))?;
            (Some(full_rank_reg(g, w)?), weights.lambda_L)
        }
    };
    let total = match reg {
        Some(r) => {
            let s = g.scale(r, lambda)?;
            g.add(ce, s)?
        }
        None => ce,
    };
    Ok(PhaseLoss {
        total,
        ce,
        regularizer: reg,
    })
}
