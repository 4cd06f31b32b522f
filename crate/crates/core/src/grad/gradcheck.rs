//! Central finite-difference check of reverse-mode gradients.

use std::collections::BTreeMap;

use super::{GradError, Graph, NodeId};

#[derive(Clone, Copy, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Required distance from ReLU / abs / max kinks.
    pub kink_margin: f64,
    /// Floor on the relative-error denominator so vanishing gradients are
    /// compared absolutely.
    pub denom_floor: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            kink_margin: 1e-3,
            denom_floor: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LeafCheck {
    pub node: NodeId,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Pass,
    Mismatch { node: NodeId, index: usize, rel_err: f64 },
    NonFinite { node: NodeId },
    NearKink { node: NodeId, distance: f64 },
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub leaves: Vec<LeafCheck>,
    pub kink_margin: Option<f64>,
    pub verdict: Verdict,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn max_rel_err(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }
}

/// Compares the reverse-mode gradient of `root` with central differences for
/// every coordinate of every requires-grad leaf.
pub fn finite_diff_gradcheck(graph: &Graph, root: NodeId, opts: GradcheckOptions) -> Result<GradcheckReport, GradError> {
    let kink = graph.kink_margin(root);
    if let Some(node) = graph.first_non_finite() {
        return Ok(GradcheckReport {
            leaves: Vec::new(),
            kink_margin: kink.map(|k| k.1),
            verdict: Verdict::NonFinite { node },
        });
    }
    if let Some((node, distance)) = kink {
        if distance < opts.kink_margin {
            return Ok(GradcheckReport {
                leaves: Vec::new(),
                kink_margin: Some(distance),
                verdict: Verdict::NearKink { node, distance },
            });
        }
    }
    let analytic = graph.gradients(root)?;
    let mut leaves = Vec::new();
    let mut verdict = Verdict::Pass;
    for (&node, grad) in &analytic {
        let base = graph.value(node).clone();
        let mut check = LeafCheck {
            node,
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[j] += opts.step;
            let mut minus = base.clone();
            minus.data_mut()[j] -= opts.step;
            let fp = graph.replay(root, &BTreeMap::from([(node, plus)]))?.item();
            let fm = graph.replay(root, &BTreeMap::from([(node, minus)]))?.item();
            if !fp.is_finite() || !fm.is_finite() {
                return Ok(GradcheckReport {
                    leaves,
                    kink_margin: kink.map(|k| k.1),
                    verdict: Verdict::NonFinite { node: root },
                });
            }
            let numeric = (fp - fm) / (2.0 * opts.step);
            let a = grad.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.denom_floor);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = j;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        check.passed = check.max_rel_err <= opts.tolerance;
        if !check.passed && verdict == Verdict::Pass {
            verdict = Verdict::Mismatch {
                node,
                index: check.worst_index,
                rel_err: check.max_rel_err,
            };
        }
        leaves.push(check);
    }
    Ok(GradcheckReport {
        leaves,
        kink_margin: kink.map(|k| k.1),
        verdict,
    })
}
