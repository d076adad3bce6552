//! Heatmap losses. Each keypoint contributes the mean squared error of its
//! heatmap plane; keypoints with visibility 0 are excluded.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Scalar loss values of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    /// GlobalNet L2 loss per pyramid level (level 2 first).
    pub global: [f64; 4],
    /// RefineNet hard-keypoint-mined loss.
    pub refine: f64,
    /// Mean of the four GlobalNet losses plus the RefineNet loss.
    pub total: f64,
    /// Samples in the batch without any visible keypoint.
    pub invisible_samples: usize,
}

impl LossReport {
    /// Recomputes `total` from the components in the order the graph uses.
    pub fn recompute_total(&self) -> f64 {
        let g = self.global;
        (((g[0] + g[1]) + g[2]) + g[3]) * 0.25 + self.refine
    }
}

fn per_keypoint(g: &mut Graph, pred: Var, target: Var, visible: &[bool]) -> Result<(Var, usize)> {
    let d = g.dims(pred);
    if visible.len() != d.n * d.c {
        return Err(Error::shape(
            "keypoint_loss",
            "length",
            format!("{} visibility flags for {} keypoints", visible.len(), d.n * d.c),
        ));
    }
    let invisible = visible.chunks(d.c.max(1)).filter(|s| s.iter().all(|v| !v)).count();
    Ok((g.keypoint_mse(pred, target)?, invisible))
}

/// Batch mean of the per-sample mean over visible keypoints. Also returns
/// the number of samples without visible keypoints (they contribute zero).
pub fn l2_loss(g: &mut Graph, pred: Var, target: Var, visible: &[bool]) -> Result<(Var, usize)> {
    let (mse, invisible) = per_keypoint(g, pred, target, visible)?;
    let k = g.dims(pred).c;
    Ok((g.topk_mean(mse, visible, k)?, invisible))
}

/// Like [`l2_loss`] but each sample averages only its `k` largest visible
/// keypoint losses.
pub fn ohkm_loss(g: &mut Graph, pred: Var, target: Var, visible: &[bool], k: usize) -> Result<(Var, usize)> {
    if k == 0 {
        return Err(Error::config("ohkm_k", "must be positive"));
    }
    let (mse, invisible) = per_keypoint(g, pred, target, visible)?;
    Ok((g.topk_mean(mse, visible, k)?, invisible))
}
