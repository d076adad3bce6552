//! Object keypoint similarity and OKS-based average precision / recall.

use std::fmt::{self, Write as _};

use crate::codec::Keypoint;
use crate::error::{Error, Result};

/// Per-keypoint standard deviations of the COCO keypoint metric.
pub const COCO_SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
];

/// Per-detection cap per image, as in the COCO keypoint evaluator.
pub const MAX_DETS: usize = 20;

/// Per-keypoint falloff constants `k_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct OksConstants {
    k: Vec<f64>,
}

impl OksConstants {
    pub fn new(k: Vec<f64>) -> Result<Self> {
        if k.is_empty() || k.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::config("oks_constants", "every constant must be positive and finite"));
        }
        Ok(OksConstants { k })
    }

    pub fn uniform(num_keypoints: usize, k: f64) -> Result<Self> {
        Self::new(vec![k; num_keypoints])
    }

    /// COCO constants, `k_i = 2·sigma_i`.
    pub fn coco() -> Self {
        OksConstants {
            k: COCO_SIGMAS.iter().map(|s| 2.0 * s).collect(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.k
    }
}

/// Area of the tight box around the labeled keypoints times `scale`,
/// floored at one square pixel. `None` without labeled keypoints.
pub fn keypoint_box_area(gt: &[Keypoint], scale: f64) -> Option<f64> {
    let labeled = gt.iter().filter(|k| k.labeled());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    for k in labeled {
        any = true;
        x0 = x0.min(k.x);
        y0 = y0.min(k.y);
        x1 = x1.max(k.x);
        y1 = y1.max(k.y);
    }
    any.then(|| ((x1 - x0) * (y1 - y0) * scale).max(1.0))
}

/// Mean over labeled ground-truth keypoints of `exp(-d²/(2·area·k²))`.
/// Returns `None` when the ground truth has no labeled keypoint.
pub fn oks(pred: &[Keypoint], gt: &[Keypoint], area: f64, consts: &OksConstants) -> Result<Option<f64>> {
    if !(area > 0.0) {
        return Err(Error::Data(format!("OKS area must be positive, got {area}")));
    }
    if pred.len() != gt.len() || gt.len() != consts.k.len() {
        return Err(Error::shape(
            "oks",
            "length",
            format!(
                "{} predicted, {} ground-truth keypoints, {} constants",
                pred.len(),
                gt.len(),
                consts.k.len()
            ),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0;
    for ((p, g), k) in pred.iter().zip(gt).zip(&consts.k) {
        if !g.labeled() {
            continue;
        }
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        sum += (-d2 / (2.0 * area * k * k)).exp();
        count += 1;
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// A scored pose prediction for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub image_id: u64,
    pub score: f64,
    pub keypoints: Vec<Keypoint>,
}

/// A ground-truth pose with the area used to normalize OKS.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub image_id: u64,
    pub area: f64,
    pub keypoints: Vec<Keypoint>,
}

/// `0.50, 0.55, …, 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// Result at a single OKS threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub ap: f64,
    /// Final recall, or `None` without ground truth.
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApSummary {
    pub per_threshold: Vec<ThresholdResult>,
    /// Mean AP over thresholds; `None` when there are neither predictions
    /// nor ground truths.
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    /// Mean final recall over thresholds (at most [`MAX_DETS`] detections
    /// per image).
    pub ar: Option<f64>,
}

/// Scored predictions with their OKS against every ground truth of the
/// same image, kept to the top [`MAX_DETS`] per image, in descending score
/// order (ties keep input order).
struct Prepared {
    /// Per prediction: `(gt index, oks)` for every same-image ground truth.
    candidates: Vec<Vec<(usize, f64)>>,
    num_gt: usize,
}

fn prepare(preds: &[Detection], gts: &[GroundTruth], consts: &OksConstants) -> Result<Prepared> {
    let valid: Vec<usize> = (0..gts.len())
        .filter(|&i| gts[i].keypoints.iter().any(|k| k.labeled()))
        .collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
    let mut per_image = std::collections::HashMap::new();
    let mut candidates = Vec::new();
    for i in order {
        let p = &preds[i];
        let seen = per_image.entry(p.image_id).or_insert(0usize);
        if *seen == MAX_DETS {
            continue;
        }
        *seen += 1;
        let mut c = Vec::new();
        for (gi, &g) in valid.iter().enumerate() {
            let gt = &gts[g];
            if gt.image_id != p.image_id {
                continue;
            }
            if let Some(s) = oks(&p.keypoints, &gt.keypoints, gt.area, consts)? {
                c.push((gi, s));
            }
        }
        candidates.push(c);
    }
    Ok(Prepared {
        candidates,
        num_gt: valid.len(),
    })
}

/// True-positive flags in score order: each prediction takes the unmatched
/// ground truth of highest OKS at or above `t` (lowest index on ties).
fn greedy_match(prep: &Prepared, t: f64) -> Vec<bool> {
    let mut taken = vec![false; prep.num_gt];
    prep.candidates
        .iter()
        .map(|c| {
            let mut best: Option<(usize, f64)> = None;
            for &(g, s) in c {
                if !taken[g] && s >= t && best.is_none_or(|(_, b)| s > b) {
                    best = Some((g, s));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            best.is_some()
        })
        .collect()
}

/// 101-point interpolated AP from true-positive flags in score order.
pub fn interpolated_ap(tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let (mut recall, mut precision) = (Vec::with_capacity(tp.len()), Vec::with_capacity(tp.len()));
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / num_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    for i in (1..precision.len()).rev() {
        precision[i - 1] = precision[i - 1].max(precision[i]);
    }
    let mut total = 0.0;
    for r in 0..=100 {
        let r = r as f64 / 100.0;
        let idx = recall.partition_point(|&x| x < r);
        if idx < precision.len() {
            total += precision[idx];
        }
    }
    total / 101.0
}

/// OKS-based AP and recall over `thresholds`.
pub fn average_precision(
    preds: &[Detection],
    gts: &[GroundTruth],
    thresholds: &[f64],
    consts: &OksConstants,
) -> Result<ApSummary> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::config("thresholds", "thresholds must lie in (0, 1)"));
    }
    let prep = prepare(preds, gts, consts)?;
    let per_threshold: Vec<ThresholdResult> = thresholds
        .iter()
        .map(|&t| {
            let tp = greedy_match(&prep, t);
            let hits = tp.iter().filter(|v| **v).count();
            ThresholdResult {
                threshold: t,
                ap: interpolated_ap(&tp, prep.num_gt),
                recall: (prep.num_gt > 0).then(|| hits as f64 / prep.num_gt as f64),
            }
        })
        .collect();
    let defined = prep.num_gt > 0 || !prep.candidates.is_empty();
    let mean = |f: &dyn Fn(&ThresholdResult) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = per_threshold.iter().map(f).collect();
        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    };
    let at = |t: f64| {
        defined
            .then(|| per_threshold.iter().find(|r| r.threshold == t).map(|r| r.ap))
            .flatten()
    };
    Ok(ApSummary {
        ap: defined.then(|| mean(&|r| Some(r.ap))).flatten(),
        ap50: at(0.5),
        ap75: at(0.75),
        ar: mean(&|r| r.recall),
        per_threshold,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

impl ApSummary {
    /// Line-delimited `key=value` form.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        for (k, v) in [("AP", self.ap), ("AP50", self.ap50), ("AP75", self.ap75), ("AR", self.ar)] {
            let _ = writeln!(s, "{k}={}", fmt_opt(v));
        }
        s
    }
}

impl fmt::Display for ApSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>10} {:>10} {:>10} {:>10}", "AP", "AP .5", "AP .75", "AR")?;
        writeln!(
            f,
            "{:>10} {:>10} {:>10} {:>10}",
            fmt_opt(self.ap),
            fmt_opt(self.ap50),
            fmt_opt(self.ap75),
            fmt_opt(self.ar)
        )?;
        for r in &self.per_threshold {
            writeln!(f, "  OKS >= {:.2}: AP {:.6}  recall {}", r.threshold, r.ap, fmt_opt(r.recall))?;
        }
        Ok(())
    }
}
