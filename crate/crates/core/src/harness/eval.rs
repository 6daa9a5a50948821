use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::detector::{decode, DetectorParams};
use crate::assign::{AnchorSet, Assignment, GroundTruth};
use crate::cls_loss::rci;
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    /// Anchor the detection was decoded from.
    pub anchor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Match threshold for AP.
    pub iou_threshold: f64,
    /// Suppression threshold for NMS.
    pub nms_iou: f64,
    /// Average AP over IoU thresholds 0.50:0.05:0.95 instead.
    pub coco_sweep: bool,
    /// Detections below this score are dropped before NMS.
    pub score_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            nms_iou: 0.6,
            coco_sweep: false,
            score_threshold: 0.0,
        }
    }
}

/// Score-descending order; equal scores keep input order.
fn by_score(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Greedy non-maximum suppression. Returns kept indices, highest score first.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::new();
    for i in by_score(dets) {
        if keep
            .iter()
            .all(|&k| iou(&dets[k].bbox, &dets[i].bbox) <= iou_threshold)
        {
            keep.push(i);
        }
    }
    keep
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// `(detection index, ground-truth index)` true-positive pairs.
    pub matches: Vec<(usize, usize)>,
    /// Precision/recall after each detection in score order.
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

/// Single-threshold AP with all-point interpolation. Each detection, in score
/// order, takes the highest-IoU ground truth not yet matched, provided the IoU
/// reaches `iou_threshold`; otherwise it is a false positive.
pub fn average_precision(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> ApResult {
    let mut matched = vec![false; gts.len()];
    let mut matches = Vec::new();
    let mut precision = Vec::with_capacity(dets.len());
    let mut recall = Vec::with_capacity(dets.len());
    let mut tp = 0usize;

    for (rank, i) in by_score(dets).into_iter().enumerate() {
        let best = gts
            .iter()
            .enumerate()
            .filter(|(g, _)| !matched[*g])
            .map(|(g, gt)| (g, iou(&dets[i].bbox, gt)))
            .filter(|&(_, v)| v >= iou_threshold)
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)));
        if let Some((g, _)) = best {
            matched[g] = true;
            matches.push((i, g));
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(if gts.is_empty() {
            0.0
        } else {
            tp as f64 / gts.len() as f64
        });
    }

    // precision envelope, then area under the step curve
    let mut envelope = precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&envelope) {
        ap += (r - prev_recall) * p;
        prev_recall = *r;
    }

    ApResult {
        ap,
        matches,
        precision,
        recall,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Mean AP over classes that have at least one ground truth.
    pub ap: f64,
    pub per_class: Vec<Option<f64>>,
    /// `(anchor, ground-truth index)` pairs matched at `iou_threshold`.
    pub matched: Vec<(usize, usize)>,
}

/// Decodes every (anchor, class) output, applies per-class NMS and reports
/// class-mean AP.
pub fn evaluate(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    params: &DetectorParams,
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    let boxes = decode(anchors, params)?;
    let thresholds: Vec<f64> = if cfg.coco_sweep {
        (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
    } else {
        vec![cfg.iou_threshold]
    };

    let mut per_class = Vec::with_capacity(params.num_classes);
    let mut matched = Vec::new();
    for class in 0..params.num_classes {
        let gt_idx: Vec<usize> = (0..gts.len()).filter(|&g| gts[g].class == class).collect();
        if gt_idx.is_empty() {
            per_class.push(None);
            continue;
        }
        let gt_boxes: Vec<BBox> = gt_idx.iter().map(|&g| gts[g].bbox).collect();
        let dets: Vec<Detection> = boxes
            .iter()
            .enumerate()
            .map(|(a, b)| Detection {
                bbox: *b,
                score: params.score(a, class),
                anchor: a,
            })
            .filter(|d| d.score >= cfg.score_threshold)
            .collect();
        let kept: Vec<Detection> = nms(&dets, cfg.nms_iou).into_iter().map(|i| dets[i]).collect();

        let mut sum = 0.0;
        for (ti, &t) in thresholds.iter().enumerate() {
            let r = average_precision(&kept, &gt_boxes, t);
            if ti == 0 {
                matched.extend(r.matches.iter().map(|&(d, g)| (kept[d].anchor, gt_idx[g])));
            }
            sum += r.ap;
        }
        per_class.push(Some(sum / thresholds.len() as f64));
    }

    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let ap = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    matched.sort_unstable();
    Ok(Evaluation {
        ap,
        per_class,
        matched,
    })
}

/// Score/IoU agreement over positive samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyStats {
    /// Pearson correlation; `None` when either series is constant.
    pub pearson: Option<f64>,
    /// Fraction with `s - iou + α >= 0`.
    pub region1: f64,
    /// Fraction with `s - iou + α < 0`.
    pub region2: f64,
}

pub fn consistency_from_pairs(scores: &[f64], ious: &[f64], alpha: f64) -> Result<ConsistencyStats> {
    if scores.len() != ious.len() {
        return Err(Error::LengthMismatch {
            name: "ious",
            expected: scores.len(),
            actual: ious.len(),
        });
    }
    let n = scores.len();
    if n < 2 {
        return Err(Error::TooFewPositives(n));
    }
    let nf = n as f64;
    let ms = scores.iter().sum::<f64>() / nf;
    let mi = ious.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (s, i) in scores.iter().zip(ious) {
        sxy += (s - ms) * (i - mi);
        sxx += (s - ms).powi(2);
        syy += (i - mi).powi(2);
    }
    let pearson = (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    let above = scores
        .iter()
        .zip(ious)
        .filter(|(s, i)| rci(**s, **i, alpha) >= 0.0)
        .count();
    Ok(ConsistencyStats {
        pearson,
        region1: above as f64 / nf,
        region2: (n - above) as f64 / nf,
    })
}

/// [`consistency_from_pairs`] over the positives of `assignment`, scoring each
/// with its matched class and its decoded box's IoU with the matched ground truth.
pub fn consistency_stats(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    params: &DetectorParams,
    assignment: &Assignment,
    alpha: f64,
) -> Result<ConsistencyStats> {
    let boxes = decode(anchors, params)?;
    let (scores, ious): (Vec<f64>, Vec<f64>) = assignment
        .positives()
        .map(|(a, m)| (params.score(a, m.class), iou(&boxes[a], &gts[m.gt].bbox)))
        .unzip();
    consistency_from_pairs(&scores, &ious, alpha)
}
