//! Positive/negative anchor assignment.
//!
//! [`atss_assign`] follows adaptive training sample selection: for every
//! ground truth take the `k` anchors per pyramid level whose centers are
//! closest to the ground-truth center, threshold their IoUs at mean + standard
//! deviation, and keep the survivors whose center falls inside the box.
//!
//! [`eatss_assign`] starts from the ATSS result and, per ground truth, adds up
//! to `l` extra anchors found within the largest center distance `Dis_f` of
//! that ground truth's ATSS positives, ranked by [`rank_score`].
//!
//! All ties (equal distances, equal IoUs, equal ranking scores) resolve to the
//! lower anchor or ground-truth index.

use std::cmp::Ordering;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{center_distance, iou, BBox};

/// Anchors grouped by pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<BBox>,
    levels: Vec<Range<usize>>,
    strides: Vec<f64>,
}

impl AnchorSet {
    /// Builds a set from `(stride, anchors)` per level. Every level must be
    /// nonempty and every anchor center must sit at `(i + 0.5)·stride`.
    pub fn from_levels(levels: Vec<(f64, Vec<BBox>)>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidAnchors("no pyramid levels".into()));
        }
        let mut anchors = Vec::new();
        let mut ranges = Vec::new();
        let mut strides = Vec::new();
        for (li, (stride, boxes)) in levels.into_iter().enumerate() {
            if !(stride > 0.0 && stride.is_finite()) {
                return Err(Error::InvalidAnchors(format!(
                    "level {li}: stride {stride} is not positive"
                )));
            }
            if boxes.is_empty() {
                return Err(Error::InvalidAnchors(format!("level {li} is empty")));
            }
            for a in &boxes {
                let (cx, cy) = a.center();
                if !on_grid(cx, stride) || !on_grid(cy, stride) {
                    return Err(Error::InvalidAnchors(format!(
                        "level {li}: center ({cx}, {cy}) is off the stride-{stride} grid"
                    )));
                }
            }
            let start = anchors.len();
            anchors.extend(boxes);
            ranges.push(start..anchors.len());
            strides.push(stride);
        }
        Ok(Self {
            anchors,
            levels: ranges,
            strides,
        })
    }

    /// Square anchors of side `scale·stride` tiled over a `width × height`
    /// canvas, one level per stride, row-major within a level.
    pub fn grid(width: f64, height: f64, strides: &[f64], scale: f64) -> Result<Self> {
        let mut levels = Vec::with_capacity(strides.len());
        for &stride in strides {
            let nx = (width / stride).floor() as usize;
            let ny = (height / stride).floor() as usize;
            let side = scale * stride;
            let mut boxes = Vec::with_capacity(nx * ny);
            for iy in 0..ny {
                for ix in 0..nx {
                    let cx = (ix as f64 + 0.5) * stride;
                    let cy = (iy as f64 + 0.5) * stride;
                    boxes.push(BBox::from_center_size(cx, cy, side, side)?);
                }
            }
            levels.push((stride, boxes));
        }
        Self::from_levels(levels)
    }

    pub fn anchors(&self) -> &[BBox] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level_range(&self, level: usize) -> Range<usize> {
        self.levels[level].clone()
    }

    pub fn strides(&self) -> &[f64] {
        &self.strides
    }

    /// Pyramid level of anchor `index`.
    pub fn level_of(&self, index: usize) -> usize {
        self.levels
            .iter()
            .position(|r| r.contains(&index))
            .expect("anchor index out of range")
    }

    pub fn stride_of(&self, index: usize) -> f64 {
        self.strides[self.level_of(index)]
    }
}

fn on_grid(c: f64, stride: f64) -> bool {
    let u = c / stride - 0.5;
    (u - u.round()).abs() < 1e-9 && u.round() >= 0.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub gt: usize,
    pub class: usize,
}

/// Per-anchor labels. Every anchor is either positive (with a match) or
/// negative, so the two sets partition the anchors by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    labels: Vec<Option<Match>>,
}

impl Assignment {
    pub fn all_negative(n: usize) -> Self {
        Self {
            labels: vec![None; n],
        }
    }

    pub fn from_labels(labels: Vec<Option<Match>>) -> Self {
        Self { labels }
    }

    pub fn labels(&self) -> &[Option<Match>] {
        &self.labels
    }

    pub fn get(&self, anchor: usize) -> Option<Match> {
        self.labels[anchor]
    }

    pub fn is_positive(&self, anchor: usize) -> bool {
        self.labels[anchor].is_some()
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, Match)> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.map(|m| (i, m)))
    }

    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.is_none().then_some(i))
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|m| m.is_some()).count()
    }

    pub fn positives_of(&self, gt: usize) -> Vec<usize> {
        self.positives()
            .filter(|(_, m)| m.gt == gt)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignMode {
    Atss,
    Eatss,
}

/// Which box's IoU with the ground truth enters [`rank_score`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankIou {
    /// The anchor's current predicted box.
    Predicted,
    /// The anchor box itself.
    Anchor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssignConfig {
    /// Candidates per level.
    pub k: usize,
    /// Extra anchors per ground truth.
    pub l: usize,
    pub mode: AssignMode,
    pub rank_iou: RankIou,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            k: 9,
            l: 3,
            mode: AssignMode::Eatss,
            rank_iou: RankIou::Predicted,
        }
    }
}

impl AssignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::OutOfRange {
                name: "assign.k",
                value: 0.0,
                expected: ">= 1",
            });
        }
        Ok(())
    }
}

/// What the ATSS stage computed for one ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GtDiagnostics {
    /// Candidate anchors (k nearest per level), in level order.
    pub candidates: Vec<usize>,
    /// IoU threshold `mean + std` over the candidates.
    pub threshold: f64,
    /// Anchors that passed the threshold and center test, before claims are resolved.
    pub passed: Vec<usize>,
    /// Largest center distance among the final ATSS positives; `None` when the
    /// ground truth ended up with no positive (no expansion then).
    pub dis_f: Option<f64>,
    /// Anchors added by the expansion stage.
    pub expanded: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignOutput {
    pub assignment: Assignment,
    pub per_gt: Vec<GtDiagnostics>,
}

fn cmp_f64(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn atss_assign(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    cfg: &AssignConfig,
) -> Result<AssignOutput> {
    cfg.validate()?;
    let n = anchors.len();
    let boxes = anchors.anchors();
    let mut per_gt = Vec::with_capacity(gts.len());
    // best (iou, gt) claim per anchor
    let mut claims: Vec<Option<(f64, usize)>> = vec![None; n];

    for (gi, gt) in gts.iter().enumerate() {
        let mut candidates = Vec::new();
        for level in 0..anchors.num_levels() {
            let range = anchors.level_range(level);
            let mut by_distance: Vec<(f64, usize)> = range
                .map(|i| (center_distance(&boxes[i], &gt.bbox), i))
                .collect();
            by_distance.sort_by(|a, b| cmp_f64(a.0, b.0).then(a.1.cmp(&b.1)));
            candidates.extend(by_distance.iter().take(cfg.k).map(|&(_, i)| i));
        }

        let ious: Vec<f64> = candidates
            .iter()
            .map(|&i| iou(&boxes[i], &gt.bbox))
            .collect();
        let (mean, std) = mean_std(&ious);
        let threshold = mean + std;

        let passed: Vec<usize> = candidates
            .iter()
            .zip(&ious)
            .filter(|&(&i, &v)| {
                let (cx, cy) = boxes[i].center();
                v >= threshold && gt.bbox.contains_strict(cx, cy)
            })
            .map(|(&i, _)| i)
            .collect();

        for (&i, &v) in candidates.iter().zip(&ious) {
            if !passed.contains(&i) {
                continue;
            }
            // strictly higher IoU wins; earlier ground truth keeps ties
            match claims[i] {
                Some((best, _)) if best >= v => {}
                _ => claims[i] = Some((v, gi)),
            }
        }

        per_gt.push(GtDiagnostics {
            candidates,
            threshold,
            passed,
            dis_f: None,
            expanded: Vec::new(),
        });
    }

    let labels = claims
        .into_iter()
        .map(|c| {
            c.map(|(_, gi)| Match {
                gt: gi,
                class: gts[gi].class,
            })
        })
        .collect();
    let assignment = Assignment { labels };

    for (gi, diag) in per_gt.iter_mut().enumerate() {
        diag.dis_f = max_distance(&assignment.positives_of(gi), boxes, &gts[gi].bbox);
    }

    Ok(AssignOutput { assignment, per_gt })
}

fn max_distance(members: &[usize], boxes: &[BBox], gt: &BBox) -> Option<f64> {
    members
        .iter()
        .map(|&i| center_distance(&boxes[i], gt))
        .max_by(|a, b| cmp_f64(*a, *b))
}

/// Expansion ranking: IoU with the ground truth minus the center distance
/// normalized by `Dis_f`. Higher is better. A zero `dis_f` contributes no
/// distance term.
pub fn rank_score(anchor: &BBox, gt: &BBox, dis_f: f64, pred_box: &BBox) -> f64 {
    let distance = if dis_f > 0.0 {
        center_distance(anchor, gt) / dis_f
    } else {
        0.0
    };
    iou(pred_box, gt) - distance
}

/// ATSS followed by the per-ground-truth expansion. `pred_boxes` holds the
/// current predicted box of every anchor.
pub fn eatss_assign(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    cfg: &AssignConfig,
    pred_boxes: &[BBox],
) -> Result<AssignOutput> {
    if pred_boxes.len() != anchors.len() {
        return Err(Error::LengthMismatch {
            name: "pred_boxes",
            expected: anchors.len(),
            actual: pred_boxes.len(),
        });
    }
    let AssignOutput {
        mut assignment,
        mut per_gt,
    } = atss_assign(anchors, gts, cfg)?;
    let boxes = anchors.anchors();

    for (gi, gt) in gts.iter().enumerate() {
        let Some(dis_f) = per_gt[gi].dis_f else {
            continue;
        };
        let mut ranked: Vec<(f64, usize)> = (0..anchors.len())
            .filter(|&i| !assignment.is_positive(i))
            .filter(|&i| center_distance(&boxes[i], &gt.bbox) <= dis_f)
            .map(|i| {
                let scored_box = match cfg.rank_iou {
                    RankIou::Predicted => &pred_boxes[i],
                    RankIou::Anchor => &boxes[i],
                };
                (rank_score(&boxes[i], &gt.bbox, dis_f, scored_box), i)
            })
            .collect();
        ranked.sort_by(|a, b| cmp_f64(b.0, a.0).then(a.1.cmp(&b.1)));

        for &(_, i) in ranked.iter().take(cfg.l) {
            assignment.labels[i] = Some(Match {
                gt: gi,
                class: gt.class,
            });
            per_gt[gi].expanded.push(i);
        }
    }

    Ok(AssignOutput { assignment, per_gt })
}

/// Runs the assigner selected by `cfg.mode`.
pub fn assign(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    cfg: &AssignConfig,
    pred_boxes: &[BBox],
) -> Result<AssignOutput> {
    match cfg.mode {
        AssignMode::Atss => atss_assign(anchors, gts, cfg),
        AssignMode::Eatss => eatss_assign(anchors, gts, cfg, pred_boxes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn two_level() -> AnchorSet {
        AnchorSet::grid(32.0, 32.0, &[4.0, 8.0], 2.0).unwrap()
    }

    #[test]
    fn grid_layout() {
        let a = two_level();
        assert_eq!(a.num_levels(), 2);
        assert_eq!(a.len(), 64 + 16);
        assert_eq!(a.level_range(1), 64..80);
        assert_eq!(a.anchors()[0], b(-2.0, -2.0, 6.0, 6.0));
        assert_eq!(a.stride_of(70), 8.0);
    }

    #[test]
    fn rejects_bad_levels() {
        assert!(AnchorSet::from_levels(vec![]).is_err());
        assert!(AnchorSet::from_levels(vec![(4.0, vec![])]).is_err());
        let off = BBox::from_center_size(3.0, 2.0, 4.0, 4.0).unwrap();
        assert!(AnchorSet::from_levels(vec![(4.0, vec![off])]).is_err());
    }

    #[test]
    fn single_dominant_anchor_is_positive() {
        let anchors = AnchorSet::from_levels(vec![(
            10.0,
            vec![
                BBox::from_center_size(5.0, 5.0, 10.0, 10.0).unwrap(),
                BBox::from_center_size(95.0, 95.0, 10.0, 10.0).unwrap(),
                BBox::from_center_size(95.0, 5.0, 10.0, 10.0).unwrap(),
            ],
        )])
        .unwrap();
        let gts = [GroundTruth {
            bbox: b(0.0, 0.0, 10.0, 10.0),
            class: 1,
        }];
        let cfg = AssignConfig {
            k: 3,
            ..AssignConfig::default()
        };
        let out = atss_assign(&anchors, &gts, &cfg).unwrap();
        assert_eq!(out.assignment.get(0), Some(Match { gt: 0, class: 1 }));
        assert_eq!(out.assignment.num_positive(), 1);
        assert_eq!(out.per_gt[0].dis_f, Some(0.0));
    }

    #[test]
    fn no_ground_truth_means_all_negative() {
        let a = two_level();
        let out = atss_assign(&a, &[], &AssignConfig::default()).unwrap();
        assert_eq!(out.assignment, Assignment::all_negative(a.len()));
        assert_eq!(out.assignment.negatives().count(), a.len());
    }

    #[test]
    fn eatss_with_zero_extra_equals_atss() {
        let a = two_level();
        let gts = [
            GroundTruth {
                bbox: b(3.0, 5.0, 15.0, 13.0),
                class: 0,
            },
            GroundTruth {
                bbox: b(14.0, 12.0, 30.0, 30.0),
                class: 1,
            },
        ];
        let cfg = AssignConfig {
            l: 0,
            ..AssignConfig::default()
        };
        let atss = atss_assign(&a, &gts, &cfg).unwrap();
        let eatss = eatss_assign(&a, &gts, &cfg, a.anchors()).unwrap();
        assert_eq!(atss.assignment, eatss.assignment);

        let cfg3 = AssignConfig { l: 3, ..cfg };
        let expanded = eatss_assign(&a, &gts, &cfg3, a.anchors()).unwrap();
        for (i, m) in atss.assignment.positives() {
            assert_eq!(expanded.assignment.get(i), Some(m));
        }
        assert!(expanded.assignment.num_positive() <= atss.assignment.num_positive() + 6);
        for d in &expanded.per_gt {
            assert!(d.dis_f.is_some());
            assert!(d.expanded.len() <= 3);
        }
    }

    #[test]
    fn rank_score_extremes() {
        let gt = b(0.0, 0.0, 10.0, 10.0);
        let at_center = BBox::from_center_size(5.0, 5.0, 4.0, 4.0).unwrap();
        assert_eq!(rank_score(&at_center, &gt, 3.0, &gt), 1.0);
        let boundary = BBox::from_center_size(8.0, 9.0, 4.0, 4.0).unwrap();
        let disjoint = b(20.0, 20.0, 22.0, 22.0);
        assert_eq!(rank_score(&boundary, &gt, 5.0, &disjoint), -1.0);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[0.4]), (0.4, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn pred_box_length_checked() {
        let a = two_level();
        assert!(matches!(
            eatss_assign(&a, &[], &AssignConfig::default(), &[]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
