use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::detector::{corner_to_delta_gradient, decode, DetectorParams};
use super::eval::{consistency_stats, evaluate, ConsistencyStats, EvalConfig};
use super::optim::{OptimConfig, Optimizer};
use super::scene::SceneBatch;
use crate::assign::{assign, AnchorSet, AssignConfig, Assignment, GroundTruth};
use crate::cls_loss::focal::{focal_gradient, focal_loss, FocalConfig};
use crate::cls_loss::{hcra_c_loss, weighted_ce_gradient, ClsConfig, ClsSample};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::reg_loss::{
    hcra_r_weights, weighted_giou_gradient, weighted_giou_loss, EmaState, RegConfig, RegSample,
};

/// Which classification/regression pair drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// HCRA-C + HCRA-R.
    Hcral,
    /// Focal loss + plain GIoU.
    FocalGiou,
    /// Gradient-density weighted CE + plain GIoU.
    GhmcGiou,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Hcral => "hcral",
            LossKind::FocalGiou => "focal_giou",
            LossKind::GhmcGiou => "ghmc_giou",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace(['+', '-'], "_").as_str() {
            "hcral" => Ok(LossKind::Hcral),
            "focal_giou" => Ok(LossKind::FocalGiou),
            "ghmc_giou" => Ok(LossKind::GhmcGiou),
            other => Err(Error::Config(format!(
                "unknown loss `{other}` (expected hcral, focal_giou or ghmc_giou)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub cls: ClsConfig,
    pub reg: RegConfig,
    pub focal: FocalConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Hcral,
            cls: ClsConfig::default(),
            reg: RegConfig::default(),
            focal: FocalConfig::default(),
        }
    }
}

/// Loss inputs for one parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// One per (anchor, class), anchor-major like the logits.
    pub cls: Vec<ClsSample>,
    /// One per positive anchor.
    pub reg: Vec<RegSample>,
    pub positive_anchors: Vec<usize>,
    pub boxes: Vec<BBox>,
}

/// Builds classification samples for every (anchor, class) pair and
/// regression samples for the positives. The positive pair of an assigned
/// anchor carries the IoU with its ground truth; every other pair carries the
/// anchor's best IoU with any ground truth.
pub fn build_samples(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    assignment: &Assignment,
    params: &DetectorParams,
) -> Result<SampleSet> {
    let boxes = decode(anchors, params)?;
    let classes = params.num_classes;
    let mut cls = Vec::with_capacity(boxes.len() * classes);
    let mut reg = Vec::new();
    let mut positive_anchors = Vec::new();

    for (a, bx) in boxes.iter().enumerate() {
        let best = gts.iter().map(|g| iou(bx, &g.bbox)).fold(0.0, f64::max);
        let matched = assignment.get(a);
        for c in 0..classes {
            let p = params.score(a, c);
            let sample = match matched {
                Some(m) if m.class == c => ClsSample::new(p, true, iou(bx, &gts[m.gt].bbox))?,
                _ => ClsSample::new(p, false, best)?,
            };
            cls.push(sample);
        }
        if let Some(m) = matched {
            reg.push(RegSample::new(*bx, gts[m.gt].bbox, params.score(a, m.class))?);
            positive_anchors.push(a);
        }
    }
    Ok(SampleSet {
        cls,
        reg,
        positive_anchors,
        boxes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
    /// Detached classification weights (empty for the focal baseline).
    pub cls_weights: Vec<f64>,
    pub cls_normalizer: f64,
    /// Detached regression weights, one per positive.
    pub reg_weights: Vec<f64>,
    pub grad_logits: Vec<f64>,
    pub grad_deltas: Vec<f64>,
    pub ema: EmaState,
    /// Mean IoU of positives' decoded boxes with their ground truths.
    pub mean_iou: f64,
    pub samples: SampleSet,
}

/// Losses and parameter gradients at `params`, with all sample weights
/// detached. The returned `ema` has folded in this step's batch.
pub fn loss_and_gradient(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    assignment: &Assignment,
    params: &DetectorParams,
    cfg: &LossConfig,
    ema: &EmaState,
) -> Result<LossEvaluation> {
    let samples = build_samples(anchors, gts, assignment, params)?;

    let (cls_loss, cls_weights, cls_normalizer, grad_logits) = match cfg.kind {
        LossKind::FocalGiou => (
            focal_loss(&samples.cls, &cfg.focal)?,
            Vec::new(),
            1.0,
            focal_gradient(&samples.cls, &cfg.focal)?,
        ),
        LossKind::Hcral | LossKind::GhmcGiou => {
            let cls_cfg = if cfg.kind == LossKind::Hcral {
                cfg.cls
            } else {
                ClsConfig {
                    use_omega: false,
                    use_rci: false,
                    ..cfg.cls
                }
            };
            let out = hcra_c_loss(&samples.cls, &cls_cfg)?;
            let grad = weighted_ce_gradient(&samples.cls, &out.weights, out.normalizer);
            (out.loss, out.weights, out.normalizer, grad)
        }
    };

    let mut grad_deltas = vec![0.0; params.deltas.len()];
    let (reg_loss, reg_weights, ema_next) = if samples.reg.is_empty() {
        (0.0, Vec::new(), *ema)
    } else {
        let (weights, next) = match cfg.kind {
            LossKind::Hcral => {
                let w = hcra_r_weights(&samples.reg, &cfg.reg, ema)?;
                (w.weights, w.state)
            }
            _ => (vec![1.0; samples.reg.len()], *ema),
        };
        let loss = weighted_giou_loss(&samples.reg, &weights, cfg.reg.task_weight);
        let corner = weighted_giou_gradient(&samples.reg, &weights, cfg.reg.task_weight);
        for (&a, g) in samples.positive_anchors.iter().zip(&corner) {
            let d = corner_to_delta_gradient(
                *g,
                &samples.boxes[a],
                anchors.stride_of(a),
                params.delta(a),
            );
            grad_deltas[a * 4..a * 4 + 4].copy_from_slice(&d);
        }
        (loss, weights, next)
    };

    let mean_iou = mean_positive_iou(&samples.reg);
    Ok(LossEvaluation {
        cls_loss,
        reg_loss,
        total: cls_loss + reg_loss,
        cls_weights,
        cls_normalizer,
        reg_weights,
        grad_logits,
        grad_deltas,
        ema: ema_next,
        mean_iou,
        samples,
    })
}

fn mean_positive_iou(reg: &[RegSample]) -> f64 {
    if reg.is_empty() {
        return 0.0;
    }
    reg.iter().map(|s| iou(&s.pred, &s.target)).sum::<f64>() / reg.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
    pub mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Losses and mean matched IoU before each update.
    pub steps: Vec<StepRecord>,
    pub final_mean_iou: f64,
    pub final_cls_loss: f64,
    pub final_reg_loss: f64,
    pub ap: f64,
    /// `None` with fewer than two positives.
    pub consistency: Option<ConsistencyStats>,
    pub num_positive: usize,
    pub ema_r: f64,
    pub wall_clock: Duration,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub params: DetectorParams,
    pub assignment: Assignment,
}

/// Assigns once against the scene's initial predictions, then trains.
pub fn train(
    scene: &SceneBatch,
    loss_cfg: &LossConfig,
    assign_cfg: &AssignConfig,
    opt_cfg: &OptimConfig,
    eval_cfg: &EvalConfig,
) -> Result<TrainOutcome> {
    let initial_boxes = decode(&scene.anchors, &scene.params)?;
    let assigned = assign(&scene.anchors, &scene.gts, assign_cfg, &initial_boxes)?;
    train_assigned(scene, assigned.assignment, loss_cfg, opt_cfg, eval_cfg)
}

/// Trains against a fixed assignment.
pub fn train_assigned(
    scene: &SceneBatch,
    assignment: Assignment,
    loss_cfg: &LossConfig,
    opt_cfg: &OptimConfig,
    eval_cfg: &EvalConfig,
) -> Result<TrainOutcome> {
    opt_cfg.validate()?;
    loss_cfg.cls.validate()?;
    loss_cfg.reg.validate()?;
    let started = Instant::now();

    let mut params = scene.params.clone();
    let mut ema = EmaState::default();
    let mut logit_opt = Optimizer::new(*opt_cfg, params.logits.len());
    let mut delta_opt = Optimizer::new(*opt_cfg, params.deltas.len());
    let mut steps = Vec::with_capacity(opt_cfg.steps);

    for step in 0..opt_cfg.steps {
        let eval = loss_and_gradient(
            &scene.anchors,
            &scene.gts,
            &assignment,
            &params,
            loss_cfg,
            &ema,
        )?;
        if !eval.total.is_finite() {
            return Err(Error::Divergence { step, what: "loss" });
        }
        steps.push(StepRecord {
            step,
            cls_loss: eval.cls_loss,
            reg_loss: eval.reg_loss,
            total: eval.total,
            mean_iou: eval.mean_iou,
        });
        logit_opt.step(&mut params.logits, &eval.grad_logits);
        delta_opt.step(&mut params.deltas, &eval.grad_deltas);
        if !params.is_finite() {
            return Err(Error::Divergence {
                step,
                what: "parameters",
            });
        }
        ema = eval.ema;
    }

    let last = loss_and_gradient(
        &scene.anchors,
        &scene.gts,
        &assignment,
        &params,
        loss_cfg,
        &ema,
    )?;
    let evaluation = evaluate(&scene.anchors, &scene.gts, &params, eval_cfg)?;
    let consistency = consistency_stats(
        &scene.anchors,
        &scene.gts,
        &params,
        &assignment,
        loss_cfg.cls.alpha,
    )
    .ok();

    let report = TrainReport {
        steps,
        final_mean_iou: last.mean_iou,
        final_cls_loss: last.cls_loss,
        final_reg_loss: last.reg_loss,
        ap: evaluation.ap,
        consistency,
        num_positive: assignment.num_positive(),
        ema_r: ema.r(),
        wall_clock: started.elapsed(),
    };
    Ok(TrainOutcome {
        report,
        params,
        assignment,
    })
}
