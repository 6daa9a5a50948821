//! Self-checks behind the `verify` command.
//!
//! Each check recomputes its reference values directly rather than through the
//! functions under test, so a disagreement points at one side or the other.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assign::{atss_assign, eatss_assign, AssignConfig, AnchorSet, GroundTruth};
use crate::cls_loss::{
    hcra_c_loss, rci_cls_gate, weighted_ce_gradient, weighted_ce_loss, ClsConfig,
    ClsSample,
};
use crate::config::ExperimentConfig;
use crate::curves::{evaluate_curve, CurveKind, CurveSpec};
use crate::error::Result;
use crate::geometry::BBox;
use crate::harness::{decode, generate_scene, train, LossConfig, LossKind, SceneConfig};
use crate::reg_loss::{
    hcra_r_weights, rci_reg_value, weighted_giou_gradient, weighted_giou_loss, EmaState,
    RegConfig, RegSample, ResidualConvention,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    /// Informational checks are printed but do not decide the overall verdict.
    pub required: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = match (self.required, self.passed) {
            (false, _) => "NOTE",
            (true, true) => "PASS",
            (true, false) => "FAIL",
        };
        write!(f, "[{verdict}] {}. {}: {}", self.id, self.name, self.detail)
    }
}

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-6;

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn random_box(rng: &mut impl Rng) -> BBox {
    let x1 = rng.random_range(0.0..60.0);
    let y1 = rng.random_range(0.0..60.0);
    let w = rng.random_range(2.0..30.0);
    let h = rng.random_range(2.0..30.0);
    BBox::new(x1, y1, x1 + w, y1 + h).expect("ordered")
}

/// A prediction near `target`, occasionally pushed far enough to be disjoint.
fn perturbed_box(rng: &mut impl Rng, target: &BBox) -> BBox {
    let spread = if rng.random_bool(0.2) { 2.0 } else { 0.4 };
    let (cx, cy, w, h) = target.to_center_size();
    let ncx = cx + rng.random_range(-spread..spread) * w;
    let ncy = cy + rng.random_range(-spread..spread) * h;
    let nw = w * rng.random_range(0.5f64..2.0);
    let nh = h * rng.random_range(0.5f64..2.0);
    BBox::from_center_size(ncx, ncy, nw, nh).expect("positive size")
}

fn near_kink(pred: &BBox, target: &BBox) -> bool {
    let xs = [(pred.x1, pred.x2), (target.x1, target.x2)];
    let ys = [(pred.y1, pred.y2), (target.y1, target.y2)];
    [xs, ys].iter().any(|[(p1, p2), (t1, t2)]| {
        [p1, p2]
            .iter()
            .any(|p| (*p - t1).abs() < KINK_MARGIN || (*p - t2).abs() < KINK_MARGIN)
    })
}

/// Analytic gradients against central differences with frozen weights.
pub fn gradient_check(seed: u64, samples: usize) -> Result<CheckOutcome> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cls_cfg = ClsConfig::default();
    let reg_cfg = RegConfig::default();
    let batch = 8;

    let mut worst_cls: f64 = 0.0;
    let mut cls_checked = 0;
    while cls_checked < samples {
        let batch_samples: Vec<ClsSample> = (0..batch)
            .map(|_| {
                let z = rng.random_range(-6.0..6.0);
                let p = 1.0 / (1.0 + f64::exp(-z));
                ClsSample::new(p, rng.random_bool(0.3), rng.random_range(0.0..1.0))
            })
            .collect::<Result<_>>()?;
        let out = hcra_c_loss(&batch_samples, &cls_cfg)?;
        let grad = weighted_ce_gradient(&batch_samples, &out.weights, out.normalizer);
        for (i, s) in batch_samples.iter().enumerate() {
            let z = (s.p / (1.0 - s.p)).ln();
            let term = |z: f64| -> Result<f64> {
                let p = 1.0 / (1.0 + f64::exp(-z));
                let moved = ClsSample::new(p, s.target, s.iou)?;
                Ok(weighted_ce_loss(&[moved], &[out.weights[i]], out.normalizer))
            };
            let numeric = (term(z + FD_STEP)? - term(z - FD_STEP)?) / (2.0 * FD_STEP);
            worst_cls = worst_cls.max(relative_error(grad[i], numeric));
            cls_checked += 1;
        }
    }

    let mut worst_reg: f64 = 0.0;
    let mut reg_checked = 0;
    let mut skipped = 0;
    while reg_checked < samples {
        let batch_samples: Vec<RegSample> = (0..batch)
            .map(|_| {
                let target = random_box(&mut rng);
                let pred = perturbed_box(&mut rng, &target);
                RegSample::new(pred, target, rng.random_range(0.0..1.0))
            })
            .collect::<Result<_>>()?;
        let weights = hcra_r_weights(&batch_samples, &reg_cfg, &EmaState::default())?.weights;
        let grad = weighted_giou_gradient(&batch_samples, &weights, reg_cfg.task_weight);
        let n = batch_samples.len() as f64;
        for (i, s) in batch_samples.iter().enumerate() {
            if near_kink(&s.pred, &s.target) {
                skipped += 1;
                continue;
            }
            let base = s.pred.as_array();
            for c in 0..4 {
                let term = |delta: f64| -> Result<f64> {
                    let mut v = base;
                    v[c] += delta;
                    let moved = RegSample::new(BBox::new(v[0], v[1], v[2], v[3])?, s.target, s.score)?;
                    Ok(weighted_giou_loss(&[moved], &[weights[i] / n], reg_cfg.task_weight))
                };
                let numeric = (term(FD_STEP)? - term(-FD_STEP)?) / (2.0 * FD_STEP);
                worst_reg = worst_reg.max(relative_error(grad[i][c], numeric));
            }
            reg_checked += 1;
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    Ok(CheckOutcome {
        id: 1,
        name: "gradient correctness",
        required: true,
        passed: worst_cls < FD_TOL && worst_reg < FD_TOL && elapsed < 10.0,
        detail: format!(
            "cls max rel err {worst_cls:.2e} over {cls_checked}, reg max rel err {worst_reg:.2e} over {reg_checked} ({skipped} near kinks skipped), {elapsed:.2}s"
        ),
    })
}

/// Reference gradient-density weighted cross-entropy, written out directly.
fn plain_ghm_c(samples: &[ClsSample], m: usize) -> f64 {
    let n = samples.len();
    let norms: Vec<f64> = samples
        .iter()
        .map(|s| (s.p - if s.target { 1.0 } else { 0.0 }).abs())
        .collect();
    let mut counts = vec![0usize; m];
    let bin = |g: f64| {
        let mut k = (g * m as f64).floor() as usize;
        if k >= m {
            k = m - 1;
        }
        k
    };
    for &g in &norms {
        counts[bin(g)] += 1;
    }
    let mut total = 0.0;
    for (s, &g) in samples.iter().zip(&norms) {
        let density = counts[bin(g)] as f64 * m as f64;
        let beta = n as f64 / density;
        let p = s.p.clamp(1e-6, 1.0 - 1e-6);
        let ce = if s.target { -p.ln() } else { -(1.0 - p).ln() };
        total += beta * ce;
    }
    total / n as f64
}

/// With `ω ≡ 1` and the gate forced open, the classification loss reduces to
/// gradient-density weighted cross-entropy.
pub fn ghm_reduction(seed: u64, batches: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ClsConfig {
        use_omega: false,
        use_rci: false,
        ..ClsConfig::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..batches {
        let len = rng.random_range(1..300);
        let batch: Vec<ClsSample> = (0..len)
            .map(|_| {
                ClsSample::new(
                    rng.random_range(0.0..1.0),
                    rng.random_bool(0.2),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect::<Result<_>>()?;
        let ours = hcra_c_loss(&batch, &cfg)?.loss;
        let reference = plain_ghm_c(&batch, cfg.m_bins);
        worst = worst.max(relative_error(ours, reference));
    }
    Ok(CheckOutcome {
        id: 2,
        name: "GHM reduction",
        required: true,
        passed: worst < 1e-12,
        detail: format!("max rel err {worst:.2e} over {batches} batches"),
    })
}

fn grid_100() -> Vec<f64> {
    (0..100).map(|i| i as f64 / 99.0).collect()
}

/// Regression consistency ratio is at least 1 on the overshoot branch, at
/// most 1 on the other, and exactly 1 on the line `s - α = iou`.
pub fn rci_reg_region_law() -> CheckOutcome {
    let (alpha, ep) = (-0.1, 0.001);
    let grid = grid_100();
    let mut violations = 0;
    for &s in &grid {
        for &u in &grid {
            let v = rci_reg_value(s, u, alpha, ep, ResidualConvention::AsWritten);
            let overshoot = s - u + alpha >= 0.0;
            if (overshoot && v < 1.0) || (!overshoot && v > 1.0) {
                violations += 1;
            }
        }
    }
    let mut worst_line: f64 = 0.0;
    for &s in &grid {
        let u = s - alpha;
        if u <= 1.0 {
            let v = rci_reg_value(s, u, alpha, ep, ResidualConvention::AsWritten);
            worst_line = worst_line.max((v - 1.0).abs());
        }
    }
    CheckOutcome {
        id: 3,
        name: "RCI_reg region law",
        required: true,
        passed: violations == 0 && worst_line <= 1e-12,
        detail: format!("{violations} grid violations, max |v - 1| on line {worst_line:.2e}"),
    }
}

/// Gate values on the 100×100 grid. The `(0.5, 1)` band for `p > iou` holds
/// whenever `α >= 0`; with a negative `α` positives with
/// `iou < p <= iou - α` fall below 0.5, and those are counted separately.
pub fn gate_law(theta: f64, alpha: f64) -> Result<CheckOutcome> {
    let grid = grid_100();
    let mut zero_violations = 0;
    let mut band_violations = 0;
    let mut negative_violations = 0;
    for &p in &grid {
        for &u in &grid {
            let pos = rci_cls_gate(&ClsSample::new(p, true, u)?, theta, alpha);
            if p <= u {
                zero_violations += usize::from(pos != 0.0);
            } else if !(pos > 0.5 && pos < 1.0) {
                band_violations += 1;
            }
            let neg = rci_cls_gate(&ClsSample::new(p, false, u)?, theta, alpha);
            negative_violations += usize::from(neg != 1.0);
        }
    }
    Ok(CheckOutcome {
        id: 4,
        name: "gate law",
        required: true,
        passed: zero_violations + band_violations + negative_violations == 0,
        detail: format!(
            "theta={theta} alpha={alpha}: {zero_violations} nonzero below iou, {band_violations} outside (0.5,1) above iou, {negative_violations} negatives != 1"
        ),
    })
}

fn small_scene_config() -> SceneConfig {
    SceneConfig {
        width: 48.0,
        height: 48.0,
        levels: 2,
        base_stride: 8.0,
        anchor_scale: 4.0,
        gts: 3,
        min_size: 8.0,
        max_size: 32.0,
        max_gt_overlap: 0.5,
        ..SceneConfig::default()
    }
}

/// Brute-force ATSS positive set for one scene.
fn brute_force_atss(anchors: &AnchorSet, gts: &[GroundTruth], k: usize) -> Vec<Option<usize>> {
    let boxes = anchors.anchors();
    let dist = |a: &BBox, b: &BBox| {
        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    };
    let overlap = |a: &BBox, b: &BBox| {
        let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
        let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
        let inter = iw * ih;
        let union = a.width() * a.height() + b.width() * b.height() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    };
    let mut best: Vec<Option<(f64, usize)>> = vec![None; boxes.len()];
    for (g, gt) in gts.iter().enumerate() {
        let mut cand = Vec::new();
        for level in 0..anchors.num_levels() {
            let mut idx: Vec<usize> = anchors.level_range(level).collect();
            idx.sort_by(|&a, &b| {
                dist(&boxes[a], &gt.bbox)
                    .partial_cmp(&dist(&boxes[b], &gt.bbox))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            cand.extend(idx.into_iter().take(k));
        }
        let ious: Vec<f64> = cand.iter().map(|&i| overlap(&boxes[i], &gt.bbox)).collect();
        let n = ious.len() as f64;
        let mean = ious.iter().sum::<f64>() / n;
        let std = if ious.len() > 1 {
            (ious.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        for (&i, &v) in cand.iter().zip(&ious) {
            let (cx, cy) = boxes[i].center();
            let inside = cx > gt.bbox.x1 && cx < gt.bbox.x2 && cy > gt.bbox.y1 && cy < gt.bbox.y2;
            if v >= mean + std && inside && best[i].is_none_or(|(bv, _)| v > bv) {
                best[i] = Some((v, g));
            }
        }
    }
    best.into_iter().map(|b| b.map(|(_, g)| g)).collect()
}

/// ATSS against a brute-force recomputation; EATSS superset and the
/// per-ground-truth expansion bound.
pub fn assigner_oracle(scenes: u64) -> Result<CheckOutcome> {
    let scene_cfg = small_scene_config();
    let mut atss_mismatch = 0;
    let mut superset_fail = 0;
    let mut bound_fail = 0;
    let mut max_anchors = 0;
    for seed in 0..scenes {
        let scene = generate_scene(seed, &scene_cfg)?;
        max_anchors = max_anchors.max(scene.anchors.len());
        let cfg = AssignConfig::default();
        let ours = atss_assign(&scene.anchors, &scene.gts, &cfg)?;
        let reference = brute_force_atss(&scene.anchors, &scene.gts, cfg.k);
        let got: Vec<Option<usize>> = ours.assignment.labels().iter().map(|m| m.map(|m| m.gt)).collect();
        atss_mismatch += usize::from(got != reference);

        let preds = decode(&scene.anchors, &scene.params)?;
        for l in [2, 3, 4] {
            let e = eatss_assign(&scene.anchors, &scene.gts, &AssignConfig { l, ..cfg }, &preds)?;
            let keeps_atss = ours
                .assignment
                .positives()
                .all(|(a, m)| e.assignment.get(a) == Some(m));
            superset_fail += usize::from(!keeps_atss);
            for g in 0..scene.gts.len() {
                let added = e.assignment.positives_of(g).len() - ours.assignment.positives_of(g).len();
                bound_fail += usize::from(added > l);
            }
        }
    }
    Ok(CheckOutcome {
        id: 5,
        name: "assigner oracle",
        required: true,
        passed: atss_mismatch == 0 && superset_fail == 0 && bound_fail == 0 && max_anchors <= 100,
        detail: format!(
            "{scenes} scenes (<= {max_anchors} anchors): {atss_mismatch} ATSS mismatches, {superset_fail} superset failures, {bound_fail} expansion-bound failures"
        ),
    })
}

/// Emitted curve values against the closed forms.
pub fn curve_reproduction() -> Result<CheckOutcome> {
    let mut worst: f64 = 0.0;
    let mut points = 0;
    let omega = CurveSpec {
        params: vec![0.6, 0.7, 0.8, 0.9],
        ..CurveSpec::new(CurveKind::OmegaNeg, 100)
    };
    for p in evaluate_curve(&omega)? {
        worst = worst.max((p.y - (1.0 - p.x * (p.x - p.param).powi(2))).abs());
        points += 1;
    }
    let t = CurveSpec {
        params: vec![0.8, 1.0, 1.2, 1.4],
        ..CurveSpec::new(CurveKind::TGamma, 100)
    };
    for p in evaluate_curve(&t)? {
        worst = worst.max((p.y - (-(p.x * p.x) / p.param).exp()).abs());
        points += 1;
    }
    Ok(CheckOutcome {
        id: 6,
        name: "curve reproduction",
        required: true,
        passed: worst <= 1e-12,
        detail: format!("max abs err {worst:.2e} over {points} points"),
    })
}

/// Default-config training run on the configured seed.
pub fn desk_run(cfg: &ExperimentConfig) -> Result<CheckOutcome> {
    let started = Instant::now();
    let scene = generate_scene(cfg.seed, &cfg.scene)?;
    let out = train(&scene, &cfg.loss_config(), &cfg.assign, &cfg.optim, &cfg.eval)?;
    let elapsed = started.elapsed().as_secs_f64();
    let r = &out.report;
    Ok(CheckOutcome {
        id: 7,
        name: "end-to-end desk run",
        required: true,
        passed: r.final_mean_iou >= 0.8 && r.ap >= 0.9 && elapsed < 60.0,
        detail: format!(
            "seed {} {} steps: mean IoU {:.4}, AP@0.5 {:.4}, {elapsed:.2}s",
            cfg.seed,
            r.steps.len(),
            r.final_mean_iou,
            r.ap
        ),
    })
}

/// Constant-input EMA updates contract geometrically.
pub fn ema_closed_form() -> Result<CheckOutcome> {
    let m = 0.1;
    let mut worst: f64 = 0.0;
    for &(r0, c) in &[(1.0, 2.0), (1.0, 0.5), (3.0, 1.0), (0.2, 0.2)] {
        let mut state = EmaState::new(r0)?;
        for t in 1..=200 {
            state = state.update(c, m)?;
            let expected = (1.0f64 - m).powi(t) * (r0 - c).abs();
            worst = worst.max(((state.r() - c).abs() - expected).abs());
        }
    }
    Ok(CheckOutcome {
        id: 9,
        name: "EMA closed form",
        required: true,
        passed: worst <= 1e-12,
        detail: format!("max deviation {worst:.2e}"),
    })
}

/// Every runtime check, in criterion order. The gate law is reported both at
/// `α = 0.1`, where it is a theorem, and at the configured `α`.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    let mut gate_default = gate_law(cfg.cls.theta, cfg.cls.alpha)?;
    gate_default.name = "gate law (configured alpha)";
    gate_default.required = false;
    Ok(vec![
        gradient_check(cfg.seed, 200)?,
        ghm_reduction(cfg.seed, 50)?,
        rci_reg_region_law(),
        gate_law(5.0, 0.1)?,
        gate_default,
        assigner_oracle(50)?,
        curve_reproduction()?,
        desk_run(cfg)?,
        loss_comparison(cfg)?,
        ema_closed_form()?,
    ])
}

/// Score/IoU correlation on positives after the configured loss and after the
/// focal + GIoU baseline, on the same scene. Reported only.
pub fn loss_comparison(cfg: &ExperimentConfig) -> Result<CheckOutcome> {
    let scene = generate_scene(cfg.seed, &cfg.scene)?;
    let mut parts = Vec::new();
    for kind in [LossKind::Hcral, LossKind::FocalGiou] {
        let loss = LossConfig {
            kind,
            ..cfg.loss_config()
        };
        let out = train(&scene, &loss, &cfg.assign, &cfg.optim, &cfg.eval)?;
        let r = &out.report;
        let pearson = r
            .consistency
            .as_ref()
            .and_then(|c| c.pearson)
            .map_or_else(|| "undefined".to_string(), |p| format!("{p:.4}"));
        parts.push(format!(
            "{} pearson {pearson}, mean IoU {:.4}, AP@0.5 {:.4}",
            kind.name(),
            r.final_mean_iou,
            r.ap
        ));
    }
    Ok(CheckOutcome {
        id: 8,
        name: "comparative sanity",
        required: false,
        passed: true,
        detail: parts.join("; "),
    })
}

/// True when every required check passed.
pub fn all_required_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| o.passed || !o.required)
}
