//! Text outputs: per-step tables, summaries and assignment dumps.

use std::fmt::Write as _;

use crate::assign::{AnchorSet, AssignOutput, GroundTruth};
use crate::geometry::{center_distance, iou};
use crate::harness::TrainReport;

/// Formats with 9 significant digits, choosing fixed or exponent notation
/// like C's `%.9g`.
pub fn fmt_sig9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One row per optimization step.
pub fn report_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,cls_loss,reg_loss,total,mean_iou\n");
    for r in &report.steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            fmt_sig9(r.cls_loss),
            fmt_sig9(r.reg_loss),
            fmt_sig9(r.total),
            fmt_sig9(r.mean_iou)
        );
    }
    out
}

/// Final metrics as `key = value` lines. Wall-clock time is left out so that
/// the file is byte-stable across runs.
pub fn summary_text(report: &TrainReport, loss: &str, seed: u64) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("loss", loss.to_string());
    kv("seed", seed.to_string());
    kv("steps", report.steps.len().to_string());
    kv("num_positive", report.num_positive.to_string());
    kv("final_mean_iou", fmt_sig9(report.final_mean_iou));
    kv("final_cls_loss", fmt_sig9(report.final_cls_loss));
    kv("final_reg_loss", fmt_sig9(report.final_reg_loss));
    kv("ap50", fmt_sig9(report.ap));
    let (pearson, r1, r2) = match &report.consistency {
        Some(c) => (
            c.pearson.map_or_else(|| "nan".into(), fmt_sig9),
            fmt_sig9(c.region1),
            fmt_sig9(c.region2),
        ),
        None => ("nan".into(), "nan".into(), "nan".into()),
    };
    kv("pearson", pearson);
    kv("region1", r1);
    kv("region2", r2);
    kv("ema_r", fmt_sig9(report.ema_r));
    out
}

/// Per-anchor diagnostics for an ATSS run and an EATSS run on the same scene.
/// Ground-truth columns are empty for negatives; `iou` and `distance` refer to
/// the anchor's highest-IoU ground truth.
pub fn assignment_csv(
    anchors: &AnchorSet,
    gts: &[GroundTruth],
    atss: &AssignOutput,
    eatss: &AssignOutput,
) -> String {
    let mut out = String::from("anchor,level,cx,cy,atss_gt,eatss_gt,expanded,best_gt,iou,distance\n");
    let label = |o: &AssignOutput, a: usize| {
        o.assignment
            .get(a)
            .map_or_else(String::new, |m| m.gt.to_string())
    };
    for (a, anchor) in anchors.anchors().iter().enumerate() {
        let (cx, cy) = anchor.center();
        let best = gts
            .iter()
            .enumerate()
            .map(|(g, gt)| (g, iou(anchor, &gt.bbox)))
            .fold(None, |acc: Option<(usize, f64)>, (g, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((g, v)),
            });
        let expanded = eatss.per_gt.iter().any(|d| d.expanded.contains(&a));
        let (best_gt, best_iou, dist) = match best {
            Some((g, v)) => (
                g.to_string(),
                fmt_sig9(v),
                fmt_sig9(center_distance(anchor, &gts[g].bbox)),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{a},{},{},{},{},{},{},{best_gt},{best_iou},{dist}",
            anchors.level_of(a),
            fmt_sig9(cx),
            fmt_sig9(cy),
            label(atss, a),
            label(eatss, a),
            u8::from(expanded),
        );
    }
    out
}

/// True when every ATSS positive stays positive, for the same ground truth,
/// under EATSS.
pub fn is_superset(atss: &AssignOutput, eatss: &AssignOutput) -> bool {
    atss.assignment
        .positives()
        .all(|(a, m)| eatss.assignment.get(a) == Some(m))
}

/// Counts, `Dis_f` per ground truth and the superset check.
pub fn assignment_summary(atss: &AssignOutput, eatss: &AssignOutput, l: usize) -> String {
    let mut out = String::new();
    let atss_n = atss.assignment.num_positive();
    let eatss_n = eatss.assignment.num_positive();
    let _ = writeln!(out, "atss_positive = {atss_n}");
    let _ = writeln!(out, "eatss_positive = {eatss_n}");
    let _ = writeln!(out, "l = {l}");
    let _ = writeln!(out, "superset = {}", is_superset(atss, eatss));
    for (g, d) in eatss.per_gt.iter().enumerate() {
        let dis_f = d.dis_f.map_or_else(|| "nan".into(), fmt_sig9);
        let _ = writeln!(out, "gt.{g}.dis_f = {dis_f}");
        let _ = writeln!(out, "gt.{g}.atss = {}", atss.assignment.positives_of(g).len());
        let _ = writeln!(out, "gt.{g}.added = {}", d.expanded.len());
    }
    out
}
