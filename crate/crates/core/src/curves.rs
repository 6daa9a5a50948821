//! Sampled analytic weight curves for plotting.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::cls_loss::{omega, rci_cls_gate, ClsSample};
use crate::error::{Error, Result};
use crate::reg_loss::{rci_reg_value, suppression_t, ResidualConvention};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveKind {
    /// Negative-sample weight `ω` against IoU, one curve per `μ`.
    OmegaNeg,
    /// High-IoU suppression `t` against IoU, one curve per `γ`.
    TGamma,
    /// Positive-sample gate against score at a fixed IoU, one curve per `θ`.
    RciGate,
    /// Regression consistency ratio against score at a fixed IoU, one curve per `ep`.
    RciReg,
}

impl CurveKind {
    pub fn name(&self) -> &'static str {
        match self {
            CurveKind::OmegaNeg => "omega_neg",
            CurveKind::TGamma => "t_gamma",
            CurveKind::RciGate => "rci_gate",
            CurveKind::RciReg => "rci_reg",
        }
    }

    /// Parameter values plotted when none are given.
    pub fn default_params(&self) -> Vec<f64> {
        match self {
            CurveKind::OmegaNeg => vec![0.6, 0.7, 0.8, 0.9],
            CurveKind::TGamma => vec![0.8, 1.0, 1.2, 1.4],
            CurveKind::RciGate => vec![4.0, 5.0, 6.0],
            CurveKind::RciReg => vec![0.001, 0.01, 0.1],
        }
    }
}

impl FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omega_neg" => Ok(CurveKind::OmegaNeg),
            "t_gamma" => Ok(CurveKind::TGamma),
            "rci_gate" => Ok(CurveKind::RciGate),
            "rci_reg" => Ok(CurveKind::RciReg),
            other => Err(Error::Config(format!(
                "unknown curve `{other}` (expected omega_neg, t_gamma, rci_gate or rci_reg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveSpec {
    pub kind: CurveKind,
    pub params: Vec<f64>,
    pub xs: Vec<f64>,
    /// IoU held fixed by the score-indexed curves.
    pub fixed_iou: f64,
    /// `α` used by the score-indexed curves.
    pub alpha: f64,
}

impl CurveSpec {
    /// Default parameters over `n + 1` evenly spaced points of `[0, 1]`.
    pub fn new(kind: CurveKind, n: usize) -> Self {
        Self {
            kind,
            params: kind.default_params(),
            xs: unit_grid(n),
            fixed_iou: 0.5,
            alpha: -0.1,
        }
    }
}

/// `n + 1` evenly spaced points covering [0, 1]; empty when `n` is zero.
pub fn unit_grid(n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub param: f64,
    pub x: f64,
    pub y: f64,
}

pub fn evaluate_curve(spec: &CurveSpec) -> Result<Vec<CurvePoint>> {
    if spec.params.is_empty() || spec.xs.is_empty() {
        return Err(Error::Config("curve grid is empty".into()));
    }
    for &x in &spec.xs {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfRange {
                name: "curve x",
                value: x,
                expected: "[0, 1]",
            });
        }
    }
    let mut points = Vec::with_capacity(spec.params.len() * spec.xs.len());
    for &param in &spec.params {
        if !param.is_finite() {
            return Err(Error::OutOfRange {
                name: "curve parameter",
                value: param,
                expected: "finite",
            });
        }
        for &x in &spec.xs {
            let y = match spec.kind {
                CurveKind::OmegaNeg => omega(&ClsSample::new(0.5, false, x)?, param),
                CurveKind::TGamma => {
                    if param <= 0.0 {
                        return Err(Error::OutOfRange {
                            name: "gamma",
                            value: param,
                            expected: "> 0",
                        });
                    }
                    suppression_t(x, param)
                }
                CurveKind::RciGate => {
                    rci_cls_gate(&ClsSample::new(x, true, spec.fixed_iou)?, param, spec.alpha)
                }
                CurveKind::RciReg => rci_reg_value(
                    x,
                    spec.fixed_iou,
                    spec.alpha,
                    param,
                    ResidualConvention::AsWritten,
                ),
            };
            points.push(CurvePoint { param, x, y });
        }
    }
    Ok(points)
}

/// `param,x,y` rows with a header. Values use the shortest text that parses
/// back to the same `f64`, so plotted data equals the analytic values exactly.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("param,x,y\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.param, p.x, p.y);
    }
    out
}
