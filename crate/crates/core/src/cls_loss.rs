//! HCRA-C: gradient-density weighted binary cross-entropy, modulated per
//! sample by the conditioning factor `ω·β` and by the score/IoU residual gate.
//!
//! The per-sample weight `w = ω·β·gate` is computed from the current batch and
//! then treated as a constant: gradients flow through the cross-entropy term
//! only.
//!
//! The focal-loss baseline used for comparison runs lives in [`focal`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghm::{gradient_norm, GradientDensityBins};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before `ln`.
pub const PROB_CLAMP: f64 = 1e-6;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One binary (anchor, class) classification sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClsSample {
    /// Predicted probability (post-sigmoid score).
    pub p: f64,
    /// Binary label `p*`.
    pub target: bool,
    /// IoU of the sample's predicted box against its matched (or best) ground truth.
    pub iou: f64,
}

impl ClsSample {
    pub fn new(p: f64, target: bool, iou: f64) -> Result<Self> {
        check_unit("p", p)?;
        check_unit("iou", iou)?;
        Ok(Self { p, target, iou })
    }
}

fn check_unit(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            expected: "[0, 1]",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Divide by the number of samples `N`.
    TotalCount,
    /// Divide by the number of positives (at least 1).
    PositiveCount,
}

/// Which comparison opens the positive branch of the gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateCondition {
    /// `p > iou`, with no offset.
    ScoreAboveIou,
    /// `p - iou + α > 0`.
    PositiveResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClsConfig {
    /// Gate sharpness `θ`.
    pub theta: f64,
    /// Number of gradient-density bins `M`.
    pub m_bins: usize,
    /// Decay center `μ` of the negative-sample weight.
    pub mu: f64,
    /// Consistency offset `α`.
    pub alpha: f64,
    pub normalizer: Normalizer,
    pub gate_condition: GateCondition,
    /// When false, `ω ≡ 1`.
    pub use_omega: bool,
    /// When false, the gate is `≡ 1`.
    pub use_rci: bool,
}

impl Default for ClsConfig {
    fn default() -> Self {
        Self {
            theta: 5.0,
            m_bins: 20,
            mu: 0.7,
            alpha: -0.1,
            normalizer: Normalizer::TotalCount,
            gate_condition: GateCondition::ScoreAboveIou,
            use_omega: true,
            use_rci: true,
        }
    }
}

impl ClsConfig {
    /// Plain gradient-density weighted cross-entropy (no `ω`, no gate).
    pub fn ghm_c() -> Self {
        Self {
            use_omega: false,
            use_rci: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::OutOfRange {
                name: "cls.theta",
                value: self.theta,
                expected: "> 0",
            });
        }
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::OutOfRange {
                name: "cls.mu",
                value: self.mu,
                expected: "[0, 1]",
            });
        }
        if self.m_bins == 0 {
            return Err(Error::OutOfRange {
                name: "cls.m_bins",
                value: 0.0,
                expected: ">= 1",
            });
        }
        if !self.alpha.is_finite() {
            return Err(Error::OutOfRange {
                name: "alpha",
                value: self.alpha,
                expected: "finite",
            });
        }
        Ok(())
    }
}

/// Residual of classification score and IoU, `s - iou + α`.
pub fn rci(s: f64, iou: f64, alpha: f64) -> f64 {
    s - iou + alpha
}

/// Adaptive weight `ω`: the IoU for positives, `1 - iou·(iou - μ)²` for negatives.
pub fn omega(sample: &ClsSample, mu: f64) -> f64 {
    if sample.target {
        sample.iou
    } else {
        1.0 - sample.iou * (sample.iou - mu).powi(2)
    }
}

/// Residual gate with the literal `p > iou` branch condition.
pub fn rci_cls_gate(sample: &ClsSample, theta: f64, alpha: f64) -> f64 {
    rci_cls_gate_with(sample, theta, alpha, GateCondition::ScoreAboveIou)
}

/// Negatives pass with 1; positives are zeroed unless the branch condition
/// holds, in which case they get `σ(θ·RCI)`.
pub fn rci_cls_gate_with(
    sample: &ClsSample,
    theta: f64,
    alpha: f64,
    condition: GateCondition,
) -> f64 {
    if !sample.target {
        return 1.0;
    }
    let residual = rci(sample.p, sample.iou, alpha);
    let open = match condition {
        GateCondition::ScoreAboveIou => sample.p > sample.iou,
        GateCondition::PositiveResidual => residual > 0.0,
    };
    if open {
        sigmoid(theta * residual)
    } else {
        0.0
    }
}

/// Binary cross-entropy with probability clamping.
pub fn binary_cross_entropy(p: f64, target: bool) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if target {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub fn normalizer_value(samples: &[ClsSample], normalizer: Normalizer) -> f64 {
    match normalizer {
        Normalizer::TotalCount => samples.len() as f64,
        Normalizer::PositiveCount => samples.iter().filter(|s| s.target).count().max(1) as f64,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClsLossOutput {
    pub loss: f64,
    /// Detached per-sample weights `ω·β·gate`.
    pub weights: Vec<f64>,
    /// Denominator applied to the weighted sum.
    pub normalizer: f64,
}

/// Per-sample `ω·β·gate` for a batch. `β` is computed over the whole batch.
pub fn hcra_c_weights(samples: &[ClsSample], cfg: &ClsConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyBatch("classify"));
    }
    let norms: Vec<f64> = samples
        .iter()
        .map(|s| gradient_norm(s.p, s.target))
        .collect();
    let bins = GradientDensityBins::build(&norms, cfg.m_bins)?;

    samples
        .iter()
        .zip(&norms)
        .map(|(s, &g)| {
            let beta = bins.beta(g)?;
            let w = if cfg.use_omega { omega(s, cfg.mu) } else { 1.0 };
            let gate = if cfg.use_rci {
                rci_cls_gate_with(s, cfg.theta, cfg.alpha, cfg.gate_condition)
            } else {
                1.0
            };
            Ok(w * beta * gate)
        })
        .collect()
}

pub fn hcra_c_loss(samples: &[ClsSample], cfg: &ClsConfig) -> Result<ClsLossOutput> {
    let weights = hcra_c_weights(samples, cfg)?;
    let normalizer = normalizer_value(samples, cfg.normalizer);
    let loss = weighted_ce_loss(samples, &weights, normalizer);
    Ok(ClsLossOutput {
        loss,
        weights,
        normalizer,
    })
}

/// d(loss)/d(logit) per sample with the weights held fixed.
pub fn hcra_c_gradient(samples: &[ClsSample], cfg: &ClsConfig) -> Result<Vec<f64>> {
    let out = hcra_c_loss(samples, cfg)?;
    Ok(weighted_ce_gradient(samples, &out.weights, out.normalizer))
}

/// `Σ wᵢ·CE(pᵢ, pᵢ*) / normalizer` for given (constant) weights.
pub fn weighted_ce_loss(samples: &[ClsSample], weights: &[f64], normalizer: f64) -> f64 {
    samples
        .iter()
        .zip(weights)
        .map(|(s, w)| w * binary_cross_entropy(s.p, s.target))
        .sum::<f64>()
        / normalizer
}

/// `wᵢ·(pᵢ - pᵢ*) / normalizer`: the logit gradient of [`weighted_ce_loss`]
/// away from the clamping region.
pub fn weighted_ce_gradient(samples: &[ClsSample], weights: &[f64], normalizer: f64) -> Vec<f64> {
    samples
        .iter()
        .zip(weights)
        .map(|(s, w)| {
            let t = if s.target { 1.0 } else { 0.0 };
            w * (s.p - t) / normalizer
        })
        .collect()
}

/// Sigmoid focal loss, normalized by the number of positives.
pub mod focal {
    use super::{ClsSample, PROB_CLAMP};
    use crate::error::{Error, Result};

    #[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
    #[serde(default, deny_unknown_fields)]
    pub struct FocalConfig {
        pub alpha: f64,
        pub gamma: f64,
    }

    impl Default for FocalConfig {
        fn default() -> Self {
            Self {
                alpha: 0.25,
                gamma: 2.0,
            }
        }
    }

    fn positives(samples: &[ClsSample]) -> f64 {
        samples.iter().filter(|s| s.target).count().max(1) as f64
    }

    pub fn focal_loss(samples: &[ClsSample], cfg: &FocalConfig) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch("classify"));
        }
        let total: f64 = samples
            .iter()
            .map(|s| {
                let p = s.p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                if s.target {
                    -cfg.alpha * (1.0 - p).powf(cfg.gamma) * p.ln()
                } else {
                    -(1.0 - cfg.alpha) * p.powf(cfg.gamma) * (1.0 - p).ln()
                }
            })
            .sum();
        Ok(total / positives(samples))
    }

    /// d(focal_loss)/d(logit) per sample.
    pub fn focal_gradient(samples: &[ClsSample], cfg: &FocalConfig) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch("classify"));
        }
        let norm = positives(samples);
        let g = cfg.gamma;
        Ok(samples
            .iter()
            .map(|s| {
                let p = s.p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                let d = if s.target {
                    cfg.alpha * (1.0 - p).powf(g) * (g * p * p.ln() - (1.0 - p))
                } else {
                    (1.0 - cfg.alpha) * p.powf(g) * (p - g * (1.0 - p) * (1.0 - p).ln())
                };
                d / norm
            })
            .collect())
    }
}
