//! HCRA-R: GIoU loss over positive samples, each scaled by a detached weight
//! `r·CF_reg`.
//!
//! * `CF_reg = t · exp(R) · iou` with `t = exp(-iou²/γ)` (or a flat constant)
//!   and `R` the DIoU center-offset penalty.
//! * `RCI_reg` is a ratio of `(s-α)² + iou² + ep` and `2(s-α)·iou + ep`,
//!   oriented so it is `>= 1` on the overshooting side of the consistency line
//!   and `<= 1` on the other.
//! * `r` is `RCI_reg` divided by its exponential running mean.

use serde::{Deserialize, Serialize};

use crate::cls_loss::rci;
use crate::error::{Error, Result};
use crate::geometry::{giou_gradient, giou_loss, BBox, EnclosureMeasure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegSample {
    pub pred: BBox,
    pub target: BBox,
    /// Classification score of the matched class.
    pub score: f64,
}

impl RegSample {
    pub fn new(pred: BBox, target: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::OutOfRange {
                name: "score",
                value: score,
                expected: "[0, 1]",
            });
        }
        Ok(Self {
            pred,
            target,
            score,
        })
    }
}

/// Form of the center-offset exponent `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterOffset {
    /// `ρ²/c²`, the usual DIoU penalty in `[0, 1]`.
    Squared,
    /// `ρ/c²`.
    Linear,
}

/// Which residual decides the branch of `RCI_reg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualConvention {
    /// Branch on `s - iou + α >= 0`, ratio built from `s - α`.
    AsWritten,
    /// Branch on `(s - α) - iou >= 0`, so the branch switches on the same line
    /// where the ratio equals 1.
    Unified,
}

/// How the running mean enters the per-sample weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmaMode {
    /// `rᵢ = RCI_reg,ᵢ / r_running`.
    PerSample,
    /// Every sample uses `r_running` itself.
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegConfig {
    /// Consistency offset `α`.
    pub alpha: f64,
    /// Ratio stabilizer `ep`.
    pub ep: f64,
    /// Suppression shape `γ`; `None` replaces `t` by `flat_weight`.
    #[serde(with = "gamma_or_flat")]
    pub gamma: Option<f64>,
    pub flat_weight: f64,
    pub ema_momentum: f64,
    pub use_rci: bool,
    pub center_offset: CenterOffset,
    pub residual_convention: ResidualConvention,
    pub ema_mode: EmaMode,
    /// Multiplier on the normalized loss (2.5 in the RetinaNet setting).
    pub task_weight: f64,
}

/// `reg.gamma` is either a number or the string `"flat"`.
mod gamma_or_flat {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(rename_all = "snake_case")]
    enum Flat {
        Flat,
    }

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Flat(Flat),
    }

    pub fn serialize<S: Serializer>(gamma: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match gamma {
            Some(g) => Repr::Value(*g),
            None => Repr::Flat(Flat::Flat),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d) {
            Ok(Repr::Value(g)) => Ok(Some(g)),
            Ok(Repr::Flat(_)) => Ok(None),
            Err(_) => Err(serde::de::Error::custom(
                "expected a positive number or \"flat\"",
            )),
        }
    }
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            alpha: -0.1,
            ep: 0.001,
            gamma: Some(1.2),
            flat_weight: 1.5,
            ema_momentum: 0.1,
            use_rci: true,
            center_offset: CenterOffset::Squared,
            residual_convention: ResidualConvention::AsWritten,
            ema_mode: EmaMode::PerSample,
            task_weight: 1.0,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name, value: f64, ok: bool, expected| {
            if ok {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    name,
                    value,
                    expected,
                })
            }
        };
        range("alpha", self.alpha, self.alpha.is_finite(), "finite")?;
        range("reg.ep", self.ep, self.ep >= 0.0 && self.ep.is_finite(), ">= 0")?;
        if let Some(g) = self.gamma {
            range("reg.gamma", g, g > 0.0 && g.is_finite(), "> 0")?;
        }
        range(
            "reg.flat_weight",
            self.flat_weight,
            self.flat_weight > 0.0 && self.flat_weight.is_finite(),
            "> 0",
        )?;
        range(
            "reg.ema_momentum",
            self.ema_momentum,
            self.ema_momentum > 0.0 && self.ema_momentum <= 1.0,
            "(0, 1]",
        )?;
        range(
            "reg.task_weight",
            self.task_weight,
            self.task_weight > 0.0 && self.task_weight.is_finite(),
            "> 0",
        )
    }
}

/// Running mean `r` of the batch-mean `RCI_reg`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaState {
    r: f64,
    initial: f64,
    step: u64,
}

impl Default for EmaState {
    fn default() -> Self {
        Self {
            r: 1.0,
            initial: 1.0,
            step: 0,
        }
    }
}

impl EmaState {
    pub fn new(initial: f64) -> Result<Self> {
        if !(initial > 0.0 && initial.is_finite()) {
            return Err(Error::NonPositiveEmaInput(initial));
        }
        Ok(Self {
            r: initial,
            initial,
            step: 0,
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// `r ← (1 - m)·r + m·value`.
    pub fn update(&self, value: f64, momentum: f64) -> Result<Self> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveEmaInput(value));
        }
        if !(momentum > 0.0 && momentum <= 1.0) {
            return Err(Error::OutOfRange {
                name: "ema momentum",
                value: momentum,
                expected: "(0, 1]",
            });
        }
        Ok(Self {
            r: (1.0 - momentum) * self.r + momentum * value,
            initial: self.initial,
            step: self.step + 1,
        })
    }
}

pub fn ema_update(state: &EmaState, batch_mean_rci_reg: f64, momentum: f64) -> Result<EmaState> {
    state.update(batch_mean_rci_reg, momentum)
}

/// High-IoU suppression `t = exp(-iou²/γ)`.
pub fn suppression_t(iou: f64, gamma: f64) -> f64 {
    (-iou * iou / gamma).exp()
}

pub fn cf_reg(sample: &RegSample, cfg: &RegConfig) -> f64 {
    let m = EnclosureMeasure::between(&sample.pred, &sample.target);
    let t = match cfg.gamma {
        Some(gamma) => suppression_t(m.iou, gamma),
        None => cfg.flat_weight,
    };
    let offset = match cfg.center_offset {
        CenterOffset::Squared => m.diou_penalty(),
        CenterOffset::Linear if m.enclosing_diag_sq > 0.0 => {
            m.center_distance_sq.sqrt() / m.enclosing_diag_sq
        }
        CenterOffset::Linear => 0.0,
    };
    t * offset.exp() * m.iou
}

/// `RCI_reg` for a score/IoU pair.
pub fn rci_reg_value(
    score: f64,
    iou: f64,
    alpha: f64,
    ep: f64,
    convention: ResidualConvention,
) -> f64 {
    let a = score - alpha;
    let spread = a * a + iou * iou + ep;
    let product = 2.0 * a * iou + ep;
    let overshoot = match convention {
        ResidualConvention::AsWritten => rci(score, iou, alpha) >= 0.0,
        ResidualConvention::Unified => a - iou >= 0.0,
    };
    if spread == product {
        // covers the 0/0 limit at ep = 0, a = iou = 0
        return 1.0;
    }
    if overshoot {
        spread / product
    } else {
        product / spread
    }
}

pub fn rci_reg(sample: &RegSample, cfg: &RegConfig) -> f64 {
    let iou = EnclosureMeasure::between(&sample.pred, &sample.target).iou;
    rci_reg_value(
        sample.score,
        iou,
        cfg.alpha,
        cfg.ep,
        cfg.residual_convention,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegWeights {
    /// Detached per-sample weights `rᵢ·CF_reg,ᵢ`.
    pub weights: Vec<f64>,
    /// Raw `RCI_reg` per sample (1 when the residual term is disabled).
    pub coefficients: Vec<f64>,
    /// Running mean after folding in this batch.
    pub state: EmaState,
}

/// Computes detached weights and advances the running mean with the batch
/// mean of `RCI_reg`. Samples are normalized by the updated mean.
pub fn hcra_r_weights(
    samples: &[RegSample],
    cfg: &RegConfig,
    state: &EmaState,
) -> Result<RegWeights> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyBatch("regress"));
    }
    let cf: Vec<f64> = samples.iter().map(|s| cf_reg(s, cfg)).collect();
    if !cfg.use_rci {
        return Ok(RegWeights {
            weights: cf,
            coefficients: vec![1.0; samples.len()],
            state: *state,
        });
    }

    let coefficients: Vec<f64> = samples.iter().map(|s| rci_reg(s, cfg)).collect();
    if let Some(&bad) = coefficients.iter().find(|c| !c.is_finite()) {
        return Err(Error::OutOfRange {
            name: "rci_reg",
            value: bad,
            expected: "finite (increase reg.ep)",
        });
    }
    let mean = coefficients.iter().sum::<f64>() / coefficients.len() as f64;
    let state = state.update(mean, cfg.ema_momentum)?;
    let weights = match cfg.ema_mode {
        EmaMode::PerSample => coefficients
            .iter()
            .zip(&cf)
            .map(|(c, f)| c / state.r() * f)
            .collect(),
        EmaMode::Shared => cf.iter().map(|f| state.r() * f).collect(),
    };
    Ok(RegWeights {
        weights,
        coefficients,
        state,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegLossOutput {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub state: EmaState,
}

pub fn hcra_r_loss(
    samples: &[RegSample],
    cfg: &RegConfig,
    state: &EmaState,
) -> Result<RegLossOutput> {
    let w = hcra_r_weights(samples, cfg, state)?;
    let loss = weighted_giou_loss(samples, &w.weights, cfg.task_weight);
    Ok(RegLossOutput {
        loss,
        weights: w.weights,
        state: w.state,
    })
}

/// Per-sample gradients w.r.t. `pred` corners, weights frozen.
pub fn hcra_r_gradient(
    samples: &[RegSample],
    cfg: &RegConfig,
    state: &EmaState,
) -> Result<Vec<[f64; 4]>> {
    let w = hcra_r_weights(samples, cfg, state)?;
    Ok(weighted_giou_gradient(samples, &w.weights, cfg.task_weight))
}

/// `task_weight · Σ wᵢ·(1 - giouᵢ) / N`.
pub fn weighted_giou_loss(samples: &[RegSample], weights: &[f64], task_weight: f64) -> f64 {
    let n = samples.len().max(1) as f64;
    task_weight
        * samples
            .iter()
            .zip(weights)
            .map(|(s, w)| w * giou_loss(&s.pred, &s.target))
            .sum::<f64>()
        / n
}

pub fn weighted_giou_gradient(
    samples: &[RegSample],
    weights: &[f64],
    task_weight: f64,
) -> Vec<[f64; 4]> {
    let scale = task_weight / samples.len().max(1) as f64;
    samples
        .iter()
        .zip(weights)
        .map(|(s, w)| giou_gradient(&s.pred, &s.target).map(|g| scale * w * g))
        .collect()
}
