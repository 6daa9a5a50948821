use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::detector::DetectorParams;
use crate::assign::{AnchorSet, GroundTruth};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: f64,
    pub height: f64,
    pub levels: usize,
    /// Stride of the finest level; each further level doubles it.
    pub base_stride: f64,
    /// Anchor side as a multiple of its level stride.
    pub anchor_scale: f64,
    pub gts: usize,
    pub classes: usize,
    /// Geometric-mean side length range of sampled ground truths.
    pub min_size: f64,
    pub max_size: f64,
    /// Largest width/height ratio of a sampled ground truth.
    pub max_aspect: f64,
    /// Largest IoU allowed between two ground truths.
    pub max_gt_overlap: f64,
    /// Standard deviation of the initial delta and logit noise.
    pub init_jitter: f64,
    /// Initial foreground probability of every logit.
    pub prior_prob: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 96.0,
            height: 96.0,
            levels: 2,
            base_stride: 8.0,
            anchor_scale: 4.0,
            gts: 3,
            classes: 2,
            min_size: 16.0,
            max_size: 64.0,
            max_aspect: 2.0,
            max_gt_overlap: 0.3,
            init_jitter: 0.1,
            prior_prob: 0.01,
        }
    }
}

impl SceneConfig {
    pub fn strides(&self) -> Vec<f64> {
        (0..self.levels)
            .map(|l| self.base_stride * (1u64 << l) as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    name,
                    value: v,
                    expected: "> 0",
                })
            }
        };
        positive("scene.width", self.width)?;
        positive("scene.height", self.height)?;
        positive("scene.base_stride", self.base_stride)?;
        positive("scene.anchor_scale", self.anchor_scale)?;
        positive("scene.min_size", self.min_size)?;
        if self.levels == 0 {
            return Err(Error::OutOfRange {
                name: "scene.levels",
                value: 0.0,
                expected: ">= 1",
            });
        }
        if self.classes == 0 {
            return Err(Error::OutOfRange {
                name: "scene.classes",
                value: 0.0,
                expected: ">= 1",
            });
        }
        if self.max_size < self.min_size {
            return Err(Error::OutOfRange {
                name: "scene.max_size",
                value: self.max_size,
                expected: ">= scene.min_size",
            });
        }
        if !(self.max_aspect >= 1.0) {
            return Err(Error::OutOfRange {
                name: "scene.max_aspect",
                value: self.max_aspect,
                expected: ">= 1",
            });
        }
        if !(self.prior_prob > 0.0 && self.prior_prob < 1.0) {
            return Err(Error::OutOfRange {
                name: "scene.prior_prob",
                value: self.prior_prob,
                expected: "(0, 1)",
            });
        }
        if !(self.init_jitter >= 0.0) {
            return Err(Error::OutOfRange {
                name: "scene.init_jitter",
                value: self.init_jitter,
                expected: ">= 0",
            });
        }
        let coarsest = self.base_stride * (1u64 << (self.levels - 1)) as f64;
        if coarsest > self.width || coarsest > self.height {
            return Err(Error::InvalidAnchors(format!(
                "coarsest stride {coarsest} exceeds the {}x{} canvas",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// One synthetic scene together with the toy detector's initial parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBatch {
    pub anchors: AnchorSet,
    pub gts: Vec<GroundTruth>,
    pub params: DetectorParams,
    pub seed: u64,
}

impl SceneBatch {
    pub fn num_classes(&self) -> usize {
        self.params.num_classes
    }
}

/// Samples a reproducible scene. Ground-truth sizes alternate between the
/// lower and upper half (geometrically) of `[min_size, max_size]` so that
/// scenes with two or more objects exercise more than one pyramid level.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SceneBatch> {
    cfg.validate()?;
    let too_small = || Error::CanvasTooSmall {
        width: cfg.width,
        height: cfg.height,
        requested: cfg.gts,
    };
    if cfg.min_size > cfg.width || cfg.min_size > cfg.height {
        return Err(too_small());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = AnchorSet::grid(cfg.width, cfg.height, &cfg.strides(), cfg.anchor_scale)?;

    let (lo, hi) = (cfg.min_size.ln(), cfg.max_size.ln());
    let mid = 0.5 * (lo + hi);
    let aspect = cfg.max_aspect.ln();
    let mut gts: Vec<GroundTruth> = Vec::with_capacity(cfg.gts);
    for gi in 0..cfg.gts {
        let (a, b) = if gi % 2 == 0 { (lo, mid) } else { (mid, hi) };
        let placed = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
            let side = rng.random_range(a..=b).exp();
            let ratio = if aspect > 0.0 {
                rng.random_range(-aspect..=aspect).exp()
            } else {
                1.0
            };
            let w = (side * ratio.sqrt()).min(cfg.width);
            let h = (side / ratio.sqrt()).min(cfg.height);
            let x1 = rng.random_range(0.0..=cfg.width - w);
            let y1 = rng.random_range(0.0..=cfg.height - h);
            let bbox = BBox::new(x1, y1, x1 + w, y1 + h).ok()?;
            let class = rng.random_range(0..cfg.classes);
            let clear = gts.iter().all(|g| iou(&g.bbox, &bbox) <= cfg.max_gt_overlap);
            clear.then_some(GroundTruth { bbox, class })
        });
        gts.push(placed.ok_or_else(too_small)?);
    }

    let mut params = DetectorParams::zeros(anchors.len(), cfg.classes);
    let prior = (cfg.prior_prob / (1.0 - cfg.prior_prob)).ln();
    if cfg.init_jitter > 0.0 {
        let noise = Normal::new(0.0, cfg.init_jitter).expect("finite jitter");
        params.deltas.iter_mut().for_each(|d| *d = noise.sample(&mut rng));
        params
            .logits
            .iter_mut()
            .for_each(|z| *z = prior + noise.sample(&mut rng));
    } else {
        params.logits.iter_mut().for_each(|z| *z = prior);
    }

    Ok(SceneBatch {
        anchors,
        gts,
        params,
        seed,
    })
}
