use crate::assign::AnchorSet;
use crate::cls_loss::sigmoid;
use crate::error::Result;
use crate::geometry::BBox;

/// Bound on `|dw|`, `|dh|` in the decode (boxes at most ~62x their anchor).
pub const MAX_LOG_SCALE: f64 = 4.135166556742356; // ln(1000 / 16)

/// Per-anchor learnable outputs: one logit per class and a center-size delta
/// `(dx, dy, dw, dh)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub num_classes: usize,
    /// Anchor-major: `logits[anchor * num_classes + class]`.
    pub logits: Vec<f64>,
    /// Anchor-major: `deltas[anchor * 4 + k]`.
    pub deltas: Vec<f64>,
}

impl DetectorParams {
    pub fn zeros(num_anchors: usize, num_classes: usize) -> Self {
        Self {
            num_classes,
            logits: vec![0.0; num_anchors * num_classes],
            deltas: vec![0.0; num_anchors * 4],
        }
    }

    pub fn num_anchors(&self) -> usize {
        self.deltas.len() / 4
    }

    pub fn score(&self, anchor: usize, class: usize) -> f64 {
        sigmoid(self.logits[anchor * self.num_classes + class])
    }

    pub fn delta(&self, anchor: usize) -> [f64; 4] {
        let d = &self.deltas[anchor * 4..anchor * 4 + 4];
        [d[0], d[1], d[2], d[3]]
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().chain(&self.deltas).all(|v| v.is_finite())
    }
}

/// Decodes every anchor: `center += stride·(dx, dy)`, `size = anchor_size·exp(dw, dh)`.
pub fn decode(anchors: &AnchorSet, params: &DetectorParams) -> Result<Vec<BBox>> {
    anchors
        .anchors()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let stride = anchors.stride_of(i);
            let [dx, dy, dw, dh] = params.delta(i);
            let (acx, acy, aw, ah) = a.to_center_size();
            BBox::from_center_size(
                acx + stride * dx,
                acy + stride * dy,
                aw * dw.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp(),
                ah * dh.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE).exp(),
            )
        })
        .collect()
}

/// Chain rule from corner gradients of a decoded box to its delta.
pub(crate) fn corner_to_delta_gradient(
    corner_grad: [f64; 4],
    decoded: &BBox,
    stride: f64,
    delta: [f64; 4],
) -> [f64; 4] {
    let [g1, h1, g2, h2] = corner_grad;
    let (w, h) = (decoded.width(), decoded.height());
    let active = |d: f64| if d.abs() < MAX_LOG_SCALE { 1.0 } else { 0.0 };
    [
        stride * (g1 + g2),
        stride * (h1 + h2),
        0.5 * w * (g2 - g1) * active(delta[2]),
        0.5 * h * (h2 - h1) * active(delta[3]),
    ]
}
