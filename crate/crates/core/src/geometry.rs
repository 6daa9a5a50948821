//! Axis-aligned boxes and the pairwise overlap measures used by the losses and
//! the assigners.
//!
//! Boxes are corner encoded (`x1 <= x2`, `y1 <= y2`) in continuous canvas
//! units. Zero-area boxes are allowed; every ratio below falls back to 0 when
//! its denominator vanishes.

use crate::error::{Error, Result};

/// Axis-aligned rectangle `(x1, y1)`–`(x2, y2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box, rejecting non-finite or out-of-order corners.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x1 > x2 || y1 > y2 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from its center and (non-negative) size.
    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// `(cx, cy, w, h)`.
    pub fn to_center_size(&self) -> (f64, f64, f64, f64) {
        let (cx, cy) = self.center();
        (cx, cy, self.width(), self.height())
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Whether `(x, y)` lies strictly inside the box.
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x > self.x1 && x < self.x2 && y > self.y1 && y < self.y2
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// Smallest box enclosing both.
    pub fn enclose(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        iw * ih
    }
}

/// All pairwise measures between two boxes, computed in one pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnclosureMeasure {
    pub iou: f64,
    pub giou: f64,
    pub center_distance_sq: f64,
    /// Squared diagonal `c²` of the smallest enclosing box.
    pub enclosing_diag_sq: f64,
}

impl EnclosureMeasure {
    pub fn between(a: &BBox, b: &BBox) -> Self {
        let inter = a.intersection_area(b);
        let union = a.area() + b.area() - inter;
        let iou = if union > 0.0 { inter / union } else { 0.0 };

        let c = a.enclose(b);
        let c_area = c.area();
        let giou = if c_area > 0.0 {
            iou - (c_area - union) / c_area
        } else {
            0.0
        };

        let (ax, ay) = a.center();
        let (bx, by) = b.center();
        let center_distance_sq = (ax - bx).powi(2) + (ay - by).powi(2);
        let enclosing_diag_sq = c.width().powi(2) + c.height().powi(2);

        Self {
            iou,
            giou,
            center_distance_sq,
            enclosing_diag_sq,
        }
    }

    /// `ρ²/c²`, or 0 when the enclosing box has no extent.
    pub fn diou_penalty(&self) -> f64 {
        if self.enclosing_diag_sq > 0.0 {
            self.center_distance_sq / self.enclosing_diag_sq
        } else {
            0.0
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

pub fn giou(a: &BBox, b: &BBox) -> f64 {
    EnclosureMeasure::between(a, b).giou
}

/// `1 - giou`, in `[0, 2]`.
pub fn giou_loss(pred: &BBox, target: &BBox) -> f64 {
    1.0 - giou(pred, target)
}

/// Squared center distance normalized by the squared enclosing diagonal.
pub fn diou_penalty(a: &BBox, b: &BBox) -> f64 {
    EnclosureMeasure::between(a, b).diou_penalty()
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    EnclosureMeasure::between(a, b).center_distance_sq.sqrt()
}

/// Analytic gradient of [`giou_loss`] with respect to the predicted corners
/// `(x1, y1, x2, y2)`; the target is a constant.
///
/// With `L = 2 - I/U - U/C` (intersection, union, enclosure areas) every area
/// is piecewise bilinear in the corners. Where a predicted corner ties the
/// target corner the `min`/`max` selections are split evenly, which yields the
/// midpoint of the two one-sided derivatives (and exactly zero at `pred ==
/// target`). An empty or edge-touching intersection contributes no gradient.
pub fn giou_gradient(pred: &BBox, target: &BBox) -> [f64; 4] {
    let w = pred.width();
    let h = pred.height();

    let iw_raw = pred.x2.min(target.x2) - pred.x1.max(target.x1);
    let ih_raw = pred.y2.min(target.y2) - pred.y1.max(target.y1);
    let overlapping = iw_raw > 0.0 && ih_raw > 0.0;
    let (iw, ih) = if overlapping {
        (iw_raw, ih_raw)
    } else {
        (0.0, 0.0)
    };
    let inter = iw * ih;

    let cw = pred.x2.max(target.x2) - pred.x1.min(target.x1);
    let ch = pred.y2.max(target.y2) - pred.y1.min(target.y1);
    let enclosure = cw * ch;

    let union = w * h + target.area() - inter;
    if union <= 0.0 || enclosure <= 0.0 {
        return [0.0; 4];
    }

    let p = pred.as_array();
    let t = target.as_array();
    // Share of each intersection / enclosure edge that moves with `pred`.
    let inner = |k: usize| select(if k < 2 { p[k] > t[k] } else { p[k] < t[k] }, p[k] == t[k]);
    let outer = |k: usize| select(if k < 2 { p[k] < t[k] } else { p[k] > t[k] }, p[k] == t[k]);

    // Edge lengths orthogonal to each coordinate.
    let inter_side = [ih, iw, ih, iw];
    let encl_side = [ch, cw, ch, cw];
    let area_side = [h, w, h, w];
    let sign = [-1.0, -1.0, 1.0, 1.0];

    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_area = sign[k] * area_side[k];
        let d_inter = if overlapping {
            sign[k] * inter_side[k] * inner(k)
        } else {
            0.0
        };
        let d_encl = sign[k] * encl_side[k] * outer(k);
        let d_union = d_area - d_inter;
        let d_iou = (d_inter * union - inter * d_union) / (union * union);
        let d_ratio = (d_union * enclosure - union * d_encl) / (enclosure * enclosure);
        grad[k] = -d_iou - d_ratio;
    }
    grad
}

fn select(strict: bool, tie: bool) -> f64 {
    if strict {
        1.0
    } else if tie {
        0.5
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn rejects_out_of_order_corners() {
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 1.0).is_err());
        assert!(BBox::new(1.0, 1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn center_size_round_trip() {
        let bx = BBox::from_center_size(3.0, 4.0, 2.0, 6.0).unwrap();
        assert_eq!(bx, b(2.0, 1.0, 4.0, 7.0));
        assert_eq!(bx.to_center_size(), (3.0, 4.0, 2.0, 6.0));
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0.0, 0.0, 2.0, 2.0), &b(0.0, 0.0, 2.0, 2.0)), 1.0);
        assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)), 0.0);
        // intersection 1, union 7
        assert_abs_diff_eq!(
            iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)),
            1.0 / 7.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn degenerate_union_is_zero() {
        let p = b(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&p, &p), 0.0);
        assert_eq!(giou(&p, &p), 0.0);
        assert_eq!(diou_penalty(&p, &p), 0.0);
        assert_eq!(giou_gradient(&p, &p), [0.0; 4]);
    }

    #[test]
    fn giou_examples() {
        let same = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(giou(&same, &same), 1.0);
        assert_eq!(giou_loss(&same, &same), 0.0);
        // enclosing (0,0,3,3) area 9, union 2
        assert_abs_diff_eq!(
            giou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)),
            -7.0 / 9.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            giou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)),
            1.0 / 7.0 - 2.0 / 9.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn diou_examples() {
        let same = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(diou_penalty(&same, &same), 0.0);
        // centers 1 apart, enclosing (0,0,2,1): c^2 = 5
        assert_abs_diff_eq!(
            diou_penalty(&b(0.0, 0.0, 1.0, 1.0), &b(1.0, 0.0, 2.0, 1.0)),
            0.2,
            epsilon = 1e-15
        );
    }

    #[test]
    fn gradient_zero_at_identity() {
        let p = b(1.0, 2.0, 4.0, 6.0);
        assert_eq!(giou_gradient(&p, &p), [0.0; 4]);
        let nudged = giou_gradient(&b(1.0 + 1e-6, 2.0 + 1e-6, 4.0 - 1e-6, 6.0 - 1e-6), &p);
        // slightly inside the target: growing back lowers the loss
        assert!(nudged[0] > 0.0 && nudged[1] > 0.0);
        assert!(nudged[2] < 0.0 && nudged[3] < 0.0);
    }

    #[test]
    fn shrinking_inside_target_increases_loss() {
        let target = b(0.0, 0.0, 10.0, 10.0);
        let pred = b(2.0, 3.0, 7.0, 8.0);
        let g = giou_gradient(&pred, &target);
        // moving x1/y1 right (shrinking) raises the loss, moving x2/y2 right lowers it
        assert!(g[0] > 0.0 && g[1] > 0.0);
        assert!(g[2] < 0.0 && g[3] < 0.0);
        let step = 1e-3;
        let shrunk = b(pred.x1 + step, pred.y1 + step, pred.x2 - step, pred.y2 - step);
        assert!(giou_loss(&shrunk, &target) > giou_loss(&pred, &target));
    }

    #[test]
    fn disjoint_moving_toward_target_decreases_loss() {
        let target = b(10.0, 0.0, 12.0, 2.0);
        let pred = b(0.0, 0.0, 2.0, 2.0);
        let g = giou_gradient(&pred, &target);
        // directional derivative along +x translation
        let dir = g[0] + g[2];
        assert!(dir < 0.0);
        let moved = pred.translate(0.5, 0.0);
        assert!(giou_loss(&moved, &target) < giou_loss(&pred, &target));
    }

    #[test]
    fn enclosure_measure_is_consistent() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        let c = b(1.0, 1.0, 3.0, 3.0);
        let m = EnclosureMeasure::between(&a, &c);
        assert_eq!(m.iou, iou(&a, &c));
        assert_eq!(m.giou, giou(&a, &c));
        assert_abs_diff_eq!(m.center_distance_sq, 2.0);
        assert_abs_diff_eq!(m.enclosing_diag_sq, 18.0);
        assert_abs_diff_eq!(center_distance(&a, &c), 2f64.sqrt());
    }
}
