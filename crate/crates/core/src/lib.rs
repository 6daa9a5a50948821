//! Hybrid classification-regression adaptive loss (HCRAL) for dense object
//! detectors, with the pieces it is built from and a desk-scale harness.
//!
//! * [`geometry`]: corner-encoded boxes, IoU / GIoU / DIoU measures and the
//!   analytic GIoU-loss gradient.
//! * [`ghm`]: gradient-density binning and the per-sample `β` weights.
//! * [`cls_loss`]: HCRA-C, the gradient-density weighted cross-entropy with the
//!   conditioning factor and the score/IoU residual gate, plus the focal-loss
//!   baseline.
//! * [`reg_loss`]: HCRA-R, the GIoU loss scaled by the conditioning factor and
//!   the EMA-normalized residual coefficient.
//! * [`assign`]: ATSS and the expanded EATSS positive-sample assignment.
//! * [`harness`]: synthetic scenes, a directly parameterized toy detector, the
//!   optimizer loop and NMS/AP evaluation.
//! * [`config`], [`curves`], [`report`], [`verify`]: experiment plumbing used by
//!   the `hcral` command-line tool.

pub mod assign;
pub mod cls_loss;
pub mod config;
pub mod curves;
pub mod error;
pub mod geometry;
pub mod ghm;
pub mod harness;
pub mod reg_loss;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::BBox;
