//! Camera pose refinement from joint 2D-3D point and line correspondences.
//!
//! The crate covers the full chain from detected line segments to a refined
//! query pose:
//!
//! * [`detection`] - midpoint/displacement segment representation, decoding
//!   of detection-head maps, and the sAP metric.
//! * [`mapping`] - lifting 2D segments to 3D through per-pixel world
//!   coordinates and filtering them with PnP-RANSAC.
//! * [`matching`] - epipolar candidate generation and one-to-one 2D-3D line
//!   association.
//! * [`refine`] - line-only and point-line joint Levenberg-Marquardt
//!   refinement with Huber loss.
//! * [`harness`] - synthetic scenes, file formats, localization scoring and
//!   the end-to-end pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod mapping;
pub mod matching;
pub mod refine;

pub use error::{Error, Result};
