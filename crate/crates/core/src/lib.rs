//! Intervertebral disc labeling as keypoint heatmap regression.
//!
//! The pipeline: [`synth`] or on-disk [`targets::LabeledCase`]s feed a
//! stacked hourglass [`model`] trained with a visibility-masked loss
//! ([`training`]). Predicted heatmaps are reduced to per-disc peaks
//! ([`candidates`]) and the combination that best fits an average disc
//! [`skeleton`] is selected. [`metrics`] scores the result and
//! [`pipeline`] ties the stages to files on disk.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod candidates;
pub mod error;
pub mod io;
pub mod labeling;
pub mod metrics;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod render;
pub mod skeleton;
pub mod synth;
pub mod targets;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
