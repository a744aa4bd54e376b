//! Unsupervised anomaly ranking for video frames by self-trained ordinal
//! regression.
//!
//! The pipeline bootstraps pseudo labels from two generic detectors (Sp and
//! an isolation forest), trains a differentiable scorer to regress
//! pseudo-anomalies onto `c1` and pseudo-normals onto `c2`, and repeats
//! with labels drawn from its own scores. The per-iteration models are
//! averaged into the final ranking. Class activation maps localize what
//! drove a frame's score, and a feedback loop fine-tunes the ranking from a
//! handful of expert labels.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod hitl;
pub mod initdetect;
pub mod learner;
pub mod localize;
pub mod matrix;
pub mod rundir;
pub mod scores;
pub mod seed;
pub mod selftrain;

pub use error::{Error, Result};
pub use scores::{Provenance, ScoreVector};
