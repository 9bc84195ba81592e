//! Detection fusion by contextual learning to rank.
//!
//! The crate merges ranked detection lists produced by several independently
//! trained object detectors. Each detection is described by a compact context
//! vector (agreement with the other detectors, object saliency measured
//! against region proposals, and per-image class co-occurrence) and re-scored
//! by a per-class linear ranker. Duplicates introduced by the merge are
//! removed with a correspondence-restricted non-maximum suppression.
//!
//! Everything needed to check the approach end to end lives here as well:
//! Platt calibration, VOC-protocol evaluation with maximal-mAP bounds and a
//! false-positive taxonomy, and a seeded simulator of detectors and proposals.

pub mod calibration;
pub mod config;
pub mod corpus;
pub mod detection;
pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod kernel_map;
pub mod rankers;
pub mod rng;
pub mod split;
pub mod synth;
pub mod workflow;

pub use detection::{Correspondence, Detection, GroundTruthObject, Partner};
pub use error::{Error, ErrorKind, Result};
pub use geometry::BoundingBox;
