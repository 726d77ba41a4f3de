//! Video relation detection: per-frame detections are linked into object
//! trajectories by a dynamic-programming tracker with cross-frame bridging,
//! trajectory pairs are classified into spatial and action predicates from
//! multi-modal features, per-segment results are merged greedily into
//! video-level relation instances, and the challenge metric suite scores
//! them.

pub mod error;
pub mod eval;
pub mod features;
pub mod formats;
pub mod geometry;
pub mod graph;
pub mod merge;
pub mod model;
pub mod pipeline;
pub mod segment;
pub mod synth;

pub use error::{Result, VrdError};
