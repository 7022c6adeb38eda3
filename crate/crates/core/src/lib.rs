//! Region-isolated open-vocabulary detection.
//!
//! A run isolates the user's region of interest, asks a vision-language
//! backend for the objects it sees there, and hands that label list to an
//! open-vocabulary detector. Baseline runs skip isolation and filter
//! full-image detections by containment instead. The [`eval`] module scores
//! both against the proposal list.

pub mod backend;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod proposal;
pub mod synth;
