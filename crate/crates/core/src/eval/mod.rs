//! Label-list scoring, cutoff sweeps and annotation ingestion.
//!
//! The proposal list is the reference: recall is the share of proposed labels
//! that were detected, precision the share of detected labels that were
//! proposed. Both sides are compared as sets.

mod case;
mod difficulty;
mod discrepancy;
pub mod ingest;
mod scoring;
mod sweep;

pub use case::{EvalCase, TaskTag};
pub use difficulty::{difficulty_of, DifficultyGroup};
pub use discrepancy::{
    discrepancy_csv, discrepancy_report, DiscrepancyEntry, DEFAULT_MIN_COUNT, DEFAULT_TOP_K,
};
pub use ingest::{ingest_coco, ingest_voc, AnnotationError, IngestOptions};
pub use scoring::{f1_score, filter_by_cutoff, match_lists, match_lists_with, MatchReport, Scored};
pub use sweep::{
    check_case_sets, difficulty_csv, sweep, Aggregation, CaseSetMismatchError, DifficultyRow,
    MatchRecord, MethodResults, SweepOutput, SweepRow, SweepTable, DEFAULT_CUTOFFS,
};
