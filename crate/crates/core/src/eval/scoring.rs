use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::backend::Detection;
use crate::pipeline::PlacedDetection;
use crate::proposal::{normalize_label_with, NormalizationLevel, ProposalList};

/// Recall, precision and F1 of a detected label list against a proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub matched: Vec<String>,
    pub missed: Vec<String>,
    pub spurious: Vec<String>,
}

impl MatchReport {
    pub fn proposal_size(&self) -> usize {
        self.matched.len() + self.missed.len()
    }

    pub fn detected_size(&self) -> usize {
        self.matched.len() + self.spurious.len()
    }
}

/// Harmonic mean with the convention that it is 0 when both inputs are 0.
pub fn f1_score(recall: f64, precision: f64) -> f64 {
    if recall + precision == 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

/// Compares label sets. Detected labels are normalized the same way as
/// proposal labels; duplicates on either side count once.
pub fn match_lists<S: AsRef<str>>(proposal: &ProposalList, detected: &[S]) -> MatchReport {
    match_lists_with(proposal, detected, NormalizationLevel::Conservative)
}

pub fn match_lists_with<S: AsRef<str>>(
    proposal: &ProposalList,
    detected: &[S],
    level: NormalizationLevel,
) -> MatchReport {
    let wanted: BTreeSet<&str> = proposal.labels().iter().map(String::as_str).collect();
    let found: BTreeSet<String> = detected
        .iter()
        .filter_map(|l| normalize_label_with(l.as_ref(), level).ok())
        .collect();

    let matched: Vec<String> = found
        .iter()
        .filter(|l| wanted.contains(l.as_str()))
        .cloned()
        .collect();
    let missed: Vec<String> = wanted
        .iter()
        .filter(|l| !found.contains(**l))
        .map(|l| l.to_string())
        .collect();
    let spurious: Vec<String> = found
        .iter()
        .filter(|l| !wanted.contains(l.as_str()))
        .cloned()
        .collect();

    let recall = matched.len() as f64 / wanted.len() as f64;
    let precision = if found.is_empty() {
        0.0
    } else {
        matched.len() as f64 / found.len() as f64
    };
    MatchReport {
        recall,
        precision,
        f1: f1_score(recall, precision),
        matched,
        missed,
        spurious,
    }
}

pub trait Scored {
    fn score(&self) -> f64;
}

impl Scored for Detection {
    fn score(&self) -> f64 {
        self.score
    }
}

impl Scored for PlacedDetection {
    fn score(&self) -> f64 {
        self.score
    }
}

/// Detections scoring at least `cutoff`, in their original order.
pub fn filter_by_cutoff<T: Scored + Clone>(detections: &[T], cutoff: f64) -> Vec<T> {
    detections
        .iter()
        .filter(|d| d.score() >= cutoff)
        .cloned()
        .collect()
}
