use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::sweep::{check_case_sets, CaseSetMismatchError, MethodResults};
use crate::pipeline::PipelineResult;

/// Labels must appear in more than this many proposals by default.
pub const DEFAULT_MIN_COUNT: usize = 101;
pub const DEFAULT_TOP_K: usize = 10;

/// How much more confidently one label is found with isolation than without.
///
/// The score of a label in one image is its best detection score there, or 0
/// when it was not detected. Means run over the images whose proposal lists
/// the label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyEntry {
    pub label: String,
    pub images: usize,
    pub focus_mean: f64,
    pub baseline_mean: f64,
    pub discrepancy: f64,
}

fn best_score(result: &PipelineResult, label: &str) -> f64 {
    result
        .detections
        .iter()
        .filter(|d| d.label == label)
        .map(|d| d.score)
        .fold(0.0, f64::max)
}

pub fn discrepancy_report(
    baseline: &[PipelineResult],
    focus: &[PipelineResult],
    min_count: usize,
    k: usize,
) -> Result<Vec<DiscrepancyEntry>, CaseSetMismatchError> {
    check_case_sets(&[
        MethodResults {
            method: "focus",
            results: focus,
        },
        MethodResults {
            method: "baseline",
            results: baseline,
        },
    ])?;
    let base_by_id: BTreeMap<&str, &PipelineResult> =
        baseline.iter().map(|r| (r.case_id.as_str(), r)).collect();

    // label -> (images, focus sum, baseline sum)
    let mut sums: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for f in focus {
        let b = base_by_id[f.case_id.as_str()];
        let labels: BTreeSet<&str> = f.proposal.labels().iter().map(String::as_str).collect();
        for label in labels {
            let e = sums.entry(label).or_default();
            e.0 += 1;
            e.1 += best_score(f, label);
            e.2 += best_score(b, label);
        }
    }

    let mut entries: Vec<DiscrepancyEntry> = sums
        .into_iter()
        .filter(|(_, (n, _, _))| *n >= min_count.max(1))
        .map(|(label, (n, fs, bs))| {
            let focus_mean = fs / n as f64;
            let baseline_mean = bs / n as f64;
            DiscrepancyEntry {
                label: label.to_string(),
                images: n,
                focus_mean,
                baseline_mean,
                discrepancy: focus_mean - baseline_mean,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.discrepancy
            .total_cmp(&a.discrepancy)
            .then_with(|| a.label.cmp(&b.label))
    });
    entries.truncate(k);
    Ok(entries)
}

pub fn discrepancy_csv(entries: &[DiscrepancyEntry]) -> String {
    let mut out = String::from("rank,label,images,focus_mean,baseline_mean,discrepancy\n");
    for (i, e) in entries.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            i + 1,
            e.label,
            e.images,
            e.focus_mean,
            e.baseline_mean,
            e.discrepancy
        )
        .unwrap();
    }
    out
}
