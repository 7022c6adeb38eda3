use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::case::{EvalCase, TaskTag};
use super::difficulty::{difficulty_of, DifficultyGroup};
use super::scoring::{filter_by_cutoff, match_lists_with, MatchReport};
use crate::pipeline::PipelineResult;
use crate::proposal::NormalizationLevel;

/// Score cutoffs of the standard report.
pub const DEFAULT_CUTOFFS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaseSetMismatchError {
    #[error("method `{method}` has results for {got} cases, `{reference}` has {expected}")]
    Count {
        method: String,
        reference: String,
        got: usize,
        expected: usize,
    },
    #[error("case `{case_id}` is in `{present}` but not in `{absent}`")]
    Missing {
        case_id: String,
        present: String,
        absent: String,
    },
    #[error("method `{method}` has two results for case `{case_id}`")]
    Duplicate { method: String, case_id: String },
    #[error("case `{case_id}` has no EvalCase")]
    UnknownCase { case_id: String },
}

/// All results of one method.
#[derive(Debug, Clone, Copy)]
pub struct MethodResults<'a> {
    pub method: &'a str,
    pub results: &'a [PipelineResult],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Mean of per-image F1.
    #[default]
    Macro,
    /// F1 of the pooled matched, proposal and detected counts.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub task: TaskTag,
    pub n: usize,
    /// One value per cutoff of the table.
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub aggregation: Aggregation,
    pub cutoffs: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, method: &str, task: &TaskTag) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && &r.task == task)
    }

    /// Long-form CSV, one line per row and cutoff.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,task,cutoff,f1,n\n");
        for row in &self.rows {
            for (c, f) in self.cutoffs.iter().zip(&row.f1) {
                writeln!(out, "{},{},{},{:.6},{}", row.method, row.task, c, f, row.n).unwrap();
            }
        }
        out
    }

    /// Wide plain-text table with cutoffs as columns.
    pub fn render(&self) -> String {
        let mut out = format!("{:<20} {:<12} {:>5}", "method", "task", "n");
        for c in &self.cutoffs {
            write!(out, " {:>7}", c).unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            write!(
                out,
                "{:<20} {:<12} {:>5}",
                row.method,
                row.task.to_string(),
                row.n
            )
            .unwrap();
            for f in &row.f1 {
                write!(out, " {:>7.3}", f).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Per-image score at one cutoff, as written to the match log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub method: String,
    pub case_id: String,
    pub image_id: String,
    pub task: TaskTag,
    pub difficulty: DifficultyGroup,
    pub cutoff: f64,
    #[serde(flatten)]
    pub report: MatchReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyRow {
    pub method: String,
    pub difficulty: DifficultyGroup,
    pub cutoff: f64,
    pub f1: f64,
    pub n: usize,
}

pub fn difficulty_csv(rows: &[DifficultyRow]) -> String {
    let mut out = String::from("method,difficulty,cutoff,f1,n\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{}",
            r.method, r.difficulty, r.cutoff, r.f1, r.n
        )
        .unwrap();
    }
    out
}

/// Everything a sweep computes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub table: SweepTable,
    pub difficulty: Vec<DifficultyRow>,
    pub matches: Vec<MatchRecord>,
}

/// Checks every method covers exactly the same cases, each once.
pub fn check_case_sets(methods: &[MethodResults<'_>]) -> Result<(), CaseSetMismatchError> {
    let mut sets = Vec::with_capacity(methods.len());
    for m in methods {
        let mut ids = BTreeSet::new();
        for r in m.results {
            if !ids.insert(r.case_id.as_str()) {
                return Err(CaseSetMismatchError::Duplicate {
                    method: m.method.into(),
                    case_id: r.case_id.clone(),
                });
            }
        }
        sets.push(ids);
    }
    let Some((first, rest)) = methods.split_first() else {
        return Ok(());
    };
    for (m, ids) in rest.iter().zip(&sets[1..]) {
        if ids.len() != sets[0].len() {
            return Err(CaseSetMismatchError::Count {
                method: m.method.into(),
                reference: first.method.into(),
                got: ids.len(),
                expected: sets[0].len(),
            });
        }
        if let Some(id) = sets[0].difference(ids).next() {
            return Err(CaseSetMismatchError::Missing {
                case_id: id.to_string(),
                present: first.method.into(),
                absent: m.method.into(),
            });
        }
    }
    Ok(())
}

#[derive(Default, Clone, Copy)]
struct Acc {
    f1_sum: f64,
    matched: usize,
    proposal: usize,
    detected: usize,
    n: usize,
}

impl Acc {
    fn add(&mut self, r: &MatchReport) {
        self.f1_sum += r.f1;
        self.matched += r.matched.len();
        self.proposal += r.proposal_size();
        self.detected += r.detected_size();
        self.n += 1;
    }

    fn value(&self, agg: Aggregation) -> f64 {
        match agg {
            Aggregation::Macro if self.n == 0 => 0.0,
            Aggregation::Macro => self.f1_sum / self.n as f64,
            Aggregation::Micro => {
                let recall = if self.proposal == 0 {
                    0.0
                } else {
                    self.matched as f64 / self.proposal as f64
                };
                let precision = if self.detected == 0 {
                    0.0
                } else {
                    self.matched as f64 / self.detected as f64
                };
                super::scoring::f1_score(recall, precision)
            }
        }
    }
}

/// Scores every method at every cutoff, grouped by task and by difficulty.
///
/// Per-image values are summed in the order the results are given, so the
/// output depends only on the inputs.
pub fn sweep(
    cases: &[EvalCase],
    methods: &[MethodResults<'_>],
    cutoffs: &[f64],
    aggregation: Aggregation,
    level: NormalizationLevel,
) -> Result<SweepOutput, CaseSetMismatchError> {
    check_case_sets(methods)?;
    let by_id: BTreeMap<&str, &EvalCase> = cases.iter().map(|c| (c.case_id.as_str(), c)).collect();

    let mut rows = Vec::new();
    let mut difficulty = Vec::new();
    let mut matches = Vec::new();
    for m in methods {
        let mut by_task: BTreeMap<TaskTag, Vec<Acc>> = BTreeMap::new();
        let mut by_group: BTreeMap<DifficultyGroup, Vec<Acc>> = BTreeMap::new();
        for r in m.results {
            let case =
                by_id
                    .get(r.case_id.as_str())
                    .ok_or_else(|| CaseSetMismatchError::UnknownCase {
                        case_id: r.case_id.clone(),
                    })?;
            let group = difficulty_of(case.person_count);
            let task_accs = by_task
                .entry(case.task.clone())
                .or_insert_with(|| vec![Acc::default(); cutoffs.len()]);
            let group_accs = by_group
                .entry(group)
                .or_insert_with(|| vec![Acc::default(); cutoffs.len()]);
            for (i, &cutoff) in cutoffs.iter().enumerate() {
                let kept = filter_by_cutoff(&r.detections, cutoff);
                let labels: Vec<&str> = kept.iter().map(|d| d.label.as_str()).collect();
                let report = match_lists_with(&r.proposal, &labels, level);
                task_accs[i].add(&report);
                group_accs[i].add(&report);
                matches.push(MatchRecord {
                    method: m.method.into(),
                    case_id: r.case_id.clone(),
                    image_id: r.image_id.clone(),
                    task: case.task.clone(),
                    difficulty: group,
                    cutoff,
                    report,
                });
            }
        }
        for (task, accs) in by_task {
            rows.push(SweepRow {
                method: m.method.into(),
                task,
                n: accs.first().map_or(0, |a| a.n),
                f1: accs.iter().map(|a| a.value(aggregation)).collect(),
            });
        }
        for (group, accs) in by_group {
            for (a, &cutoff) in accs.iter().zip(cutoffs) {
                difficulty.push(DifficultyRow {
                    method: m.method.into(),
                    difficulty: group,
                    cutoff,
                    f1: a.value(aggregation),
                    n: a.n,
                });
            }
        }
    }
    Ok(SweepOutput {
        table: SweepTable {
            aggregation,
            cutoffs: cutoffs.to_vec(),
            rows,
        },
        difficulty,
        matches,
    })
}
