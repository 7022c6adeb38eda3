use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FailureKind, Pipeline, PipelineError, PipelineResult, RunInput, Stage, Variant};
use crate::eval::EvalCase;
use crate::geometry::RasterImage;
use crate::proposal::ProposalList;

/// A case that did not produce a result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub image_id: String,
    pub variant: Variant,
    pub stage: Stage,
    pub exit_code: i32,
    pub message: String,
}

/// Outcome of one case in a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CaseRecord {
    Ok { result: Box<PipelineResult> },
    Error(CaseFailure),
}

impl CaseRecord {
    fn from_run(
        case: &EvalCase,
        variant: Variant,
        run: Result<PipelineResult, PipelineError>,
    ) -> Self {
        match run {
            Ok(result) => CaseRecord::Ok {
                result: Box::new(result),
            },
            Err(e) => CaseRecord::Error(CaseFailure {
                case_id: case.case_id.clone(),
                image_id: case.image_id.clone(),
                variant,
                stage: e.stage,
                exit_code: e.exit_code(),
                message: e.kind.to_string(),
            }),
        }
    }

    pub fn case_id(&self) -> &str {
        match self {
            CaseRecord::Ok { result } => &result.case_id,
            CaseRecord::Error(f) => &f.case_id,
        }
    }

    pub fn result(&self) -> Option<&PipelineResult> {
        match self {
            CaseRecord::Ok { result } => Some(result),
            CaseRecord::Error(_) => None,
        }
    }

    /// Same record with timings zeroed.
    pub fn canonical(&self) -> Self {
        match self {
            CaseRecord::Ok { result } => CaseRecord::Ok {
                result: Box::new(result.canonical()),
            },
            other => other.clone(),
        }
    }
}

fn load(case: &EvalCase) -> Result<RasterImage, PipelineError> {
    RasterImage::open(&case.image_path).map_err(|e| PipelineError {
        stage: Stage::Input,
        kind: FailureKind::Input(format!("{}: {e}", case.image_path.display())),
    })
}

fn input<'a>(case: &'a EvalCase, image: &'a RasterImage) -> RunInput<'a> {
    RunInput {
        case_id: &case.case_id,
        image_id: &case.image_id,
        image,
        bbox: case.input_box,
    }
}

impl Pipeline {
    /// Runs `f` over every case on a pool of `parallelism` threads and
    /// returns the outputs in case order.
    fn for_each_case<T, F>(&self, cases: &[EvalCase], f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize, &EvalCase) -> T + Sync,
    {
        let work = || {
            cases
                .par_iter()
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect::<Vec<_>>()
        };
        match rayon::ThreadPoolBuilder::new()
            .num_threads(self.config().parallelism.max(1))
            .build()
        {
            Ok(pool) => pool.install(work),
            Err(e) => {
                tracing::warn!("thread pool unavailable ({e}), running sequentially");
                cases.iter().enumerate().map(|(i, c)| f(i, c)).collect()
            }
        }
    }

    /// Runs one variant over every case. Baseline runs obtain their label
    /// lists from the proposal stage.
    pub fn batch_run(&self, cases: &[EvalCase], variant: Variant) -> Vec<CaseRecord> {
        self.for_each_case(cases, |_, case| {
            let run = load(case).and_then(|image| {
                let input = input(case, &image);
                match variant {
                    Variant::Focus => self.run(&input),
                    Variant::Baseline => {
                        let labels = self.propose_only(&input)?;
                        self.run_baseline(&input, &labels)
                    }
                }
            });
            CaseRecord::from_run(case, variant, run)
        })
    }

    /// Baseline runs that reuse the proposal lists of earlier focus records.
    /// A case whose focus record failed fails here with the same stage.
    pub fn batch_baseline(&self, cases: &[EvalCase], focus: &[CaseRecord]) -> Vec<CaseRecord> {
        assert_eq!(cases.len(), focus.len(), "one focus record per case");
        self.for_each_case(cases, |i, case| {
            let run = match &focus[i] {
                CaseRecord::Error(f) => Err(PipelineError {
                    stage: f.stage,
                    kind: FailureKind::Input(format!("focus run failed: {}", f.message)),
                }),
                CaseRecord::Ok { result } => {
                    let labels: &ProposalList = &result.proposal;
                    load(case).and_then(|image| self.run_baseline(&input(case, &image), labels))
                }
            };
            CaseRecord::from_run(case, Variant::Baseline, run)
        })
    }
}
