//! Composition of isolation, proposal and detection into full runs.
//!
//! A focus run isolates the region, proposes labels on the isolated image and
//! detects on it. A baseline run detects on the whole original image with a
//! given label list and keeps only detections contained in the region.

mod batch;
mod config;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    detect_checked, propose_checked, segment_checked, BackendError, Backends, Frame, FrameView,
};
use crate::geometry::{
    contains, isolate_region, AttendedImage, BBox, GeometryError, IsolationMode, RasterImage, Rgb,
};
use crate::proposal::{
    build_prompt, parse_proposal_with, ProposalError, ProposalList, RawProposal,
};

pub use batch::{CaseFailure, CaseRecord};
pub use config::{load_prompt_file, ConfigError, PipelineConfig};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Focus,
    Baseline,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Focus => "focus",
            Variant::Baseline => "baseline",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Input,
    Segment,
    Isolate,
    Propose,
    Parse,
    Detect,
}

impl Stage {
    /// Process exit code reported when a run fails in this stage.
    pub fn exit_code(&self) -> i32 {
        match self {
            Stage::Input | Stage::Isolate => 2,
            Stage::Segment => 3,
            Stage::Propose | Stage::Parse => 4,
            Stage::Detect => 5,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("stage serializes");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FailureKind {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} stage failed: {kind}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
}

impl PipelineError {
    fn at(stage: Stage) -> impl FnOnce(FailureKind) -> PipelineError {
        move |kind| PipelineError { stage, kind }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

/// What a run was asked to look at.
#[derive(Debug, Clone, Copy)]
pub struct RunInput<'a> {
    /// Identity passed to backends; mocks key fixtures on it.
    pub case_id: &'a str,
    pub image_id: &'a str,
    pub image: &'a RasterImage,
    pub bbox: BBox,
}

/// Serializable description of the attended image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttendedInfo {
    pub mode: IsolationMode,
    pub source_box: BBox,
    pub fill: Rgb,
    pub width: u32,
    pub height: u32,
    /// Added to attended coordinates to get original-image coordinates.
    pub offset: [u32; 2],
    /// Relative path of the persisted PNG, when written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png: Option<String>,
}

impl AttendedInfo {
    fn of(att: &AttendedImage) -> Self {
        let (dx, dy) = att.offset();
        Self {
            mode: att.mode,
            source_box: att.source_box,
            fill: att.fill,
            width: att.image.width(),
            height: att.image.height(),
            offset: [dx, dy],
            png: None,
        }
    }
}

/// A detection in both coordinate frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedDetection {
    pub label: String,
    pub score: f64,
    /// Attended-image coordinates.
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub original_box: BBox,
}

/// Wall-clock per stage, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub segment_us: u64,
    pub isolate_us: u64,
    pub propose_us: u64,
    pub detect_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RetryCounts {
    pub segmenter: u32,
    pub proposer: u32,
    pub detector: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Backend detections rejected by the adapter contract.
    pub dropped_detections: usize,
    /// Baseline detections removed by the containment filter.
    pub outside_region: usize,
    pub retries: RetryCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub schema_version: u32,
    pub case_id: String,
    pub image_id: String,
    pub variant: Variant,
    pub input_box: BBox,
    pub attended: AttendedInfo,
    /// Rendered prompt sent to the proposer; absent when labels were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub raw_proposal: RawProposal,
    pub proposal: ProposalList,
    pub detections: Vec<PlacedDetection>,
    pub stage_timings: StageTimings,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub attended_image: Option<Arc<RasterImage>>,
}

impl PipelineResult {
    /// Copy with timings zeroed, for byte-level comparison of runs.
    pub fn canonical(&self) -> Self {
        Self {
            stage_timings: StageTimings::default(),
            ..self.clone()
        }
    }

    pub fn detected_labels(&self) -> Vec<&str> {
        self.detections.iter().map(|d| d.label.as_str()).collect()
    }
}

/// Totals across all runs of one pipeline.
#[derive(Debug, Default)]
pub struct PipelineStats {
    pub runs: AtomicU64,
    pub failures: AtomicU64,
    pub dropped_detections: AtomicU64,
}

struct Proposed {
    attended: AttendedImage,
    prompt: Option<String>,
    raw: RawProposal,
    proposal: ProposalList,
    timings: StageTimings,
    retries: RetryCounts,
}

fn micros(since: Instant) -> u64 {
    since.elapsed().as_micros() as u64
}

pub struct Pipeline {
    config: PipelineConfig,
    backends: Backends,
    stats: PipelineStats,
}

impl Pipeline {
    /// Validates the config and connects its backends.
    pub fn new(config: PipelineConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let backends = Backends::connect(&config.backends)?;
        Self::with_backends(config, backends)
    }

    /// Uses the given backend handles instead of the ones in the config.
    pub fn with_backends(config: PipelineConfig, backends: Backends) -> Result<Self, ConfigError> {
        let mut check = config.clone();
        if backends.segmenter.is_some() && check.backends.segmenter.is_none() {
            check.backends.segmenter = Some(check.backends.proposer.clone());
        }
        if backends.segmenter.is_none() {
            check.backends.segmenter = None;
        }
        check.validate()?;
        Ok(Self {
            config,
            backends,
            stats: PipelineStats::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn stats(&self) -> &PipelineStats {
        &self.stats
    }

    fn check_input(&self, input: &RunInput<'_>) -> Result<(), PipelineError> {
        input
            .bbox
            .check_fits(input.image.width(), input.image.height())
            .map_err(|e| PipelineError {
                stage: Stage::Input,
                kind: e.into(),
            })
    }

    fn isolate(
        &self,
        input: &RunInput<'_>,
    ) -> Result<(AttendedImage, StageTimings, u32), PipelineError> {
        let mut timings = StageTimings::default();
        let mut retries = 0;
        let mask = if self.config.mode.needs_mask() {
            let segmenter = self
                .backends
                .segmenter
                .as_ref()
                .ok_or_else(|| PipelineError {
                    stage: Stage::Segment,
                    kind: FailureKind::Input("no segmenter configured".into()),
                })?;
            let start = Instant::now();
            let frame = Frame {
                key: input.case_id,
                view: FrameView::Original,
                image: input.image,
            };
            let reply = segment_checked(segmenter.as_ref(), &frame, &input.bbox)
                .map_err(|e| PipelineError::at(Stage::Segment)(e.into()))?;
            timings.segment_us = micros(start);
            retries = reply.retries;
            Some(reply.value)
        } else {
            None
        };
        let start = Instant::now();
        let attended = isolate_region(
            input.image,
            &input.bbox,
            mask.as_ref(),
            self.config.mode,
            self.config.fill,
        )
        .map_err(|e| PipelineError::at(Stage::Isolate)(e.into()))?;
        timings.isolate_us = micros(start);
        Ok((attended, timings, retries))
    }

    fn attend_and_propose(&self, input: &RunInput<'_>) -> Result<Proposed, PipelineError> {
        let (attended, mut timings, seg_retries) = self.isolate(input)?;
        let prompt = build_prompt(&self.config.prompt)
            .map_err(|e| PipelineError::at(Stage::Propose)(e.into()))?;
        let start = Instant::now();
        let frame = Frame {
            key: input.case_id,
            view: FrameView::Attended(self.config.mode),
            image: &attended.image,
        };
        let reply = propose_checked(self.backends.proposer.as_ref(), &frame, &prompt)
            .map_err(|e| PipelineError::at(Stage::Propose)(e.into()))?;
        timings.propose_us = micros(start);
        let proposal = parse_proposal_with(&reply.value, self.config.normalization)
            .map_err(|e| PipelineError::at(Stage::Parse)(e.into()))?;
        Ok(Proposed {
            attended,
            prompt: Some(prompt),
            raw: reply.value,
            proposal,
            timings,
            retries: RetryCounts {
                segmenter: seg_retries,
                proposer: reply.retries,
                detector: 0,
            },
        })
    }

    fn detect_on(
        &self,
        input: &RunInput<'_>,
        variant: Variant,
        proposed: Proposed,
    ) -> Result<PipelineResult, PipelineError> {
        let Proposed {
            attended,
            prompt,
            raw,
            proposal,
            mut timings,
            mut retries,
        } = proposed;
        let start = Instant::now();
        let frame = Frame {
            key: input.case_id,
            view: match variant {
                Variant::Focus => FrameView::Attended(attended.mode),
                Variant::Baseline => FrameView::Original,
            },
            image: &attended.image,
        };
        let outcome = detect_checked(
            self.backends.detector.as_ref(),
            &frame,
            &proposal,
            self.config.base_tau,
            self.config.normalization,
        )
        .map_err(|e| PipelineError::at(Stage::Detect)(e.into()))?;
        timings.detect_us = micros(start);
        retries.detector = outcome.retries;

        let mut outside_region = 0;
        let mut detections = Vec::with_capacity(outcome.detections.len());
        for det in outcome.detections {
            let original_box = attended.to_original(&det.bbox);
            if variant == Variant::Baseline
                && !contains(&input.bbox, &original_box, self.config.containment)
            {
                outside_region += 1;
                continue;
            }
            detections.push(PlacedDetection {
                label: det.label,
                score: det.score,
                bbox: det.bbox,
                original_box,
            });
        }
        self.stats
            .dropped_detections
            .fetch_add(outcome.dropped as u64, Ordering::Relaxed);

        Ok(PipelineResult {
            schema_version: RESULT_SCHEMA_VERSION,
            case_id: input.case_id.to_string(),
            image_id: input.image_id.to_string(),
            variant,
            input_box: input.bbox,
            attended: AttendedInfo::of(&attended),
            prompt,
            raw_proposal: raw,
            proposal,
            detections,
            stage_timings: timings,
            diagnostics: Diagnostics {
                dropped_detections: outcome.dropped,
                outside_region,
                retries,
            },
            attended_image: Some(Arc::new(attended.image)),
        })
    }

    fn tally<T>(&self, result: Result<T, PipelineError>) -> Result<T, PipelineError> {
        self.stats.runs.fetch_add(1, Ordering::Relaxed);
        if result.is_err() {
            self.stats.failures.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    /// Full focus run: segment (segment-mask mode only), isolate, propose,
    /// parse, then detect on the attended image.
    pub fn run(&self, input: &RunInput<'_>) -> Result<PipelineResult, PipelineError> {
        let result = self.check_input(input).and_then(|_| {
            let proposed = self.attend_and_propose(input)?;
            self.detect_on(input, Variant::Focus, proposed)
        });
        self.tally(result)
    }

    /// Focus run with a caller-supplied label list in place of the proposer.
    pub fn run_with_proposal(
        &self,
        input: &RunInput<'_>,
        labels: &ProposalList,
    ) -> Result<PipelineResult, PipelineError> {
        let result = self.check_input(input).and_then(|_| {
            let (attended, timings, seg_retries) = self.isolate(input)?;
            let proposed = Proposed {
                attended,
                prompt: None,
                raw: RawProposal {
                    text: labels.render(),
                    source: "override".into(),
                },
                proposal: labels.clone(),
                timings,
                retries: RetryCounts {
                    segmenter: seg_retries,
                    ..Default::default()
                },
            };
            self.detect_on(input, Variant::Focus, proposed)
        });
        self.tally(result)
    }

    /// Baseline run: detect over the whole original image with `labels`, then
    /// keep detections the containment policy places inside the input box.
    pub fn run_baseline(
        &self,
        input: &RunInput<'_>,
        labels: &ProposalList,
    ) -> Result<PipelineResult, PipelineError> {
        let result = self.check_input(input).and_then(|_| {
            let attended = isolate_region(
                input.image,
                &input.bbox,
                None,
                IsolationMode::Full,
                self.config.fill,
            )
            .map_err(|e| PipelineError::at(Stage::Isolate)(e.into()))?;
            let proposed = Proposed {
                attended,
                prompt: None,
                raw: RawProposal {
                    text: labels.render(),
                    source: "reused".into(),
                },
                proposal: labels.clone(),
                timings: StageTimings::default(),
                retries: RetryCounts::default(),
            };
            self.detect_on(input, Variant::Baseline, proposed)
        });
        self.tally(result)
    }

    /// Proposal list the focus path would produce for this input, without
    /// running detection.
    pub fn propose_only(&self, input: &RunInput<'_>) -> Result<ProposalList, PipelineError> {
        self.check_input(input)?;
        Ok(self.attend_and_propose(input)?.proposal)
    }
}
