//! Backend protocol roles and the adapters that serve them.
//!
//! Three roles make up a run: a segmenter turns a box prompt into a mask, a
//! proposer turns an image and prompt into free text, and a detector turns an
//! image and label list into scored boxes. Each role has a remote HTTP
//! implementation and a fixture-driven mock. The checked entry points in this
//! module wrap any implementation and enforce the response contract, so the
//! orchestrator never sees an out-of-contract value.

mod mock;
mod remote;
pub mod wire;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, BinaryMask, IsolationMode, RasterImage};
use crate::proposal::{normalize_label_with, NormalizationLevel, ProposalList, RawProposal};

pub use mock::{FixtureError, FixtureSet, MaskFallback, MockDetector, MockProposer, MockSegmenter};
pub use remote::{RemoteBackend, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Segmenter,
    Proposer,
    Detector,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Segmenter => "segmenter",
            Role::Proposer => "proposer",
            Role::Detector => "detector",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("{role} backend unavailable after {attempts} attempt(s): {last}")]
    Unavailable {
        role: Role,
        attempts: u32,
        last: String,
    },
    #[error("{role} backend protocol error: {detail}")]
    Protocol { role: Role, detail: String },
    #[error("{role} fixture missing for {key}")]
    FixtureMiss { role: Role, key: String },
}

impl BackendError {
    pub fn role(&self) -> Role {
        match self {
            Self::Unavailable { role, .. }
            | Self::Protocol { role, .. }
            | Self::FixtureMiss { role, .. } => *role,
        }
    }
}

/// Which version of the case image a backend is looking at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameView {
    Original,
    Attended(IsolationMode),
}

impl FrameView {
    /// Stable key used by fixtures: `full`, `rect_mask`, `crop` or `segment_mask`.
    pub fn key(&self) -> &'static str {
        match self {
            FrameView::Original => IsolationMode::Full.as_str(),
            FrameView::Attended(mode) => mode.as_str(),
        }
    }
}

/// An image handed to a backend, with the identity mocks key on.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub key: &'a str,
    pub view: FrameView,
    pub image: &'a RasterImage,
}

/// Backend value plus how many retries it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply<T> {
    pub value: T,
    pub retries: u32,
}

impl<T> Reply<T> {
    pub fn immediate(value: T) -> Self {
        Self { value, retries: 0 }
    }
}

/// Detection as a backend reported it, before contract checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

pub trait Segmenter: Send + Sync {
    fn segment(&self, frame: &Frame<'_>, bbox: &BBox) -> Result<Reply<BinaryMask>, BackendError>;
}

pub trait Proposer: Send + Sync {
    fn propose(&self, frame: &Frame<'_>, prompt: &str) -> Result<Reply<RawProposal>, BackendError>;
}

pub trait Detector: Send + Sync {
    fn detect(
        &self,
        frame: &Frame<'_>,
        labels: &ProposalList,
        tau: f64,
    ) -> Result<Reply<Vec<RawDetection>>, BackendError>;
}

/// Segmenter call with the mask shape checked against the frame.
pub fn segment_checked(
    segmenter: &dyn Segmenter,
    frame: &Frame<'_>,
    bbox: &BBox,
) -> Result<Reply<BinaryMask>, BackendError> {
    if !bbox.fits(frame.image.width(), frame.image.height()) {
        return Err(BackendError::Protocol {
            role: Role::Segmenter,
            detail: format!("box {bbox} outside the frame"),
        });
    }
    let reply = segmenter.segment(frame, bbox)?;
    let (w, h) = (reply.value.width(), reply.value.height());
    if (w, h) != (frame.image.width(), frame.image.height()) {
        return Err(BackendError::Protocol {
            role: Role::Segmenter,
            detail: format!(
                "mask is {w}x{h}, image is {}x{}",
                frame.image.width(),
                frame.image.height()
            ),
        });
    }
    Ok(reply)
}

pub fn propose_checked(
    proposer: &dyn Proposer,
    frame: &Frame<'_>,
    prompt: &str,
) -> Result<Reply<RawProposal>, BackendError> {
    if prompt.trim().is_empty() {
        return Err(BackendError::Protocol {
            role: Role::Proposer,
            detail: "empty prompt".into(),
        });
    }
    proposer.propose(frame, prompt)
}

/// Detections that passed the contract, and how many did not.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectOutcome {
    pub detections: Vec<Detection>,
    pub dropped: usize,
    pub retries: u32,
}

/// Keeps detections whose label is requested, whose score lies in
/// `[tau, 1]` and whose rounded box sits inside the frame. Everything else is
/// counted as dropped.
pub fn enforce_contract(
    raw: Vec<RawDetection>,
    labels: &ProposalList,
    tau: f64,
    width: u32,
    height: u32,
    level: NormalizationLevel,
) -> (Vec<Detection>, usize) {
    let mut kept = Vec::with_capacity(raw.len());
    let mut dropped = 0;
    for det in raw {
        let label = normalize_label_with(&det.label, level)
            .ok()
            .filter(|l| labels.contains(l));
        let score_ok = det.score.is_finite() && det.score >= tau && det.score <= 1.0;
        let bbox = BBox::from_f64(det.bbox)
            .ok()
            .filter(|b| b.fits(width, height));
        match (label, score_ok, bbox) {
            (Some(label), true, Some(bbox)) => kept.push(Detection {
                label,
                score: det.score,
                bbox,
            }),
            _ => dropped += 1,
        }
    }
    if dropped > 0 {
        tracing::debug!(dropped, "dropped out-of-contract detections");
    }
    (kept, dropped)
}

pub fn detect_checked(
    detector: &dyn Detector,
    frame: &Frame<'_>,
    labels: &ProposalList,
    tau: f64,
    level: NormalizationLevel,
) -> Result<DetectOutcome, BackendError> {
    if labels.is_empty() || !(0.0..=1.0).contains(&tau) {
        return Err(BackendError::Protocol {
            role: Role::Detector,
            detail: format!("invalid request: {} labels, tau {tau}", labels.len()),
        });
    }
    let reply = detector.detect(frame, labels, tau)?;
    let (detections, dropped) = enforce_contract(
        reply.value,
        labels,
        tau,
        frame.image.width(),
        frame.image.height(),
        level,
    );
    Ok(DetectOutcome {
        detections,
        dropped,
        retries: reply.retries,
    })
}

/// Where a role is served from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendKind {
    Remote {
        url: String,
        /// Static token sent as `Authorization: Bearer ...`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bearer_token: Option<String>,
        /// Environment variable to read the token from instead.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bearer_token_env: Option<String>,
    },
    Mock {
        fixtures: PathBuf,
    },
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    200
}

/// One role's endpoint as written in a config document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointSpec {
    #[serde(flatten)]
    pub kind: BackendKind,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

impl EndpointSpec {
    pub fn mock(fixtures: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Mock {
                fixtures: fixtures.into(),
            },
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn remote(url: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::Remote {
                url: url.into(),
                bearer_token: None,
                bearer_token_env: None,
            },
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.timeout_ms == 0 {
            return Err("timeout_ms must be positive".into());
        }
        Ok(())
    }

    /// Makes relative fixture paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let BackendKind::Mock { fixtures } = &mut self.kind {
            if fixtures.is_relative() {
                *fixtures = base.join(&*fixtures);
            }
        }
    }
}

/// A role bound to its endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendEndpointConfig {
    pub role: Role,
    pub spec: EndpointSpec,
}

/// Endpoint per role. The segmenter is only needed for segment-mask runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmenter: Option<EndpointSpec>,
    pub proposer: EndpointSpec,
    pub detector: EndpointSpec,
}

impl BackendSet {
    /// All three roles served by mocks over one fixture directory.
    pub fn all_mock(fixtures: impl Into<PathBuf>) -> Self {
        let fixtures = fixtures.into();
        Self {
            segmenter: Some(EndpointSpec::mock(&fixtures)),
            proposer: EndpointSpec::mock(&fixtures),
            detector: EndpointSpec::mock(&fixtures),
        }
    }

    pub fn endpoints(&self) -> Vec<BackendEndpointConfig> {
        let mut out = Vec::new();
        if let Some(spec) = &self.segmenter {
            out.push(BackendEndpointConfig {
                role: Role::Segmenter,
                spec: spec.clone(),
            });
        }
        out.push(BackendEndpointConfig {
            role: Role::Proposer,
            spec: self.proposer.clone(),
        });
        out.push(BackendEndpointConfig {
            role: Role::Detector,
            spec: self.detector.clone(),
        });
        out
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(s) = &mut self.segmenter {
            s.resolve_paths(base);
        }
        self.proposer.resolve_paths(base);
        self.detector.resolve_paths(base);
    }
}

/// Live backend handles for one pipeline.
#[derive(Clone)]
pub struct Backends {
    pub segmenter: Option<Arc<dyn Segmenter>>,
    pub proposer: Arc<dyn Proposer>,
    pub detector: Arc<dyn Detector>,
}

impl std::fmt::Debug for Backends {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backends")
            .field("segmenter", &self.segmenter.is_some())
            .finish_non_exhaustive()
    }
}

impl Backends {
    /// Instantiates every configured endpoint. Mock fixture directories are
    /// loaded once here and shared between roles that point at the same one.
    pub fn connect(set: &BackendSet) -> Result<Self, FixtureError> {
        let mut loaded: Vec<(PathBuf, Arc<FixtureSet>)> = Vec::new();
        let mut fixtures = |dir: &Path| -> Result<Arc<FixtureSet>, FixtureError> {
            if let Some((_, f)) = loaded.iter().find(|(p, _)| p == dir) {
                return Ok(f.clone());
            }
            let f = Arc::new(FixtureSet::load(dir)?);
            loaded.push((dir.to_path_buf(), f.clone()));
            Ok(f)
        };

        let segmenter: Option<Arc<dyn Segmenter>> = match &set.segmenter {
            None => None,
            Some(spec) => Some(match &spec.kind {
                BackendKind::Mock { fixtures: dir } => Arc::new(MockSegmenter::new(fixtures(dir)?)),
                BackendKind::Remote { .. } => Arc::new(RemoteBackend::from_spec(spec)),
            }),
        };
        let proposer: Arc<dyn Proposer> = match &set.proposer.kind {
            BackendKind::Mock { fixtures: dir } => Arc::new(MockProposer::new(fixtures(dir)?)),
            BackendKind::Remote { .. } => Arc::new(RemoteBackend::from_spec(&set.proposer)),
        };
        let detector: Arc<dyn Detector> = match &set.detector.kind {
            BackendKind::Mock { fixtures: dir } => Arc::new(MockDetector::new(fixtures(dir)?)),
            BackendKind::Remote { .. } => Arc::new(RemoteBackend::from_spec(&set.detector)),
        };
        Ok(Self {
            segmenter,
            proposer,
            detector,
        })
    }
}
