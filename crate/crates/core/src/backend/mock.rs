//! Fixture-driven backends.
//!
//! A fixture directory looks like this:
//!
//! ```text
//! segmenter.json          optional, {"fallback": "rectangle" | "miss"}
//! masks/<key>.png         segmenter masks, single channel, full image size
//! proposals/<key>.json    {"<sha256 of rendered prompt>": "raw proposer text", ...}
//! detections/<key>.json   {"<view>": [{"label": "belt", "score": 0.9, "box": [x0, y0, x1, y1]}], ...}
//! ```
//!
//! `<key>` is the frame key (the case id). `<view>` is `full` for the original
//! image or the isolation mode name for attended images.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, Detector, Frame, Proposer, RawDetection, Reply, Role, Segmenter};
use crate::geometry::{BBox, BinaryMask};
use crate::proposal::{prompt_digest, ProposalList, RawProposal};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture io at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("fixture document {path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

/// What the mock segmenter does for a key without a mask fixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFallback {
    /// Mask set exactly inside the prompt box.
    #[default]
    Rectangle,
    Miss,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SegmenterDoc {
    #[serde(default)]
    fallback: MaskFallback,
}

/// In-memory fixture corpus shared by the three mock roles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureSet {
    pub mask_fallback: MaskFallback,
    pub masks: BTreeMap<String, BinaryMask>,
    /// key -> prompt digest -> raw text
    pub proposals: BTreeMap<String, BTreeMap<String, String>>,
    /// key -> view -> detections
    pub detections: BTreeMap<String, BTreeMap<String, Vec<RawDetection>>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, FixtureError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|e| FixtureError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Files in `dir` with the given extension, sorted by file stem.
fn entries(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>, FixtureError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path));
            }
        }
    }
    out.sort();
    Ok(out)
}

impl FixtureSet {
    pub fn load(dir: &Path) -> Result<Self, FixtureError> {
        if !dir.is_dir() {
            return Err(FixtureError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            });
        }
        let mut set = FixtureSet::default();
        let seg_doc = dir.join("segmenter.json");
        if seg_doc.exists() {
            set.mask_fallback = read_json::<SegmenterDoc>(&seg_doc)?.fallback;
        }
        for (key, path) in entries(&dir.join("masks"), "png")? {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let mask = BinaryMask::decode_png(&bytes).map_err(|e| FixtureError::Format {
                path: path.clone(),
                detail: e.to_string(),
            })?;
            set.masks.insert(key, mask);
        }
        for (key, path) in entries(&dir.join("proposals"), "json")? {
            set.proposals.insert(key, read_json(&path)?);
        }
        for (key, path) in entries(&dir.join("detections"), "json")? {
            set.detections.insert(key, read_json(&path)?);
        }
        Ok(set)
    }

    /// Writes the set in the directory layout [`load`](Self::load) reads.
    /// Output bytes depend only on the set's contents.
    pub fn write(&self, dir: &Path) -> Result<(), FixtureError> {
        let write = |path: PathBuf, bytes: &[u8]| -> Result<(), FixtureError> {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io_err(parent))?;
            }
            fs::write(&path, bytes).map_err(io_err(&path))
        };
        write(
            dir.join("segmenter.json"),
            pretty_json(&SegmenterDoc {
                fallback: self.mask_fallback,
            })
            .as_bytes(),
        )?;
        for (key, mask) in &self.masks {
            write(dir.join("masks").join(format!("{key}.png")), &mask.to_png())?;
        }
        for (key, doc) in &self.proposals {
            write(
                dir.join("proposals").join(format!("{key}.json")),
                pretty_json(doc).as_bytes(),
            )?;
        }
        for (key, doc) in &self.detections {
            write(
                dir.join("detections").join(format!("{key}.json")),
                pretty_json(doc).as_bytes(),
            )?;
        }
        Ok(())
    }

    /// Registers proposer text for a key and an already rendered prompt.
    pub fn add_proposal(&mut self, key: &str, rendered_prompt: &str, text: &str) {
        self.proposals
            .entry(key.to_string())
            .or_default()
            .insert(prompt_digest(rendered_prompt), text.to_string());
    }

    pub fn add_detections(&mut self, key: &str, view: &str, dets: Vec<RawDetection>) {
        self.detections
            .entry(key.to_string())
            .or_default()
            .insert(view.to_string(), dets);
    }
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("fixture documents serialize");
    s.push('\n');
    s
}

pub struct MockSegmenter {
    fixtures: Arc<FixtureSet>,
}

impl MockSegmenter {
    pub fn new(fixtures: Arc<FixtureSet>) -> Self {
        Self { fixtures }
    }

    /// Segmenter that always answers with the box rectangle.
    pub fn rectangle() -> Self {
        Self::new(Arc::new(FixtureSet::default()))
    }
}

impl Segmenter for MockSegmenter {
    fn segment(&self, frame: &Frame<'_>, bbox: &BBox) -> Result<Reply<BinaryMask>, BackendError> {
        if let Some(mask) = self.fixtures.masks.get(frame.key) {
            return Ok(Reply::immediate(mask.clone()));
        }
        match self.fixtures.mask_fallback {
            MaskFallback::Rectangle => {
                BinaryMask::rectangle(frame.image.width(), frame.image.height(), bbox)
                    .map(Reply::immediate)
                    .map_err(|e| BackendError::Protocol {
                        role: Role::Segmenter,
                        detail: e.to_string(),
                    })
            }
            MaskFallback::Miss => Err(BackendError::FixtureMiss {
                role: Role::Segmenter,
                key: frame.key.to_string(),
            }),
        }
    }
}

pub struct MockProposer {
    fixtures: Arc<FixtureSet>,
}

impl MockProposer {
    pub fn new(fixtures: Arc<FixtureSet>) -> Self {
        Self { fixtures }
    }
}

impl Proposer for MockProposer {
    fn propose(&self, frame: &Frame<'_>, prompt: &str) -> Result<Reply<RawProposal>, BackendError> {
        let digest = prompt_digest(prompt);
        self.fixtures
            .proposals
            .get(frame.key)
            .and_then(|by_prompt| by_prompt.get(&digest))
            .map(|text| {
                Reply::immediate(RawProposal {
                    text: text.clone(),
                    source: "mock".into(),
                })
            })
            .ok_or_else(|| BackendError::FixtureMiss {
                role: Role::Proposer,
                key: format!("{}/{}", frame.key, digest),
            })
    }
}

pub struct MockDetector {
    fixtures: Arc<FixtureSet>,
}

impl MockDetector {
    pub fn new(fixtures: Arc<FixtureSet>) -> Self {
        Self { fixtures }
    }
}

impl Detector for MockDetector {
    /// Returns the fixture entry verbatim; filtering is the adapter's job.
    fn detect(
        &self,
        frame: &Frame<'_>,
        _labels: &ProposalList,
        _tau: f64,
    ) -> Result<Reply<Vec<RawDetection>>, BackendError> {
        self.fixtures
            .detections
            .get(frame.key)
            .and_then(|by_view| by_view.get(frame.view.key()))
            .map(|dets| Reply::immediate(dets.clone()))
            .ok_or_else(|| BackendError::FixtureMiss {
                role: Role::Detector,
                key: format!("{}/{}", frame.key, frame.view.key()),
            })
    }
}
