use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendSet;
use crate::geometry::{ContainmentPolicy, IsolationMode, Rgb};
use crate::proposal::{NormalizationLevel, TaskPrompt};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config document {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("loading backends: {0}")]
    Backend(#[from] crate::backend::FixtureError),
}

/// Everything that determines a pipeline run.
///
/// Config documents are JSON with every field optional; missing fields take
/// the defaults below. Relative fixture paths resolve against the document's
/// directory. A `prompt_file` key may replace the inline `prompt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: IsolationMode,
    pub fill: Rgb,
    pub base_tau: f64,
    pub containment: ContainmentPolicy,
    pub prompt: TaskPrompt,
    pub normalization: NormalizationLevel,
    pub backends: BackendSet,
    pub parallelism: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: IsolationMode::SegmentMask,
            fill: Rgb::BLACK,
            base_tau: 0.1,
            containment: ContainmentPolicy::CenterIn,
            prompt: TaskPrompt::default(),
            normalization: NormalizationLevel::Conservative,
            backends: BackendSet::all_mock("fixtures"),
            parallelism: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.base_tau) {
            return Err(ConfigError::Invalid(format!(
                "base_tau {} outside [0, 1]",
                self.base_tau
            )));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.mode == IsolationMode::SegmentMask && self.backends.segmenter.is_none() {
            return Err(ConfigError::Invalid(
                "segment_mask mode needs a segmenter backend".into(),
            ));
        }
        self.containment.validate().map_err(ConfigError::Invalid)?;
        self.prompt
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for endpoint in self.backends.endpoints() {
            endpoint
                .spec
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("{}: {e}", endpoint.role)))?;
        }
        Ok(())
    }

    /// Parses a config document. `base` resolves relative paths.
    pub fn from_json(text: &str, base: &Path, origin: &Path) -> Result<Self, ConfigError> {
        let parse_err = |detail: String| ConfigError::Parse {
            path: origin.to_path_buf(),
            detail,
        };
        let mut doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let prompt_file = match doc.as_object_mut() {
            Some(obj) => obj.remove("prompt_file"),
            None => return Err(parse_err("expected a JSON object".into())),
        };
        let mut config: PipelineConfig =
            serde_json::from_value(doc).map_err(|e| parse_err(e.to_string()))?;
        if let Some(file) = prompt_file {
            let rel = file
                .as_str()
                .ok_or_else(|| parse_err("prompt_file must be a string".into()))?;
            config.prompt = load_prompt_file(&base.join(rel))?;
        }
        config.backends.resolve_paths(base);
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base, path)
    }
}

pub fn load_prompt_file(path: &Path) -> Result<TaskPrompt, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TaskPrompt::parse_file(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
