use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use focus_core::backend::Backends;
use focus_core::geometry::{BBox, RasterImage};
use focus_core::pipeline::{Pipeline, PipelineConfig, PipelineResult, RunInput, Stage, Variant};
use focus_core::proposal::ProposalList;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::run_cmd::persist;
use crate::workspace::Workspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl RunStatus {
    fn can_become(self, next: RunStatus) -> bool {
        matches!(
            (self, next),
            (RunStatus::Pending, RunStatus::Running)
                | (RunStatus::Pending, RunStatus::Failed)
                | (RunStatus::Running, RunStatus::Done)
                | (RunStatus::Running, RunStatus::Failed)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub message: String,
}

/// What was asked for, kept so the run can be repeated with edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub image_id: String,
    pub case_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<ProposalList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_run_id: Option<String>,
    pub created_at: DateTime<Utc>,
    pub status: RunStatus,
    pub request: RunRequest,
    pub config: PipelineConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RunError>,
}

pub struct RunEntry {
    pub manifest: RunManifest,
    pub result: Option<PipelineResult>,
}

pub struct AppState {
    pub ws: Workspace,
    pub base: PipelineConfig,
    pub backends: Backends,
    pub runs: Mutex<BTreeMap<String, RunEntry>>,
    pub permits: Arc<Semaphore>,
    pub shutting_down: AtomicBool,
}

impl AppState {
    pub fn new(ws: Workspace, base: PipelineConfig, backends: Backends) -> Self {
        let permits = Arc::new(Semaphore::new(base.parallelism.max(1)));
        Self {
            ws,
            base,
            backends,
            runs: Mutex::new(BTreeMap::new()),
            permits,
            shutting_down: AtomicBool::new(false),
        }
    }

    pub fn image_path(&self, image_id: &str) -> PathBuf {
        self.ws.images().join(format!("{image_id}.png"))
    }

    fn persist_manifest(&self, m: &RunManifest) {
        let path = self.ws.runs().join(format!("{}.json", m.run_id));
        let text = serde_json::to_string_pretty(m).map(|s| s + "\n");
        if let Err(e) = text
            .map_err(anyhow::Error::from)
            .and_then(|t| self.ws.write(&path, t.as_bytes()))
        {
            tracing::warn!(run = %m.run_id, "could not persist manifest: {e:#}");
        }
    }

    pub fn insert(&self, manifest: RunManifest) {
        self.persist_manifest(&manifest);
        let id = manifest.run_id.clone();
        self.runs.lock().unwrap().insert(
            id,
            RunEntry {
                manifest,
                result: None,
            },
        );
    }

    /// Moves a run to `next`. Returns false when the run is gone or the
    /// transition is not allowed.
    pub fn transition(
        &self,
        id: &str,
        next: RunStatus,
        result: Option<PipelineResult>,
        error: Option<RunError>,
    ) -> bool {
        let mut runs = self.runs.lock().unwrap();
        let Some(entry) = runs.get_mut(id) else {
            return false;
        };
        if !entry.manifest.status.can_become(next) {
            return false;
        }
        entry.manifest.status = next;
        if let Some(mut r) = result {
            match persist(&self.ws, id, &mut r) {
                Ok(path) => entry.manifest.result_path = Some(self.ws.relative(&path)),
                Err(e) => {
                    entry.manifest.status = RunStatus::Failed;
                    entry.manifest.error = Some(RunError {
                        stage: None,
                        message: format!("persisting result: {e:#}"),
                    });
                }
            }
            if entry.manifest.status == RunStatus::Done {
                entry.result = Some(r);
            }
        }
        if error.is_some() {
            entry.manifest.error = error;
        }
        self.persist_manifest(&entry.manifest);
        true
    }

    pub fn remove(&self, id: &str) -> bool {
        let removed = self.runs.lock().unwrap().remove(id).is_some();
        if removed {
            for path in [
                self.ws.runs().join(format!("{id}.json")),
                self.ws.results().join(format!("{id}.json")),
                self.ws.attended().join(format!("{id}.png")),
            ] {
                let _ = std::fs::remove_file(path);
            }
        }
        removed
    }

    /// Marks every unfinished run failed; used when the service stops.
    pub fn fail_unfinished(&self, why: &str) -> usize {
        let ids: Vec<String> = self
            .runs
            .lock()
            .unwrap()
            .values()
            .filter(|e| matches!(e.manifest.status, RunStatus::Pending | RunStatus::Running))
            .map(|e| e.manifest.run_id.clone())
            .collect();
        let mut n = 0;
        for id in ids {
            let error = RunError {
                stage: None,
                message: why.to_string(),
            };
            if self.transition(&id, RunStatus::Failed, None, Some(error)) {
                n += 1;
            }
        }
        n
    }

    pub fn unfinished(&self) -> usize {
        self.runs
            .lock()
            .unwrap()
            .values()
            .filter(|e| matches!(e.manifest.status, RunStatus::Pending | RunStatus::Running))
            .count()
    }
}

fn execute(state: &AppState, manifest: &RunManifest) -> Result<PipelineResult, RunError> {
    let plain = |message: String| RunError {
        stage: None,
        message,
    };
    let pipeline = Pipeline::with_backends(manifest.config.clone(), state.backends.clone())
        .map_err(|e| plain(e.to_string()))?;
    let req = &manifest.request;
    let image =
        RasterImage::open(&state.image_path(&req.image_id)).map_err(|e| plain(e.to_string()))?;
    let input = RunInput {
        case_id: &req.case_id,
        image_id: &req.image_id,
        image: &image,
        bbox: req.bbox,
    };
    let run = match (req.variant, &req.labels) {
        (Variant::Focus, None) => pipeline.run(&input),
        (Variant::Focus, Some(l)) => pipeline.run_with_proposal(&input, l),
        (Variant::Baseline, Some(l)) => pipeline.run_baseline(&input, l),
        (Variant::Baseline, None) => pipeline
            .propose_only(&input)
            .and_then(|l| pipeline.run_baseline(&input, &l)),
    };
    run.map_err(|e| RunError {
        stage: Some(e.stage),
        message: e.to_string(),
    })
}

/// Queues a run. It starts once a permit is free and never after shutdown
/// has begun.
pub fn spawn_run(state: Arc<AppState>, run_id: String) {
    tokio::spawn(async move {
        let Ok(permit) = state.permits.clone().acquire_owned().await else {
            return;
        };
        if state.shutting_down.load(Ordering::SeqCst) {
            return;
        }
        if !state.transition(&run_id, RunStatus::Running, None, None) {
            return;
        }
        let manifest = match state.runs.lock().unwrap().get(&run_id) {
            Some(e) => e.manifest.clone(),
            None => return,
        };
        let worker = state.clone();
        let outcome = tokio::task::spawn_blocking(move || execute(&worker, &manifest)).await;
        drop(permit);
        match outcome {
            Ok(Ok(result)) => {
                state.transition(&run_id, RunStatus::Done, Some(result), None);
            }
            Ok(Err(error)) => {
                state.transition(&run_id, RunStatus::Failed, None, Some(error));
            }
            Err(join) => {
                let error = RunError {
                    stage: None,
                    message: format!("run aborted: {join}"),
                };
                state.transition(&run_id, RunStatus::Failed, None, Some(error));
            }
        }
    });
}
