use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use chrono::Utc;
use focus_core::geometry::{BBox, IsolationMode, RasterImage};
use focus_core::pipeline::Variant;
use focus_core::proposal::{ProposalList, TaskPrompt};
use serde::Serialize;
use serde_json::{json, Value};

use super::state::{spawn_run, AppState, RunManifest, RunRequest, RunStatus};
use crate::run_cmd::valid_id;

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/runs", post(create_run))
        .route("/api/runs/:id", get(get_run).delete(delete_run))
        .route("/api/runs/:id/attended.png", get(attended_png))
        .route("/api/runs/:id/rerun", post(rerun))
        .route("/api/images", get(list_images).post(upload_image))
        .layer(axum::extract::DefaultBodyLimit::max(64 * 1024 * 1024))
        .with_state(state)
}

#[derive(Debug, Serialize)]
struct FieldError {
    field: String,
    message: String,
}

fn field(field: &str, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

fn unprocessable(errors: Vec<FieldError>) -> Response {
    (
        StatusCode::UNPROCESSABLE_ENTITY,
        Json(json!({ "errors": errors })),
    )
        .into_response()
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn parse_body(body: &Bytes) -> Result<serde_json::Map<String, Value>, Box<Response>> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Box::new(unprocessable(vec![field(
            "body",
            "expected a JSON object",
        )]))),
        Err(e) => Err(Box::new(unprocessable(vec![field("body", e.to_string())]))),
    }
}

fn parse_box(v: &Value) -> Result<BBox, String> {
    let arr = v
        .as_array()
        .ok_or("expected [x_min, y_min, x_max, y_max]")?;
    if arr.len() != 4 {
        return Err(format!("expected 4 integers, got {}", arr.len()));
    }
    let mut c = [0i64; 4];
    for (slot, x) in c.iter_mut().zip(arr) {
        *slot = x.as_i64().ok_or("coordinates must be integers")?;
    }
    BBox::new(c[0], c[1], c[2], c[3]).map_err(|e| e.to_string())
}

fn parse_labels(
    v: &Value,
    name: &str,
    level: focus_core::proposal::NormalizationLevel,
) -> Result<ProposalList, FieldError> {
    let arr = v
        .as_array()
        .ok_or_else(|| field(name, "expected an array of strings"))?;
    let mut labels = Vec::with_capacity(arr.len());
    for x in arr {
        labels.push(
            x.as_str()
                .ok_or_else(|| field(name, "labels must be strings"))?,
        );
    }
    ProposalList::from_labels(labels, level)
        .map_err(|_| field(name, "needs at least one non-empty label"))
}

fn store_image(state: &AppState, image: &RasterImage) -> anyhow::Result<String> {
    let id = uuid::Uuid::new_v4().to_string();
    state.ws.write(&state.image_path(&id), &image.to_png())?;
    Ok(id)
}

fn load_catalog_image(state: &AppState, id: &str) -> Option<RasterImage> {
    if !valid_id(id) {
        return None;
    }
    RasterImage::open(&state.image_path(id)).ok()
}

async fn create_run(State(state): State<Shared>, body: Bytes) -> Response {
    let obj = match parse_body(&body) {
        Ok(o) => o,
        Err(r) => return *r,
    };
    let mut errors = Vec::new();
    let mut config = state.base.clone();

    let bbox = match obj.get("box") {
        None => {
            errors.push(field("box", "required"));
            None
        }
        Some(v) => parse_box(v).map_err(|m| errors.push(field("box", m))).ok(),
    };
    if let Some(v) = obj.get("mode") {
        match v.as_str().map(str::parse::<IsolationMode>) {
            Some(Ok(m)) => config.mode = m,
            Some(Err(m)) => errors.push(field("mode", m)),
            None => errors.push(field("mode", "expected a string")),
        }
    }
    let variant = match obj.get("variant").map(|v| v.as_str()) {
        None | Some(Some("focus")) => Variant::Focus,
        Some(Some("baseline")) => Variant::Baseline,
        _ => {
            errors.push(field("variant", "expected \"focus\" or \"baseline\""));
            Variant::Focus
        }
    };
    if let Some(p) = obj.get("prompt") {
        let task = p.get("task").and_then(Value::as_str);
        let addendum = p.get("addendum").and_then(Value::as_str).unwrap_or("");
        match task.map(|t| TaskPrompt::new(t, addendum)) {
            Some(Ok(prompt)) => config.prompt = prompt,
            _ => errors.push(field("prompt.task", "required non-empty string")),
        }
    }
    let labels = match obj.get("labels") {
        None => None,
        Some(v) => parse_labels(v, "labels", config.normalization)
            .map_err(|e| errors.push(e))
            .ok(),
    };
    let case_id = match obj.get("case_id") {
        None => None,
        Some(v) => match v.as_str() {
            Some(s) if !s.is_empty() => Some(s.to_string()),
            _ => {
                errors.push(field("case_id", "expected a non-empty string"));
                None
            }
        },
    };
    if let Err(e) = config.validate() {
        errors.push(field("mode", e.to_string()));
    }

    let image = match (obj.get("image_id"), obj.get("image_png_b64")) {
        (Some(_), Some(_)) => {
            errors.push(field(
                "image_id",
                "give image_id or image_png_b64, not both",
            ));
            None
        }
        (None, None) => {
            errors.push(field("image_id", "image_id or image_png_b64 is required"));
            None
        }
        (Some(v), None) => match v.as_str() {
            Some(id) => match load_catalog_image(&state, id) {
                Some(img) => Some((id.to_string(), img)),
                None => {
                    errors.push(field("image_id", format!("unknown image `{id}`")));
                    None
                }
            },
            None => {
                errors.push(field("image_id", "expected a string"));
                None
            }
        },
        (None, Some(v)) => {
            let decoded = v
                .as_str()
                .ok_or_else(|| "expected a base64 string".to_string())
                .and_then(|s| {
                    base64::engine::general_purpose::STANDARD
                        .decode(s)
                        .map_err(|e| e.to_string())
                })
                .and_then(|bytes| RasterImage::decode(&bytes).map_err(|e| e.to_string()));
            match decoded {
                Ok(img) => Some((String::new(), img)),
                Err(m) => {
                    errors.push(field("image_png_b64", m));
                    None
                }
            }
        }
    };
    if let (Some(b), Some((_, img))) = (&bbox, &image) {
        if let Err(e) = b.check_fits(img.width(), img.height()) {
            errors.push(field("box", e.to_string()));
        }
    }
    if !errors.is_empty() {
        return unprocessable(errors);
    }
    let (Some(bbox), Some((mut image_id, img))) = (bbox, image) else {
        unreachable!("validated above");
    };
    if image_id.is_empty() {
        image_id = match store_image(&state, &img) {
            Ok(id) => id,
            Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
        };
    }

    let run_id = uuid::Uuid::new_v4().to_string();
    let manifest = RunManifest {
        run_id: run_id.clone(),
        parent_run_id: None,
        created_at: Utc::now(),
        status: RunStatus::Pending,
        request: RunRequest {
            case_id: case_id.unwrap_or_else(|| image_id.clone()),
            image_id,
            bbox,
            variant,
            labels,
        },
        config,
        result_path: None,
        error: None,
    };
    start(state, manifest)
}

fn start(state: Shared, manifest: RunManifest) -> Response {
    if state
        .shutting_down
        .load(std::sync::atomic::Ordering::SeqCst)
    {
        return error(StatusCode::SERVICE_UNAVAILABLE, "shutting down");
    }
    let run_id = manifest.run_id.clone();
    state.insert(manifest);
    spawn_run(state, run_id.clone());
    (
        StatusCode::ACCEPTED,
        Json(json!({ "run_id": run_id, "status": RunStatus::Pending })),
    )
        .into_response()
}

async fn get_run(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let runs = state.runs.lock().unwrap();
    let Some(entry) = runs.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("no run `{id}`"));
    };
    let mut doc = serde_json::to_value(&entry.manifest).unwrap_or(Value::Null);
    if let (Some(r), Value::Object(map)) = (&entry.result, &mut doc) {
        map.insert(
            "result".into(),
            serde_json::to_value(r).unwrap_or(Value::Null),
        );
    }
    Json(doc).into_response()
}

async fn attended_png(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    let png = {
        let runs = state.runs.lock().unwrap();
        runs.get(&id)
            .and_then(|e| e.result.as_ref())
            .and_then(|r| r.attended_image.clone())
    };
    match png {
        Some(img) => ([(header::CONTENT_TYPE, "image/png")], img.to_png()).into_response(),
        None => error(
            StatusCode::NOT_FOUND,
            format!("no attended image for run `{id}`"),
        ),
    }
}

async fn rerun(State(state): State<Shared>, Path(id): Path<String>, body: Bytes) -> Response {
    let source = match state.runs.lock().unwrap().get(&id) {
        Some(e) => e.manifest.clone(),
        None => return error(StatusCode::NOT_FOUND, format!("no run `{id}`")),
    };
    if source.status != RunStatus::Done {
        return error(StatusCode::CONFLICT, format!("run `{id}` is not done"));
    }
    let obj = match parse_body(&body) {
        Ok(o) => o,
        Err(r) => return *r,
    };
    let labels = match obj.get("proposal_override") {
        None => return unprocessable(vec![field("proposal_override", "required")]),
        Some(v) => match parse_labels(v, "proposal_override", source.config.normalization) {
            Ok(l) => l,
            Err(e) => return unprocessable(vec![e]),
        },
    };
    let manifest = RunManifest {
        run_id: uuid::Uuid::new_v4().to_string(),
        parent_run_id: Some(id),
        created_at: Utc::now(),
        status: RunStatus::Pending,
        request: RunRequest {
            labels: Some(labels),
            ..source.request
        },
        config: source.config,
        result_path: None,
        error: None,
    };
    start(state, manifest)
}

async fn delete_run(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    if state.remove(&id) {
        StatusCode::NO_CONTENT.into_response()
    } else {
        error(StatusCode::NOT_FOUND, format!("no run `{id}`"))
    }
}

async fn list_images(State(state): State<Shared>) -> Response {
    let dir = state.ws.images();
    let mut images = Vec::new();
    if let Ok(entries) = std::fs::read_dir(&dir) {
        let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            if p.extension().is_none_or(|e| e != "png") {
                continue;
            }
            let Some(id) = p.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if let Ok(img) = RasterImage::open(&p) {
                images.push(json!({"image_id": id, "width": img.width(), "height": img.height()}));
            }
        }
    }
    Json(json!({ "images": images })).into_response()
}

async fn upload_image(State(state): State<Shared>, body: Bytes) -> Response {
    let img = match RasterImage::decode(&body) {
        Ok(img) => img,
        Err(e) => {
            return unprocessable(vec![field("body", format!("not a PNG or JPEG image: {e}"))])
        }
    };
    match store_image(&state, &img) {
        Ok(id) => (
            StatusCode::CREATED,
            Json(json!({"image_id": id, "width": img.width(), "height": img.height()})),
        )
            .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}")),
    }
}
