//! Local HTTP service backing the annotation UI.
//!
//! | method | path            | response                                        |
//! |--------|-----------------|-------------------------------------------------|
//! | GET    | `/frames`       | `{"count": n, "files": [...]}`                  |
//! | GET    | `/frames/{i}`   | image bytes of frame `i` (1-based), 404 if out of range |
//! | GET    | `/meta`         | `{"objects": K or null, "horizon": n}`          |
//! | POST   | `/annotation`   | validates, writes the file, `{"ok": true, ...}` or 400 |
//! | POST   | `/masks/{name}` | stores a binary mask image next to the output   |
//!
//! Anything else is served from the optional UI bundle directory.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::Mutex;

use super::{insert_missing_commas, parse_annotation_value, AnnotationError, TrailingMotion};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub frame_dir: PathBuf,
    pub out_path: PathBuf,
    /// Object count K; when unknown it is taken from the posted mask list
    /// (one gripper mask followed by one mask per object).
    pub objects: Option<usize>,
    pub ui_dir: Option<PathBuf>,
}

struct AppState {
    cfg: ServiceConfig,
    frames: Vec<PathBuf>,
    write_lock: Mutex<()>,
}

const IMAGE_EXTS: &[&str] = &["png", "jpg", "jpeg", "bmp", "ppm"];

/// Image files of `dir` in name order.
pub fn list_frames(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    frames.sort();
    Ok(frames)
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

fn error_body(status: StatusCode, class: &str, message: &str) -> Response {
    (
        status,
        Json(json!({"ok": false, "error": class, "message": message})),
    )
        .into_response()
}

pub fn router(cfg: ServiceConfig) -> std::io::Result<Router> {
    let frames = list_frames(&cfg.frame_dir)?;
    let state = Arc::new(AppState {
        cfg,
        frames,
        write_lock: Mutex::new(()),
    });
    Ok(Router::new()
        .route("/frames", get(frames_index))
        .route("/frames/{i}", get(frame_image))
        .route("/meta", get(meta))
        .route("/annotation", post(post_annotation))
        .route("/masks/{name}", post(post_mask))
        .fallback(static_file)
        .with_state(state))
}

/// Serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig, port: u16) -> std::io::Result<()> {
    let app = router(cfg)?;
    let addr = SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{addr}");
    axum::serve(listener, app).await
}

async fn frames_index(State(st): State<Arc<AppState>>) -> Json<Value> {
    let files: Vec<String> = st
        .frames
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    Json(json!({"count": files.len(), "files": files}))
}

async fn frame_image(State(st): State<Arc<AppState>>, UrlPath(i): UrlPath<String>) -> Response {
    let idx = match i.parse::<usize>() {
        Ok(n) if n >= 1 && n <= st.frames.len() => n - 1,
        _ => {
            return error_body(
                StatusCode::NOT_FOUND,
                "NotFound",
                &format!("frame {i} not in 1..={}", st.frames.len()),
            )
        }
    };
    let path = &st.frames[idx];
    match tokio::fs::read(path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(path))], bytes).into_response(),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "IoError", &e.to_string()),
    }
}

async fn meta(State(st): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({"objects": st.cfg.objects, "horizon": st.frames.len()}))
}

async fn post_annotation(State(st): State<Arc<AppState>>, body: Bytes) -> Response {
    let text = String::from_utf8_lossy(&body);
    let parsed = serde_json::from_str(&text).or_else(|e| serde_json::from_str(&insert_missing_commas(&text)).map_err(|_| e));
    let value: Value = match parsed {
        Ok(v) => v,
        Err(e) => {
            return error_body(
                StatusCode::BAD_REQUEST,
                "SchemaError",
                &format!("invalid JSON: {e}"),
            )
        }
    };
    let objects = st.cfg.objects.unwrap_or_else(|| {
        value
            .get("masks")
            .and_then(Value::as_array)
            .map_or(0, |m| m.len().saturating_sub(1))
    });
    let set = match parse_annotation_value(&value, objects, st.frames.len(), TrailingMotion::Reject)
    {
        Ok(s) => s,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, e.class(), &e.to_string()),
    };
    let _guard = st.write_lock.lock().await;
    let text = set.to_json_string() + "\n";
    if let Err(e) = tokio::fs::write(&st.cfg.out_path, text).await {
        let err = AnnotationError::Io(e.to_string());
        return error_body(StatusCode::INTERNAL_SERVER_ERROR, err.class(), &err.to_string());
    }
    Json(json!({
        "ok": true,
        "segments": set.segments.len(),
        "skills": set.skill_count(),
        "path": st.cfg.out_path.display().to_string(),
    }))
    .into_response()
}

fn safe_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

async fn post_mask(
    State(st): State<Arc<AppState>>,
    UrlPath(name): UrlPath<String>,
    body: Bytes,
) -> Response {
    if !safe_name(&name) {
        return error_body(StatusCode::BAD_REQUEST, "SchemaError", "invalid mask name");
    }
    let dir = st
        .cfg
        .out_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default()
        .join("masks");
    let _guard = st.write_lock.lock().await;
    if let Err(e) = tokio::fs::create_dir_all(&dir).await {
        return error_body(StatusCode::INTERNAL_SERVER_ERROR, "IoError", &e.to_string());
    }
    match tokio::fs::write(dir.join(&name), &body).await {
        Ok(()) => Json(json!({"ok": true, "name": name, "bytes": body.len()})).into_response(),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "IoError", &e.to_string()),
    }
}

async fn static_file(State(st): State<Arc<AppState>>, uri: Uri) -> Response {
    let Some(root) = &st.cfg.ui_dir else {
        return error_body(StatusCode::NOT_FOUND, "NotFound", uri.path());
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    if rel.split('/').any(|part| part == ".." || part.is_empty()) {
        return error_body(StatusCode::NOT_FOUND, "NotFound", uri.path());
    }
    let path = root.join(rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => error_body(StatusCode::NOT_FOUND, "NotFound", uri.path()),
    }
}
