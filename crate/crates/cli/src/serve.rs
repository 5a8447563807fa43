//! Review service: a JSON API over the variants under review, persisting
//! expert annotations to a JSONL file.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use forge_core::io::{read_jsonl_lenient, to_jsonl, write_atomic};
use forge_core::release::CanonicalRecord;
use forge_core::review::ReviewRecord;
use forge_core::taxonomy::ALL_CODES;
use forge_core::ForgeError;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::CliResult;

pub struct Settings {
    pub records: Vec<CanonicalRecord>,
    pub annotations: PathBuf,
    pub host: String,
    pub port: u16,
    pub static_dir: Option<PathBuf>,
}

struct Store {
    /// Review order is the input order.
    order: Vec<String>,
    records: BTreeMap<String, CanonicalRecord>,
    /// First annotation per variant; presence removes it from the queue.
    annotations: Mutex<BTreeMap<String, ReviewRecord>>,
    /// Every line of the annotation file. Each accepted POST rewrites the
    /// file from this, so memory and disk never diverge.
    file_lines: Mutex<Vec<ReviewRecord>>,
    path: PathBuf,
}

type Shared = Arc<Store>;

const MAX_PER_PAGE: usize = 200;

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({"error": msg.into()}))).into_response()
}

fn router(store: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/api/queue", get(queue))
        .route("/api/progress", get(progress))
        .route("/api/taxonomy", get(taxonomy))
        .route("/api/variants/{id}", get(variant))
        .route("/api/variants/{id}/annotation", post(annotate))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

fn load_store(s: &Settings) -> CliResult<Store> {
    let order: Vec<String> = s.records.iter().map(|r| r.variant_id.clone()).collect();
    let records: BTreeMap<String, CanonicalRecord> =
        s.records.iter().map(|r| (r.variant_id.clone(), r.clone())).collect();
    if records.len() != order.len() {
        return Err(ForgeError::invalid("variant file repeats a variant_id").into());
    }
    let mut annotations = BTreeMap::new();
    let mut lines = Vec::new();
    if s.annotations.exists() {
        let (ok, bad) = read_jsonl_lenient::<ReviewRecord>(&s.annotations)?;
        for e in bad {
            tracing::warn!(line = e.line, "ignoring malformed annotation: {}", e.message);
        }
        for (_, rec) in ok {
            annotations.entry(rec.variant_id.clone()).or_insert_with(|| rec.clone());
            lines.push(rec);
        }
    }
    Ok(Store {
        order,
        records,
        annotations: Mutex::new(annotations),
        file_lines: Mutex::new(lines),
        path: s.annotations.clone(),
    })
}

pub fn run(settings: Settings) -> CliResult<()> {
    let store = Arc::new(load_store(&settings)?);
    let app = router(store, settings.static_dir.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ForgeError::invalid(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let addr = format!("{}:{}", settings.host, settings.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| ForgeError::invalid(format!("cannot bind {addr}: {e}")))?;
        let local: SocketAddr = listener
            .local_addr()
            .map_err(|e| ForgeError::invalid(format!("cannot bind {addr}: {e}")))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| ForgeError::invalid(format!("service failed: {e}")))?;
        Ok(())
    })
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    page: Option<usize>,
    per_page: Option<usize>,
}

fn summary(r: &CanonicalRecord) -> Value {
    json!({
        "variant_id": r.variant_id,
        "instance_id": r.instance_id,
        "dataset_name": r.dataset_name,
        "error_types": r.error_step_indices.keys().collect::<Vec<_>>(),
        "steps": r.original_steps.len(),
    })
}

/// Pending variants, i.e. those without any stored annotation; pages are 1-based.
async fn queue(State(store): State<Shared>, Query(q): Query<PageQuery>) -> Response {
    let page = q.page.unwrap_or(1);
    let per_page = q.per_page.unwrap_or(20);
    if page == 0 || per_page == 0 || per_page > MAX_PER_PAGE {
        return error(
            StatusCode::BAD_REQUEST,
            format!("page must be >= 1 and per_page in [1, {MAX_PER_PAGE}]"),
        );
    }
    let done = store.annotations.lock().expect("annotation lock");
    let pending: Vec<&String> = store.order.iter().filter(|id| !done.contains_key(*id)).collect();
    let items: Vec<Value> = pending
        .iter()
        .skip((page - 1) * per_page)
        .take(per_page)
        .map(|id| summary(&store.records[*id]))
        .collect();
    Json(json!({"page": page, "per_page": per_page, "total": pending.len(), "items": items})).into_response()
}

async fn progress(State(store): State<Shared>) -> Json<Value> {
    let done = store.annotations.lock().expect("annotation lock");
    let annotated = done.len();
    let complete = done.values().filter(|r| r.annotation_complete).count();
    Json(json!({
        "total": store.order.len(),
        "annotated": annotated,
        "complete": complete,
        "pending": store.order.len() - annotated,
    }))
}

async fn taxonomy() -> Json<Value> {
    Json(json!(ALL_CODES.iter().map(|c| c.info()).collect::<Vec<_>>()))
}

async fn variant(State(store): State<Shared>, Path(id): Path<String>) -> Response {
    let Some(record) = store.records.get(&id) else {
        return error(StatusCode::NOT_FOUND, format!("unknown variant '{id}'"));
    };
    let annotation = store.annotations.lock().expect("annotation lock").get(&id).cloned();
    let mut body = serde_json::to_value(record).unwrap_or(Value::Null);
    if let Value::Object(map) = &mut body {
        map.insert(
            "annotation".into(),
            serde_json::to_value(annotation).unwrap_or(Value::Null),
        );
    }
    Json(body).into_response()
}

async fn annotate(State(store): State<Shared>, Path(id): Path<String>, body: Bytes) -> Response {
    if !store.records.contains_key(&id) {
        return error(StatusCode::NOT_FOUND, format!("unknown variant '{id}'"));
    }
    let rec: ReviewRecord = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("malformed annotation: {e}")),
    };
    if rec.variant_id != id {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "variant_id does not match the URL");
    }
    if let Err(e) = rec.validate() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, e);
    }
    let steps = store.records[&id].original_steps.len();
    let out_of_range = rec
        .expert_error_steps
        .iter()
        .chain(rec.corrected_steps.keys())
        .any(|&i| i > steps);
    if out_of_range {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("step index beyond the {steps}-step chain"),
        );
    }
    // Lock order: annotations, then file lines.
    let mut done = store.annotations.lock().expect("annotation lock");
    if done.contains_key(&id) {
        return error(StatusCode::CONFLICT, format!("'{id}' is already annotated"));
    }
    let mut lines = store.file_lines.lock().expect("file lock");
    lines.push(rec.clone());
    let written = to_jsonl(&lines).and_then(|text| write_atomic(&store.path, text.as_bytes()));
    if let Err(e) = written {
        lines.pop();
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    done.insert(id, rec.clone());
    (StatusCode::CREATED, Json(rec)).into_response()
}
