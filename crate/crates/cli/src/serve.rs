//! HTTP API for the review UI.
//!
//! | method | path                       |                                         |
//! |--------|----------------------------|-----------------------------------------|
//! | GET    | `/api/items`               | `task`, `stride`, `undecided_only`, `page`, `per_page`, `reveal` |
//! | GET    | `/api/items/{id}`          | `reveal`                                |
//! | GET    | `/frames/{path}`           | image bytes under `frames/`, `sdf/`, `dataset/` |
//! | POST   | `/api/items/{id}/decision` | `{verdict, note, annotator}`            |
//! | GET    | `/api/export`              | manifests minus rejected/flagged items  |
//!
//! Errors are `{"error": <code>, "detail": <message>}`. Answer keys are
//! withheld unless `reveal=true`.

use std::collections::HashMap;
use std::io;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use sdf_forge_core::benchgen::{NfsItem, TcvItem};
use sdf_forge_core::jsonl::read_jsonl_file;
use sdf_forge_core::review::{export, latest_decisions, DecisionLog, ReviewDecision, ReviewError, Verdict};
use sdf_forge_core::sftdata::SftItem;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::Mutex;

const DEFAULT_PER_PAGE: usize = 20;
const MAX_PER_PAGE: usize = 200;
const SERVABLE_DIRS: [&str; 3] = ["frames", "sdf", "dataset"];

#[derive(Debug)]
enum ItemRef {
    Nfs(usize),
    Tcv(usize),
    Sft(usize),
}

pub struct AppState {
    root: PathBuf,
    nfs: Vec<NfsItem>,
    tcv: Vec<TcvItem>,
    sft: Vec<SftItem>,
    order: Vec<(String, ItemRef)>,
    by_id: HashMap<String, usize>,
    log: DecisionLog,
    /// In-memory mirror of the log; the lock also serializes appends.
    decisions: Mutex<Vec<ReviewDecision>>,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("address {0} is already in use")]
    AddrInUse(SocketAddr),
    #[error("{0}")]
    Load(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl AppState {
    /// Load manifests under `root`. Benchmark manifests are required; the SFT
    /// manifest is optional.
    pub fn load(root: &Path) -> Result<Self, ServeError> {
        let load_err = |p: &Path, e: &dyn std::fmt::Display| ServeError::Load(format!("{}: {e}", p.display()));
        let nfs_path = root.join("bench/nfs.jsonl");
        let tcv_path = root.join("bench/tcv.jsonl");
        let nfs: Vec<NfsItem> = read_jsonl_file(&nfs_path).map_err(|e| load_err(&nfs_path, &e))?;
        let tcv: Vec<TcvItem> = read_jsonl_file(&tcv_path).map_err(|e| load_err(&tcv_path, &e))?;
        let sft_path = root.join("dataset/manifest.jsonl");
        let sft: Vec<SftItem> = if sft_path.exists() {
            read_jsonl_file(&sft_path).map_err(|e| load_err(&sft_path, &e))?
        } else {
            Vec::new()
        };
        let mut order = Vec::new();
        order.extend(nfs.iter().enumerate().map(|(i, x)| (x.id.clone(), ItemRef::Nfs(i))));
        order.extend(tcv.iter().enumerate().map(|(i, x)| (x.id.clone(), ItemRef::Tcv(i))));
        order.extend(sft.iter().enumerate().map(|(i, x)| (x.id.clone(), ItemRef::Sft(i))));
        let mut by_id = HashMap::new();
        for (k, (id, _)) in order.iter().enumerate() {
            if by_id.insert(id.clone(), k).is_some() {
                return Err(ServeError::Load(format!("duplicate item id `{id}`")));
            }
        }
        let log = DecisionLog::at_root(root);
        let decisions = log.read().map_err(|e| load_err(log.path(), &e))?;
        Ok(Self {
            root: root.to_path_buf(),
            nfs,
            tcv,
            sft,
            order,
            by_id,
            log,
            decisions: Mutex::new(decisions),
        })
    }

    fn item_json(&self, r: &ItemRef, reveal: bool, decisions: &[&ReviewDecision]) -> Value {
        let url = |p: &String| format!("/frames/{p}");
        let mut v = match r {
            ItemRef::Nfs(i) => {
                let x = &self.nfs[*i];
                let mut v = json!({
                    "id": x.id, "task": "nfs", "video": x.video, "stride": x.stride,
                    "frames": x.context.iter().map(url).collect::<Vec<_>>(),
                    "options": x.options.iter().map(url).collect::<Vec<_>>(),
                });
                if reveal {
                    v["answer"] = json!(x.answer);
                    v["distractor_sims"] = json!(x.distractor_sims);
                }
                v
            }
            ItemRef::Tcv(i) => {
                let x = &self.tcv[*i];
                let mut v = json!({
                    "id": x.id, "task": "tcv", "video": x.video, "stride": x.stride,
                    "frames": x.frames.iter().map(url).collect::<Vec<_>>(),
                    "options": [],
                });
                if reveal {
                    v["label"] = json!(x.label);
                    v["corrupt_pos"] = json!(x.corrupt_pos);
                }
                v
            }
            ItemRef::Sft(i) => {
                let x = &self.sft[*i];
                let mut v = json!({
                    "id": x.id, "task": x.task, "video": x.video, "stride": null,
                    "frames": x.frames.iter().map(|f| json!({"url": url(&f.path), "kind": f.kind})).collect::<Vec<_>>(),
                    "options": x.candidates.iter().map(|f| url(&f.path)).collect::<Vec<_>>(),
                    "question": x.question,
                });
                if reveal {
                    v["answer"] = json!(x.answer);
                }
                v
            }
        };
        v["decisions"] = json!(decisions);
        v
    }

    fn task_name(&self, r: &ItemRef) -> &'static str {
        match r {
            ItemRef::Nfs(_) => "nfs",
            ItemRef::Tcv(_) => "tcv",
            ItemRef::Sft(i) => self.sft[*i].task.name(),
        }
    }

    fn stride(&self, r: &ItemRef) -> Option<usize> {
        match r {
            ItemRef::Nfs(i) => Some(self.nfs[*i].stride),
            ItemRef::Tcv(i) => Some(self.tcv[*i].stride),
            ItemRef::Sft(_) => None,
        }
    }
}

pub struct ApiError {
    status: StatusCode,
    error: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            error,
            detail: detail.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.error, "detail": self.detail}))).into_response()
    }
}

fn not_found(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no item `{id}`"))
}

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    task: Option<String>,
    stride: Option<usize>,
    #[serde(default)]
    undecided_only: bool,
    page: Option<usize>,
    per_page: Option<usize>,
    #[serde(default)]
    reveal: bool,
}

async fn list_items(
    State(st): State<Arc<AppState>>,
    q: Result<Query<ListQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Value>, ApiError> {
    let Query(q) = q.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_query", e.body_text()))?;
    if let Some(t) = &q.task {
        let known = ["nfs", "tcv", "sft", "dynamic_perception", "sdf_cot", "sft_nfs", "sft_tcv"];
        if !known.contains(&t.as_str()) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_query", format!("unknown task `{t}`")));
        }
    }
    let page = q.page.unwrap_or(1);
    if page == 0 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_query", "page is 1-based"));
    }
    let per_page = q.per_page.unwrap_or(DEFAULT_PER_PAGE).clamp(1, MAX_PER_PAGE);
    let decisions = st.decisions.lock().await;
    let latest = latest_decisions(&decisions);
    let mut per_item: HashMap<&str, Vec<&ReviewDecision>> = HashMap::new();
    for d in latest.values() {
        per_item.entry(d.item.as_str()).or_default().push(d);
    }
    for v in per_item.values_mut() {
        v.sort_by(|a, b| a.annotator.cmp(&b.annotator));
    }
    let matches = |r: &ItemRef| -> bool {
        let name = st.task_name(r);
        match q.task.as_deref() {
            None => true,
            Some("sft") => matches!(r, ItemRef::Sft(_)),
            Some("sft_nfs") => matches!(r, ItemRef::Sft(_)) && name == "nfs",
            Some("sft_tcv") => matches!(r, ItemRef::Sft(_)) && name == "tcv",
            Some("nfs") => matches!(r, ItemRef::Nfs(_)),
            Some("tcv") => matches!(r, ItemRef::Tcv(_)),
            Some(t) => name == t,
        }
    };
    let selected: Vec<&(String, ItemRef)> = st
        .order
        .iter()
        .filter(|(_, r)| matches(r))
        .filter(|(_, r)| q.stride.is_none() || st.stride(r) == q.stride)
        .filter(|(id, _)| !q.undecided_only || !per_item.contains_key(id.as_str()))
        .collect();
    let total = selected.len();
    let items: Vec<Value> = selected
        .into_iter()
        .skip((page - 1) * per_page)
        .take(per_page)
        .map(|(id, r)| {
            let ds = per_item.get(id.as_str()).cloned().unwrap_or_default();
            st.item_json(r, q.reveal, &ds)
        })
        .collect();
    Ok(Json(json!({"items": items, "page": page, "per_page": per_page, "total": total})))
}

#[derive(Debug, Deserialize)]
pub struct RevealQuery {
    #[serde(default)]
    reveal: bool,
}

async fn get_item(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RevealQuery>,
) -> Result<Json<Value>, ApiError> {
    let k = *st.by_id.get(&id).ok_or_else(|| not_found(&id))?;
    let decisions = st.decisions.lock().await;
    let mut ds: Vec<&ReviewDecision> = latest_decisions(&decisions)
        .into_values()
        .filter(|d| d.item == id)
        .collect();
    ds.sort_by(|a, b| a.annotator.cmp(&b.annotator));
    Ok(Json(st.item_json(&st.order[k].1, q.reveal, &ds)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionBody {
    verdict: Verdict,
    #[serde(default)]
    note: String,
    annotator: String,
}

async fn post_decision(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> Result<(StatusCode, Json<ReviewDecision>), ApiError> {
    let Json(body) = body.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_body", e.body_text()))?;
    if !st.by_id.contains_key(&id) {
        return Err(not_found(&id));
    }
    let d = ReviewDecision {
        item: id,
        verdict: body.verdict,
        note: body.note,
        annotator: body.annotator,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
    };
    let mut decisions = st.decisions.lock().await;
    match st.log.append(&d) {
        Ok(()) => {}
        Err(e @ (ReviewError::MissingNote | ReviewError::MissingAnnotator)) => {
            return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_decision", e.to_string()))
        }
        Err(e) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "log_write_failed", e.to_string())),
    }
    decisions.push(d.clone());
    Ok((StatusCode::CREATED, Json(d)))
}

async fn get_export(State(st): State<Arc<AppState>>) -> Json<Value> {
    let decisions = st.decisions.lock().await;
    Json(json!(export(&st.nfs, &st.tcv, &decisions)))
}

/// Resolve a request path under the root, refusing anything that could
/// escape it.
fn safe_join(root: &Path, rel: &str) -> Option<PathBuf> {
    let p = Path::new(rel);
    let mut comps = p.components();
    let first = match comps.next()? {
        Component::Normal(c) => c.to_str()?,
        _ => return None,
    };
    if !SERVABLE_DIRS.contains(&first) {
        return None;
    }
    if !comps.all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(p))
}

async fn get_frame(State(st): State<Arc<AppState>>, UrlPath(path): UrlPath<String>) -> Result<Response, ApiError> {
    let full = safe_join(&st.root, &path)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad_path", format!("refusing path `{path}`")))?;
    let bytes = tokio::fs::read(&full)
        .await
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no file `{path}`")))?;
    let ctype = match full.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, ctype)], bytes).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/items", get(list_items))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/decision", post(post_decision))
        .route("/api/export", get(get_export))
        .route("/frames/{*path}", get(get_frame))
        .fallback(fallback)
        .with_state(state)
}

/// Bind and serve until the process is stopped.
pub async fn serve(root: &Path, addr: SocketAddr) -> Result<(), ServeError> {
    let state = Arc::new(AppState::load(root)?);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == io::ErrorKind::AddrInUse {
            ServeError::AddrInUse(addr)
        } else {
            ServeError::Io(e)
        }
    })?;
    log::info!("serving {} on http://{}", root.display(), listener.local_addr().map_err(ServeError::Io)?);
    axum::serve(listener, router(state)).await.map_err(ServeError::Io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traversal_is_refused() {
        let root = Path::new("/data");
        assert!(safe_join(root, "frames/v/0001.png").is_some());
        assert!(safe_join(root, "sdf/v/0001.png").is_some());
        for bad in ["../etc/passwd", "frames/../../x", "/etc/passwd", "bench/nfs.jsonl", ""] {
            assert!(safe_join(root, bad).is_none(), "{bad}");
        }
    }
}
