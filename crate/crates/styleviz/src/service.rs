//! HTTP API for the rating survey.
//!
//! | route                                   | result                       |
//! |-----------------------------------------|------------------------------|
//! | `GET /api/session/{rater_id}`           | `SessionView` JSON           |
//! | `GET /api/images/{item_id}/{index}`     | image bytes                  |
//! | `POST /api/response`                    | 201 + stored response JSON   |
//! | `GET /api/export.csv`                   | CSV, admin token required    |
//!
//! Errors are JSON objects with an `error` code: `malformed` (400),
//! `validation` (422), `forbidden` or `not-assigned` (403), `not-found` or
//! `unknown-rater` (404), `conflict` (409), `internal` (500).

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use styleviz_core::generation::ManifestEntry;
use styleviz_core::sheet::CleanedSheet;
use styleviz_core::study::AssignmentPlan;
use styleviz_core::survey::{
    FavoriteImage, ImageRef, Progress, ResponseDraft, SessionItem, SessionView, SubmitError,
};

use crate::csv_io::export_csv;
use crate::images::now_rfc3339;
use crate::store::{ResponseStore, StoreError};

/// Read-only study material.
#[derive(Debug, Clone)]
pub struct SurveyData {
    pub plan: AssignmentPlan,
    pub narratives: BTreeMap<String, String>,
    /// (item_id, prompt_index) to an image file.
    pub images: BTreeMap<(String, u32), PathBuf>,
}

impl SurveyData {
    pub fn new(plan: AssignmentPlan, sheets: &[CleanedSheet], manifest: &[ManifestEntry], out_root: &Path) -> Self {
        let narratives = sheets
            .iter()
            .map(|s| (s.author_id.clone(), s.narrative.clone()))
            .collect();
        let images = manifest
            .iter()
            .filter_map(ManifestEntry::artifact)
            .map(|a| ((a.author_id.clone(), a.prompt_index), out_root.join(&a.image_path)))
            .collect();
        Self {
            plan,
            narratives,
            images,
        }
    }

    pub fn session(&self, rater_id: &str, store: &ResponseStore) -> Option<SessionView> {
        let items = self.plan.items_for(rater_id)?;
        let items: Vec<SessionItem> = items
            .iter()
            .map(|item_id| SessionItem {
                item_id: item_id.clone(),
                narrative: self.narratives.get(item_id).cloned().unwrap_or_default(),
                images: self
                    .images
                    .range((item_id.clone(), 0)..=(item_id.clone(), u32::MAX))
                    .map(|((_, idx), _)| ImageRef {
                        prompt_index: *idx,
                        label: FavoriteImage::ALL
                            .get(*idx as usize - 1)
                            .and_then(|f| f.label())
                            .map(String::from)
                            .unwrap_or_else(|| idx.to_string()),
                        url: format!("/api/images/{item_id}/{idx}"),
                    })
                    .collect(),
                submitted: store.contains(rater_id, item_id),
            })
            .collect();
        let completed = items.iter().filter(|i| i.submitted).count();
        Some(SessionView {
            rater_id: rater_id.to_owned(),
            progress: Progress {
                completed,
                total: items.len(),
            },
            items,
        })
    }
}

#[derive(Clone)]
pub struct AppState {
    pub data: Arc<SurveyData>,
    pub store: Arc<ResponseStore>,
    /// Export is refused when unset.
    pub admin_token: Option<Arc<str>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": code, "message": message.into() }),
        }
    }
}

impl From<SubmitError> for ApiError {
    fn from(e: SubmitError) -> Self {
        let status = match e {
            SubmitError::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            SubmitError::Conflict { .. } => StatusCode::CONFLICT,
            SubmitError::NotAssigned { .. } => StatusCode::FORBIDDEN,
            SubmitError::UnknownRater { .. } => StatusCode::NOT_FOUND,
        };
        let mut body = serde_json::to_value(&e).unwrap_or_else(|_| json!({ "error": e.code() }));
        if let Value::Object(map) = &mut body {
            map.entry("message").or_insert_with(|| Value::String(e.to_string()));
        }
        Self { status, body }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Submit(s) => s.into(),
            other => {
                log::error!("store failure: {other}");
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "storage failure")
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session/{rater_id}", get(get_session))
        .route("/api/images/{item_id}/{prompt_index}", get(get_image))
        .route("/api/response", post(post_response))
        .route("/api/export.csv", get(get_export))
        .with_state(state)
}

async fn get_session(
    State(state): State<AppState>,
    UrlPath(rater_id): UrlPath<String>,
) -> Result<Json<SessionView>, ApiError> {
    state
        .data
        .session(&rater_id, &state.store)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("unknown rater `{rater_id}`")))
}

pub fn content_type_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("ppm") => "image/x-portable-pixmap",
        _ => "application/octet-stream",
    }
}

async fn get_image(
    State(state): State<AppState>,
    UrlPath((item_id, prompt_index)): UrlPath<(String, u32)>,
) -> Result<Response, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("no image {item_id}/{prompt_index}"));
    let path = state
        .data
        .images
        .get(&(item_id.clone(), prompt_index))
        .ok_or_else(not_found)?;
    let bytes = tokio::fs::read(path).await.map_err(|e| {
        log::error!("cannot read {}: {e}", path.display());
        not_found()
    })?;
    Ok(([(header::CONTENT_TYPE, content_type_for(path))], bytes).into_response())
}

async fn post_response(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let draft: ResponseDraft = serde_json::from_slice(&body).map_err(|e| {
        if e.is_data() {
            ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", e.to_string())
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, "malformed", e.to_string())
        }
    })?;
    let store = state.store.clone();
    let data = state.data.clone();
    let stored = tokio::task::spawn_blocking(move || store.submit(draft, &data.plan, now_rfc3339()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(stored)).into_response())
}

#[derive(Debug, Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

fn presented_token<'a>(headers: &'a HeaderMap, query: &'a TokenQuery) -> Option<&'a str> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .or(query.token.as_deref())
}

async fn get_export(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(query): Query<TokenQuery>,
) -> Result<Response, ApiError> {
    let authorized = match (&state.admin_token, presented_token(&headers, &query)) {
        (Some(expected), Some(given)) => expected.as_bytes() == given.as_bytes(),
        _ => false,
    };
    if !authorized {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "admin token required"));
    }
    let csv = export_csv(&state.store.snapshot());
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

/// Serves until ctrl-c.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("survey service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
