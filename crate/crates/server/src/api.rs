//! HTTP routes over a shared [`Platform`].
//!
//! Every response body is canonical JSON, so identical state always yields
//! identical bytes. Errors carry `{code, message}` with a stable code.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use remixhub_core::canonical;
use remixhub_core::lineage::Direction;
use remixhub_core::platform::{ErrorClass, Platform, PlatformError};
use remixhub_core::participation::Window;
use remixhub_core::{ProjectId, Timestamp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Depth used by lineage queries that do not name one.
pub const DEFAULT_LINEAGE_DEPTH: usize = 5;

pub type AppState = Arc<Platform>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl From<PlatformError> for ApiError {
    fn from(e: PlatformError) -> Self {
        let status = match e.class() {
            ErrorClass::Invalid => StatusCode::BAD_REQUEST,
            ErrorClass::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorClass::Forbidden => StatusCode::FORBIDDEN,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Conflict => StatusCode::CONFLICT,
            ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, e.code(), e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json(
            self.status,
            &ErrorBody {
                code: &self.code,
                message: &self.message,
            },
        )
    }
}

type ApiResult = Result<Response, ApiError>;

fn json<T: Serialize>(status: StatusCode, body: &T) -> Response {
    let bytes = canonical::to_vec(body).expect("response bodies serialize");
    let mut response = (status, bytes).into_response();
    response
        .headers_mut()
        .insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    response
}

fn ok<T: Serialize>(body: &T) -> ApiResult {
    Ok(json(StatusCode::OK, body))
}

fn created<T: Serialize>(body: &T) -> ApiResult {
    Ok(json(StatusCode::CREATED, body))
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request("MalformedRequest", e.to_string()))
}

/// Runs a platform call off the async workers; commits fsync.
async fn blocking<T, F>(platform: &AppState, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&Platform) -> Result<T, PlatformError> + Send + 'static,
    T: Send + 'static,
{
    let platform = platform.clone();
    tokio::task::spawn_blocking(move || f(&platform))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn bearer(parts: &Parts) -> Result<Option<&str>, ApiError> {
    let Some(value) = parts.headers.get(header::AUTHORIZATION) else {
        return Ok(None);
    };
    value
        .to_str()
        .ok()
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| Some(t.trim()))
        .ok_or_else(|| ApiError::from(PlatformError::Unauthorized))
}

/// The authenticated caller; rejects the request without a valid token.
pub struct Actor(pub String);

impl FromRequestParts<AppState> for Actor {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        match bearer(parts)? {
            Some(token) => Ok(Actor(state.authenticate(token)?)),
            None => Err(PlatformError::Unauthorized.into()),
        }
    }
}

/// The caller if a token was sent. A token that is sent must be valid.
pub struct MaybeActor(pub Option<String>);

impl FromRequestParts<AppState> for MaybeActor {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        match bearer(parts)? {
            Some(token) => Ok(MaybeActor(Some(state.authenticate(token)?))),
            None => Ok(MaybeActor(None)),
        }
    }
}

pub fn router(platform: AppState, max_body_bytes: usize) -> Router {
    let api = Router::new()
        .route("/users", post(create_user))
        .route("/users/{name}", get(user_profile))
        .route("/users/{name}/friends", post(add_friend))
        .route("/projects", post(upload))
        .route("/projects/{id}", get(project_summary))
        .route("/projects/{id}/file", get(project_file))
        .route("/projects/{id}/lineage", get(lineage))
        .route("/projects/{id}/tags", post(tag))
        .route("/projects/{id}/comments", post(comment))
        .route("/projects/{id}/rating", post(rate))
        .route("/projects/{id}/feature", post(feature))
        .route("/galleries", post(create_gallery))
        .route("/galleries/{id}", get(gallery))
        .route("/galleries/{id}/projects", post(add_to_gallery))
        .route("/front", get(front))
        .route("/stats", get(stats))
        .route("/health", get(health));
    Router::new()
        .nest("/api", api)
        .route("/health", get(health))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(platform)
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route")
}

async fn health() -> ApiResult {
    ok(&serde_json::json!({ "status": "ok" }))
}

fn project_id(raw: &str) -> Result<ProjectId, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::bad_request("MalformedRequest", format!("invalid id {raw:?}")))
}

#[derive(Deserialize)]
struct NewUser {
    username: String,
}

#[derive(Serialize)]
struct IssuedToken {
    username: String,
    token: String,
}

async fn create_user(State(p): State<AppState>, bytes: Bytes) -> ApiResult {
    let req: NewUser = body(&bytes)?;
    let (user, token) = blocking(&p, move |p| p.create_user(&req.username)).await?;
    created(&IssuedToken {
        username: user.username,
        token,
    })
}

async fn user_profile(State(p): State<AppState>, Path(name): Path<String>) -> ApiResult {
    ok(&p.user_profile(&name)?)
}

#[derive(Deserialize)]
struct FriendRequest {
    to: String,
}

async fn add_friend(State(p): State<AppState>, Actor(actor): Actor, Path(name): Path<String>, bytes: Bytes) -> ApiResult {
    let req: FriendRequest = body(&bytes)?;
    if actor != name {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "Forbidden",
            format!("{actor} cannot add friends for {name}"),
        ));
    }
    let link = blocking(&p, move |p| p.add_friend(&actor, &req.to)).await?;
    created(&link)
}

async fn upload(State(p): State<AppState>, Actor(actor): Actor, bytes: Bytes) -> ApiResult {
    let outcome = blocking(&p, move |p| p.upload(&bytes, &actor)).await?;
    // Nothing new is created for a duplicate.
    let status = if outcome.duplicate_of.is_some() {
        StatusCode::OK
    } else {
        StatusCode::CREATED
    };
    Ok(json(status, &outcome))
}

async fn project_summary(State(p): State<AppState>, MaybeActor(viewer): MaybeActor, Path(id): Path<String>) -> ApiResult {
    let id = project_id(&id)?;
    let summary = blocking(&p, move |p| p.view_project(id, viewer.as_deref())).await?;
    ok(&summary)
}

async fn project_file(State(p): State<AppState>, Actor(actor): Actor, Path(id): Path<String>) -> ApiResult {
    let id = project_id(&id)?;
    let bytes = blocking(&p, move |p| p.fetch_project_file(id, &actor)).await?;
    let mut response = (StatusCode::OK, bytes).into_response();
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    if let Ok(v) = HeaderValue::from_str(&format!("attachment; filename=\"{id}.pmp\"")) {
        headers.insert(header::CONTENT_DISPOSITION, v);
    }
    Ok(response)
}

async fn lineage(State(p): State<AppState>, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let id = project_id(&id)?;
    let direction = match q.get("direction").map(String::as_str) {
        None | Some("ancestors") => Direction::Ancestors,
        Some("descendants") => Direction::Descendants,
        Some(other) => {
            return Err(ApiError::bad_request(
                "MalformedRequest",
                format!("direction must be ancestors or descendants, got {other:?}"),
            ))
        }
    };
    let depth = match q.get("depth") {
        None => DEFAULT_LINEAGE_DEPTH,
        Some(d) => d
            .parse()
            .map_err(|_| ApiError::bad_request("MalformedRequest", format!("invalid depth {d:?}")))?,
    };
    ok(&p.lineage(id, direction, depth)?)
}

#[derive(Deserialize)]
struct TagRequest {
    label: String,
}

async fn tag(State(p): State<AppState>, Actor(actor): Actor, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let id = project_id(&id)?;
    let req: TagRequest = body(&bytes)?;
    created(&blocking(&p, move |p| p.tag_project(id, &actor, &req.label)).await?)
}

#[derive(Deserialize)]
struct CommentRequest {
    text: String,
}

async fn comment(State(p): State<AppState>, Actor(actor): Actor, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let id = project_id(&id)?;
    let req: CommentRequest = body(&bytes)?;
    created(&blocking(&p, move |p| p.comment_project(id, &actor, &req.text)).await?)
}

#[derive(Deserialize)]
struct RatingRequest {
    stars: i64,
}

async fn rate(State(p): State<AppState>, Actor(actor): Actor, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let id = project_id(&id)?;
    let req: RatingRequest = body(&bytes)?;
    created(&blocking(&p, move |p| p.rate_project(id, &actor, req.stars)).await?)
}

#[derive(Deserialize)]
struct FeatureRequest {
    #[serde(default = "yes")]
    featured: bool,
}

fn yes() -> bool {
    true
}

#[derive(Serialize)]
struct FeatureState {
    project_id: ProjectId,
    featured: bool,
}

async fn feature(State(p): State<AppState>, Actor(actor): Actor, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let id = project_id(&id)?;
    let req: FeatureRequest = if bytes.is_empty() { FeatureRequest { featured: true } } else { body(&bytes)? };
    let featured = req.featured;
    blocking(&p, move |p| p.set_featured(id, &actor, featured)).await?;
    ok(&FeatureState { project_id: id, featured })
}

#[derive(Deserialize)]
struct GalleryRequest {
    name: String,
}

async fn create_gallery(State(p): State<AppState>, Actor(actor): Actor, bytes: Bytes) -> ApiResult {
    let req: GalleryRequest = body(&bytes)?;
    created(&blocking(&p, move |p| p.create_gallery(&req.name, &actor)).await?)
}

async fn gallery(State(p): State<AppState>, Path(id): Path<String>) -> ApiResult {
    ok(&p.gallery(project_id(&id)?)?)
}

#[derive(Deserialize)]
struct GalleryAddRequest {
    project_id: ProjectId,
}

async fn add_to_gallery(State(p): State<AppState>, Actor(actor): Actor, Path(id): Path<String>, bytes: Bytes) -> ApiResult {
    let gallery_id = project_id(&id)?;
    let req: GalleryAddRequest = body(&bytes)?;
    created(&blocking(&p, move |p| p.add_to_gallery(gallery_id, req.project_id, &actor)).await?)
}

fn positive(q: &HashMap<String, String>, key: &str) -> Result<Option<u64>, ApiError> {
    match q.get(key) {
        None => Ok(None),
        Some(v) => match v.parse::<u64>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(ApiError::bad_request(
                "MalformedRequest",
                format!("{key} must be a positive integer, got {v:?}"),
            )),
        },
    }
}

async fn front(State(p): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let limit = positive(&q, "limit")?.map(|n| n as usize);
    ok(&p.front_page(limit))
}

async fn stats(State(p): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let days = match positive(&q, "window_days")? {
        Some(n) => u32::try_from(n).map_err(|_| ApiError::bad_request("MalformedRequest", "window_days too large"))?,
        None => p.config().participation_window_days,
    };
    let stats = match q.get("end") {
        None => p.community_stats_trailing(days)?,
        Some(end) => {
            let end: Timestamp = end
                .parse()
                .map_err(|_| ApiError::bad_request("MalformedRequest", format!("invalid end {end:?}")))?;
            let window = Window::trailing_days(end, days).map_err(PlatformError::from)?;
            p.community_stats(window)
        }
    };
    ok(&stats)
}
