//! HTTP session service. Handlers only translate between HTTP and library
//! calls; all behaviour lives in the pipeline.
//!
//! Each session has one writer at a time. Pipeline work runs on the blocking
//! pool against a copy, and readers see the last committed snapshot, so GETs
//! stay fast while a stage executes.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bytecomposer_core::memory::{valid_session_id, SessionStore, StoreError};
use bytecomposer_core::pipeline::{load_session, save_session, Pipeline, PipelineError, Session};
use serde::Deserialize;
use tower_http::services::ServeDir;

use crate::api::{self, ApiCandidate, ApiError, ApiNotes, ApiSession, ApiTree, CreateSession, Message};

#[derive(Debug)]
pub enum Failure {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Internal(String),
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let (status, error) = match self {
            Failure::BadRequest(e) => (StatusCode::BAD_REQUEST, e),
            Failure::NotFound(e) => (StatusCode::NOT_FOUND, e),
            Failure::Conflict(e) => (StatusCode::CONFLICT, e),
            Failure::Internal(e) => (StatusCode::INTERNAL_SERVER_ERROR, e),
        };
        (status, Json(ApiError { error })).into_response()
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::SessionClosed(_) => Failure::Conflict(e.to_string()),
            _ => Failure::BadRequest(e.to_string()),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound(_) | StoreError::InvalidId(_) => Failure::NotFound(e.to_string()),
            _ => Failure::Internal(e.to_string()),
        }
    }
}

fn join_failure(e: tokio::task::JoinError) -> Failure {
    Failure::Internal(format!("pipeline task failed: {e}"))
}

struct Entry {
    writer: tokio::sync::Mutex<()>,
    snapshot: RwLock<Arc<Session>>,
}

impl Entry {
    fn new(s: Session) -> Arc<Self> {
        Arc::new(Entry {
            writer: tokio::sync::Mutex::new(()),
            snapshot: RwLock::new(Arc::new(s)),
        })
    }

    fn read(&self) -> Arc<Session> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn commit(&self, s: Session) {
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(s);
    }
}

pub struct AppState {
    pipeline: Arc<Pipeline>,
    store: SessionStore,
    sessions: Mutex<HashMap<String, Arc<Entry>>>,
}

impl AppState {
    pub fn new(pipeline: Pipeline, sessions_dir: impl Into<PathBuf>) -> Arc<Self> {
        Arc::new(AppState {
            pipeline: Arc::new(pipeline),
            store: SessionStore::new(sessions_dir),
            sessions: Mutex::new(HashMap::new()),
        })
    }

    fn cached(&self, id: &str) -> Option<Arc<Entry>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    /// Finds a session in memory or loads it from disk.
    async fn entry(&self, id: &str) -> Result<Arc<Entry>, Failure> {
        if let Some(e) = self.cached(id) {
            return Ok(e);
        }
        if !valid_session_id(id) {
            return Err(Failure::NotFound(format!("no session `{id}`")));
        }
        let store = self.store.clone();
        let owned = id.to_string();
        let session = tokio::task::spawn_blocking(move || load_session(&store, &owned))
            .await
            .map_err(join_failure)??;
        let mut map = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        Ok(map.entry(id.to_string()).or_insert_with(|| Entry::new(session)).clone())
    }
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, Failure> {
    serde_json::from_slice(body).map_err(|e| Failure::BadRequest(format!("invalid body: {e}")))
}

async fn create(State(app): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, Failure> {
    let req: CreateSession = parse_body(&body)?;
    let config = req.config.unwrap_or_default();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let pipeline = app.pipeline.clone();
    let store = app.store.clone();
    let session = tokio::task::spawn_blocking(move || -> Result<Session, Failure> {
        let s = pipeline.start(id, &req.query, config)?;
        save_session(&store, &s)?;
        Ok(s)
    })
    .await
    .map_err(join_failure)??;
    let view = ApiSession::from_session(&session);
    app.sessions
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(session.id.clone(), Entry::new(session));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn message(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<ApiSession>, Failure> {
    let entry = app.entry(&id).await?;
    let msg: Message = parse_body(&body)?;
    let _writer = entry.writer.lock().await;
    let mut session = (*entry.read()).clone();
    if session.is_closed() {
        return Err(PipelineError::SessionClosed(session.status).into());
    }
    let pipeline = app.pipeline.clone();
    let store = app.store.clone();
    let (session, outcome) = tokio::task::spawn_blocking(move || {
        let outcome = pipeline.step(&mut session, Some(&msg.text));
        // a rejected command is still logged, so persist either way
        let saved = save_session(&store, &session);
        (session, outcome.map_err(Failure::from).and(saved.map_err(Failure::from)))
    })
    .await
    .map_err(join_failure)?;
    let view = ApiSession::from_session(&session);
    entry.commit(session);
    outcome.map(|_| Json(view))
}

async fn show(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<ApiSession>, Failure> {
    Ok(Json(ApiSession::from_session(&app.entry(&id).await?.read())))
}

async fn tree(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Json<ApiTree>, Failure> {
    Ok(Json(ApiTree::from_session(&app.entry(&id).await?.read())))
}

#[derive(Debug, Deserialize)]
struct CandidateQuery {
    view: Option<String>,
}

async fn candidate(
    State(app): State<Arc<AppState>>,
    UrlPath((id, k)): UrlPath<(String, String)>,
    Query(q): Query<CandidateQuery>,
) -> Result<Response, Failure> {
    let session = app.entry(&id).await?.read();
    let missing = || Failure::NotFound(format!("no candidate {k} in session `{id}`"));
    let index: usize = k.parse().map_err(|_| missing())?;
    match q.view.as_deref() {
        None | Some("full") => Ok(Json(ApiCandidate::from_session(&session, index).ok_or_else(missing)?).into_response()),
        Some("notes") => Ok(Json(ApiNotes::from_session(&session, index).ok_or_else(missing)?).into_response()),
        Some(other) => Err(Failure::BadRequest(format!("unknown view `{other}` (use full or notes)"))),
    }
}

async fn score(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<Response, Failure> {
    let session = app.entry(&id).await?.read();
    let abc = api::final_score(&session)
        .ok_or_else(|| Failure::NotFound(format!("session `{id}` has no final score yet ({:?})", session.status)))?;
    Ok(([(header::CONTENT_TYPE, "text/vnd.abc; charset=utf-8")], abc).into_response())
}

async fn healthz() -> &'static str {
    "ok"
}

async fn log_request(req: Request, next: Next) -> Response {
    let started = Instant::now();
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let response = next.run(req).await;
    tracing::info!(
        %method,
        path,
        status = response.status().as_u16(),
        ms = started.elapsed().as_millis() as u64,
        "request"
    );
    response
}

pub fn router(state: Arc<AppState>, ui_dir: Option<&Path>) -> Router {
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/message", post(message))
        .route("/sessions/{id}/tree", get(tree))
        .route("/sessions/{id}/candidates/{k}", get(candidate))
        .route("/sessions/{id}/score", get(score))
        .with_state(state);
    if let Some(dir) = ui_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(middleware::from_fn(log_request))
}

/// Serves until the future `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
