//! HTTP routes under `/v1` and the event WebSocket.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{FromRequest, Path as UrlPath, Query, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use orient_core::constraints::{ConstraintInbox, Link};
use orient_core::data::{gen_feature_bundle, gen_gauss_cross, load_records, Dataset, DatasetRecord, GeneratorConfig};
use orient_core::oracle::{HumanOracle, Oracle, SimulatedOracle, Ticket, TicketQueue, WaitPolicy};
use orient_core::trainer::dataset_labels;
use orient_core::{Session, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::events::Event;
use crate::runner::{BudgetView, ControlAction, Runner, Status};

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::Conflict(_) => "conflict",
            ApiError::Validation(_) => "validation",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind(), "message": self.to_string() } });
        (self.status(), Json(body)).into_response()
    }
}

impl From<orient_core::Error> for ApiError {
    fn from(e: orient_core::Error) -> Self {
        use orient_core::Error as E;
        match e {
            E::UnknownTicket(_) => ApiError::NotFound(e.to_string()),
            E::TicketConflict(_) | E::TicketCancelled(_) => ApiError::Conflict(e.to_string()),
            E::Io(_) => ApiError::Internal(e.to_string()),
            _ => ApiError::Validation(e.to_string()),
        }
    }
}

/// JSON body whose rejections become validation errors.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|r| ApiError::Validation(r.body_text()))
    }
}

#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    /// Dataset paths in requests resolve inside this directory. Without it,
    /// only inline and generated datasets are accepted.
    pub data_root: Option<PathBuf>,
    /// Display events kept with payloads per session.
    pub display_capacity: usize,
}

impl ServiceConfig {
    pub fn new(data_root: Option<PathBuf>) -> Self {
        Self {
            data_root,
            display_capacity: 512,
        }
    }
}

#[derive(Debug)]
struct Registry {
    sessions: RwLock<BTreeMap<String, Arc<Runner>>>,
    next: AtomicU64,
    config: ServiceConfig,
}

/// Shared application state; cheap to clone.
#[derive(Clone, Debug)]
pub struct AppState {
    inner: Arc<Registry>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Registry {
                sessions: RwLock::new(BTreeMap::new()),
                next: AtomicU64::new(1),
                config,
            }),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Runner>, ApiError> {
        self.inner
            .sessions
            .read()
            .expect("registry poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session {id} does not exist")))
    }

    /// Stops every session and joins its thread.
    pub fn shutdown(&self) {
        let all: Vec<_> = self
            .inner
            .sessions
            .read()
            .expect("registry poisoned")
            .values()
            .cloned()
            .collect();
        for r in all {
            r.shutdown();
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    GaussCross,
    FeatureBundle,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRef {
    /// A JSON-lines file under the service's data root.
    Path(PathBuf),
    Generate {
        kind: GeneratorKind,
        #[serde(default)]
        config: GeneratorConfig,
    },
    Records(Vec<DatasetRecord>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Human {
        #[serde(default)]
        policy: WaitPolicy,
    },
    /// Answers from the dataset's labels under the configured orientation.
    Simulated,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec::Human {
            policy: WaitPolicy::Continue,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: DatasetRef,
    #[serde(default)]
    pub config: TrainConfig,
    #[serde(default)]
    pub oracle: OracleSpec,
}

#[derive(Debug, Serialize)]
pub struct Created {
    pub id: String,
    pub samples: usize,
}

#[derive(Debug, Serialize)]
pub struct TicketView {
    pub ticket_id: String,
    pub i: usize,
    pub j: usize,
    pub step: u64,
    pub payload_refs: [Option<String>; 2],
    #[serde(rename = "S")]
    pub score: Option<f64>,
    #[serde(rename = "S_up")]
    pub s_up: Option<f64>,
    #[serde(rename = "S_hp")]
    pub s_hp: Option<f64>,
    pub r: Option<f64>,
}

impl TicketView {
    fn new(t: Ticket, refs: &[Option<String>]) -> Self {
        let d = t.decision.as_ref();
        Self {
            payload_refs: [refs[t.i].clone(), refs[t.j].clone()],
            ticket_id: t.id,
            i: t.i,
            j: t.j,
            step: t.step,
            score: d.and_then(|d| d.score),
            s_up: d.map(|d| d.s_up),
            s_hp: d.and_then(|d| d.s_hp),
            r: d.map(|d| d.r),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct SessionState {
    pub id: String,
    pub status: Status,
    pub epoch: usize,
    pub step: u64,
    pub budget: BudgetView,
    pub loss: Option<orient_core::LossBreakdown>,
    pub projection: Vec<[f64; 2]>,
    pub assignments: Vec<usize>,
    pub pending_tickets: Vec<TicketView>,
    pub metrics: Option<orient_core::MetricsReport>,
    pub holdout_metrics: Option<orient_core::MetricsReport>,
    pub answers: usize,
    pub stopped_early: bool,
    pub error: Option<String>,
    pub events: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub ticket_id: String,
    pub link: Link,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBody {
    pub action: ControlActionName,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlActionName {
    Pause,
    Resume,
    Stop,
}

#[derive(Debug, Deserialize)]
pub struct EventsQuery {
    #[serde(default)]
    pub from: u64,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(|| async { Json(json!({ "ok": true })) }))
        .route("/v1/sessions", post(create_session).get(list_sessions))
        .route("/v1/sessions/{id}", get(get_state))
        .route("/v1/sessions/{id}/query", get(next_query))
        .route("/v1/sessions/{id}/answers", post(post_answer))
        .route("/v1/sessions/{id}/control", post(control))
        .route("/v1/sessions/{id}/events", get(stream_events))
        .route("/v1/sessions/{id}/events/log", get(event_log))
        .with_state(state)
}

fn resolve_path(root: Option<&Path>, requested: &Path) -> Result<PathBuf, ApiError> {
    let root =
        root.ok_or_else(|| ApiError::Validation("dataset paths are disabled: the service has no data root".into()))?;
    if requested.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(ApiError::Validation(format!(
            "dataset path {} must be relative and stay inside the data root",
            requested.display()
        )));
    }
    Ok(root.join(requested))
}

fn load_dataset(source: DatasetRef, root: Option<&Path>) -> Result<Dataset, ApiError> {
    Ok(match source {
        DatasetRef::Path(p) => {
            let path = resolve_path(root, &p)?;
            load_records(&path).map_err(|e| ApiError::Validation(format!("{}: {e}", p.display())))?
        }
        DatasetRef::Generate { kind, config } => match kind {
            GeneratorKind::GaussCross => gen_gauss_cross(&config)?,
            GeneratorKind::FeatureBundle => gen_feature_bundle(&config)?,
        },
        DatasetRef::Records(r) => Dataset::from_records(r)?,
    })
}

async fn create_session(
    State(state): State<AppState>,
    Body(req): Body<CreateSession>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let config = req.config;
    config.validate()?;
    let dataset = load_dataset(req.dataset, state.inner.config.data_root.as_deref())?;
    let labels = dataset_labels(&dataset)?;
    let (oracle, queue): (Box<dyn Oracle>, Option<TicketQueue>) = match req.oracle {
        OracleSpec::Simulated => {
            let truth = labels
                .get(&config.orientation)
                .ok_or_else(|| ApiError::Validation(format!("dataset has no orientation {:?}", config.orientation)))?;
            (
                Box::new(SimulatedOracle::from_labels(config.orientation.clone(), truth)),
                None,
            )
        }
        OracleSpec::Human { policy } => human(policy),
    };
    let inbox = queue.as_ref().map(|q| q.inbox().clone()).unwrap_or_default();
    let refs: Vec<Option<String>> = dataset.records().iter().map(|r| r.payload_ref.clone()).collect();
    let samples = dataset.len();
    let features = dataset.features();
    let capacity = state.inner.config.display_capacity;
    let runner = tokio::task::spawn_blocking(move || {
        Runner::start(
            |o| Session::new(features, labels, config, o, inbox),
            oracle,
            queue,
            refs,
            capacity,
        )
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;

    let id = format!("s-{}", state.inner.next.fetch_add(1, Ordering::Relaxed));
    state
        .inner
        .sessions
        .write()
        .expect("registry poisoned")
        .insert(id.clone(), Arc::new(runner));
    tracing::info!(session = %id, samples, "session started");
    Ok((StatusCode::CREATED, Json(Created { id, samples })))
}

fn human(policy: WaitPolicy) -> (Box<dyn Oracle>, Option<TicketQueue>) {
    let queue = TicketQueue::new(ConstraintInbox::new());
    (Box::new(HumanOracle::new(queue.clone(), policy)), Some(queue))
}

async fn list_sessions(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(
        state
            .inner
            .sessions
            .read()
            .expect("registry poisoned")
            .keys()
            .cloned()
            .collect(),
    )
}

async fn get_state(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionState>, ApiError> {
    let runner = state.session(&id)?;
    let sh = &runner.shared;
    let s = sh.snapshot();
    let pending_tickets = sh
        .pending_tickets()
        .into_iter()
        .map(|t| TicketView::new(t, &sh.payload_refs))
        .collect();
    Ok(Json(SessionState {
        id,
        status: s.status,
        epoch: s.epoch,
        step: s.step,
        budget: s.budget,
        loss: s.loss,
        projection: s.projection,
        assignments: s.assignments,
        pending_tickets,
        metrics: s.metrics,
        holdout_metrics: s.holdout_metrics,
        answers: s.answers,
        stopped_early: s.stopped_early,
        error: s.error,
        events: sh.events.len(),
    }))
}

async fn next_query(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let runner = state.session(&id)?;
    let sh = &runner.shared;
    let ticket = sh
        .pending_tickets()
        .into_iter()
        .next()
        .map(|t| TicketView::new(t, &sh.payload_refs));
    Ok(Json(json!({ "ticket": ticket })))
}

async fn post_answer(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Body(body): Body<AnswerBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let runner = state.session(&id)?;
    let queue = runner
        .shared
        .queue
        .as_ref()
        .ok_or_else(|| ApiError::Conflict(format!("session {id} is answered by a simulated oracle")))?;
    let answer = queue.resolve(&body.ticket_id, body.link)?;
    Ok(Json(
        json!({ "ticket_id": body.ticket_id, "i": answer.i, "j": answer.j, "link": answer.link, "accepted": true }),
    ))
}

async fn control(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Body(body): Body<ControlBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let runner = state.session(&id)?;
    let action = match body.action {
        ControlActionName::Pause => ControlAction::Pause,
        ControlActionName::Resume => ControlAction::Resume,
        ControlActionName::Stop => ControlAction::Stop,
    };
    let status = runner
        .shared
        .control(action)
        .map_err(|_| ApiError::Conflict(format!("session {id} has finished")))?;
    Ok(Json(json!({ "status": status })))
}

async fn event_log(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Json<Vec<Event>>, ApiError> {
    Ok(Json(state.session(&id)?.shared.events.since(q.from)))
}

async fn stream_events(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let runner = state.session(&id)?;
    Ok(ws.on_upgrade(move |socket| pump_events(socket, runner, q.from)))
}

/// Sends every event from `from` on, in order, until the session is done
/// and drained or the client goes away.
async fn pump_events(mut socket: WebSocket, runner: Arc<Runner>, from: u64) {
    let events = runner.shared.events.clone();
    let mut rx = events.subscribe();
    let mut cursor = from;
    loop {
        rx.mark_unchanged();
        for e in events.since(cursor) {
            cursor = e.index + 1;
            let text = match serde_json::to_string(&e) {
                Ok(t) => t,
                Err(_) => continue,
            };
            if socket.send(Message::Text(text.into())).await.is_err() {
                return;
            }
        }
        if events.is_finished() && cursor >= events.len() {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
        tokio::select! {
            changed = rx.changed() => if changed.is_err() { return },
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
