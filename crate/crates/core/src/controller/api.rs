use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::event::{CommandSource, PipelineState, SurveillanceEvent};
use super::mjpeg::stream_response;
use super::runtime::Inner;
use super::{CommandRejection, NodeView, UserAction};

#[derive(Clone)]
pub struct ApiState {
    pub(crate) inner: Arc<Inner>,
}

/// Dashboard API plus the `/stream` passthrough.
pub fn router(state: ApiState) -> Router {
    Router::new()
        .route("/api/nodes", get(nodes))
        .route("/api/events", get(events))
        .route("/api/events/{id}", get(event))
        .route("/api/events/{id}/capture", get(capture))
        .route("/api/state", get(summary))
        .route("/api/command", post(command))
        .route("/stream", get(stream))
        .fallback(not_found)
        .with_state(state)
}

/// The dedicated stream port serves the same feed at `/` and `/stream`.
pub fn stream_router(state: ApiState) -> Router {
    Router::new()
        .route("/", get(stream))
        .route("/stream", get(stream))
        .fallback(not_found)
        .with_state(state)
}

fn error(status: StatusCode, body: serde_json::Value) -> Response {
    (status, Json(body)).into_response()
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, json!({"error": "not_found"}))
}

async fn nodes(State(s): State<ApiState>) -> Json<Vec<NodeView>> {
    Json(s.inner.snapshot().nodes)
}

/// Most recent first.
async fn events(State(s): State<ApiState>) -> Json<Vec<SurveillanceEvent>> {
    let mut events = s.inner.snapshot().events;
    events.reverse();
    Json(events)
}

async fn event(State(s): State<ApiState>, Path(id): Path<String>) -> Response {
    match s.inner.snapshot().event(&id) {
        Some(ev) => Json(ev.clone()).into_response(),
        None => error(
            StatusCode::NOT_FOUND,
            json!({"error": "unknown_event", "event_id": id}),
        ),
    }
}

#[derive(Deserialize)]
struct CaptureQuery {
    n: Option<usize>,
}

async fn capture(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    Query(q): Query<CaptureQuery>,
) -> Response {
    let snap = s.inner.snapshot();
    let Some(ev) = snap.event(&id) else {
        return error(
            StatusCode::NOT_FOUND,
            json!({"error": "unknown_event", "event_id": id}),
        );
    };
    let n = q.n.unwrap_or(1);
    let Some(name) = n.checked_sub(1).and_then(|i| ev.captures.get(i)) else {
        return error(
            StatusCode::NOT_FOUND,
            json!({"error": "no_capture", "event_id": id, "n": n}),
        );
    };
    match s.inner.storage.read_capture(&id, name) {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/jpeg")], bytes).into_response(),
        Err(e) => error(
            StatusCode::NOT_FOUND,
            json!({"error": "capture_missing", "event_id": id, "detail": e.to_string()}),
        ),
    }
}

#[derive(Serialize)]
struct Summary {
    state: PipelineState,
    active_event: Option<String>,
    buzzer: bool,
    stream_clients: usize,
    frames_published: u64,
}

async fn summary(State(s): State<ApiState>) -> Json<Summary> {
    let snap = s.inner.snapshot();
    Json(Summary {
        state: snap.pipeline_state(),
        active_event: snap.active_event.clone(),
        buzzer: snap.buzzer,
        stream_clients: s.inner.hub.clients(),
        frames_published: s.inner.hub.published(),
    })
}

#[derive(Deserialize)]
struct CommandBody {
    action: String,
}

async fn command(State(s): State<ApiState>, body: Bytes) -> Response {
    let parsed: CommandBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => {
            return error(
                StatusCode::BAD_REQUEST,
                json!({"error": "bad_request", "detail": e.to_string()}),
            )
        }
    };
    let action: UserAction = match parsed.action.parse() {
        Ok(a) => a,
        Err(detail) => {
            return error(
                StatusCode::BAD_REQUEST,
                json!({"error": "unknown_action", "detail": detail, "allowed": ["found_ok", "inform_authorities"]}),
            )
        }
    };
    match s.inner.command(action, CommandSource::Api).await {
        Ok(ev) => Json(ev).into_response(),
        Err(rej @ CommandRejection::NotActive { .. }) => error(
            StatusCode::CONFLICT,
            serde_json::to_value(rej).expect("serialises"),
        ),
        Err(rej @ CommandRejection::Unavailable) => error(
            StatusCode::SERVICE_UNAVAILABLE,
            serde_json::to_value(rej).expect("serialises"),
        ),
    }
}

async fn stream(State(s): State<ApiState>) -> Response {
    stream_response(&s.inner.hub)
}
