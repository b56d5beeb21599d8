use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::ws::{CloseFrame, Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use citypulse_core::engine::{BatchSummary, EngineError};
use citypulse_core::heatmap::HeatmapMode;
use citypulse_core::structure::AppKey;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;

use crate::{Published, Shared};

/// Close code sent to stream subscribers that fell too far behind.
pub const CLOSE_LAGGED: u16 = 4000;

pub fn router(shared: Arc<Shared>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/ingest", post(ingest))
        .route("/api/v1/snapshot/latest", get(latest_snapshot))
        .route("/api/v1/heatmap", get(heatmap))
        .route("/api/v1/metrics", get(metrics))
        .route("/api/v1/status", get(status))
        .route("/api/v1/stream", get(stream))
        .with_state(shared);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match e {
            EngineError::NoSnapshot | EngineError::UnknownApp(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::BAD_REQUEST,
        };
        ApiError(status, e.to_string())
    }
}

#[derive(Debug, Default, Deserialize)]
struct AppQuery {
    host: Option<String>,
    app: Option<String>,
}

impl AppQuery {
    fn key(&self) -> Result<Option<AppKey>, ApiError> {
        match (&self.host, &self.app) {
            (Some(h), Some(a)) => Ok(Some(AppKey::new(h, a))),
            (None, None) => Ok(None),
            _ => Err(ApiError(StatusCode::BAD_REQUEST, "give both `host` and `app`, or neither".into())),
        }
    }
}

async fn ingest(State(shared): State<Arc<Shared>>, body: Bytes) -> Json<BatchSummary> {
    Json(shared.ingestor().ingest_batch(&body))
}

fn json_body(bytes: Bytes) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], Body::from(bytes)).into_response()
}

async fn latest_snapshot(State(shared): State<Arc<Shared>>, Query(q): Query<AppQuery>) -> Result<Response, ApiError> {
    let key = q.key()?;
    let published = shared.latest().ok_or(EngineError::NoSnapshot)?;
    match published.document(key.as_ref()) {
        Some(doc) => Ok(json_body(doc.clone())),
        None => Err(match key {
            Some(k) => EngineError::UnknownApp(k.to_string()).into(),
            None => EngineError::NoSnapshot.into(),
        }),
    }
}

#[derive(Debug, Deserialize)]
struct HeatmapQuery {
    metric: Option<String>,
    mode: Option<String>,
    #[serde(flatten)]
    app: AppQuery,
}

async fn heatmap(State(shared): State<Arc<Shared>>, Query(q): Query<HeatmapQuery>) -> Result<Response, ApiError> {
    let bad = |msg: String| ApiError(StatusCode::BAD_REQUEST, msg);
    let metric = q.metric.ok_or_else(|| bad("missing `metric`".into()))?;
    if !shared.descriptors().iter().any(|d| d.metric_id == metric) {
        return Err(EngineError::UnknownMetric(metric).into());
    }
    let mode: HeatmapMode = q
        .mode
        .as_deref()
        .ok_or_else(|| bad("missing `mode`".into()))?
        .parse()
        .map_err(|e: citypulse_core::heatmap::HeatmapError| bad(e.to_string()))?;
    let key = q.app.key()?;
    let published = shared.latest().ok_or(EngineError::NoSnapshot)?;
    let view = published.frame.heatmap(&metric, mode, key.as_ref())?;
    Ok(Json(view).into_response())
}

async fn metrics(State(shared): State<Arc<Shared>>) -> Response {
    Json(shared.descriptors()).into_response()
}

async fn status(State(shared): State<Arc<Shared>>) -> Response {
    Json(shared.status()).into_response()
}

async fn stream(
    State(shared): State<Arc<Shared>>,
    Query(q): Query<AppQuery>,
    upgrade: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let key = q.key()?;
    Ok(upgrade.on_upgrade(move |socket| push_snapshots(socket, shared, key)))
}

async fn send_frame(socket: &mut WebSocket, published: &Published, key: Option<&AppKey>) -> Result<(), axum::Error> {
    for (app, doc) in &published.documents {
        if key.is_some_and(|k| k != app) {
            continue;
        }
        let text = Utf8Bytes::try_from(doc.clone()).expect("snapshot JSON is UTF-8");
        socket.send(Message::Text(text)).await?;
    }
    Ok(())
}

/// Sends the current tick, then every later one in order. A subscriber that
/// lags past the broadcast buffer is closed instead of slowing the ticker.
async fn push_snapshots(mut socket: WebSocket, shared: Arc<Shared>, key: Option<AppKey>) {
    let mut rx = shared.subscribe();
    let mut sent: Option<u64> = None;
    if let Some(current) = shared.latest() {
        if send_frame(&mut socket, &current, key.as_ref()).await.is_err() {
            return;
        }
        sent = Some(current.tick_index());
    }
    loop {
        tokio::select! {
            next = rx.recv() => match next {
                Ok(published) => {
                    if sent.is_some_and(|s| published.tick_index() <= s) {
                        continue;
                    }
                    if send_frame(&mut socket, &published, key.as_ref()).await.is_err() {
                        return;
                    }
                    sent = Some(published.tick_index());
                }
                Err(RecvError::Lagged(missed)) => {
                    tracing::info!(missed, "closing lagging stream subscriber");
                    let _ = socket
                        .send(Message::Close(Some(CloseFrame {
                            code: CLOSE_LAGGED,
                            reason: "subscriber lagged".into(),
                        })))
                        .await;
                    return;
                }
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
