//! HTTP control API and the participant WebSocket endpoint.

use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use csi_core::model::{ParticipantId, SessionConfig};
use csi_core::survey::{render_table, AnalysisOptions};
use futures::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc;

use crate::actor::SessionHandle;
use crate::error::ApiError;
use crate::hub::Hub;
use crate::wire::{parse_client_lines, ClientMsg, ServerMsg};

pub fn router(hub: Arc<Hub>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/end", post(end))
        .route("/sessions/{id}/tick", post(tick))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/survey", get(survey_results))
        .route("/ws", get(ws_upgrade))
        .with_state(hub)
}

async fn create_session(
    State(hub): State<Arc<Hub>>,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let config: SessionConfig = serde_json::from_slice(&body)
        .map_err(|e| ApiError::BadRequest(format!("config document: {e}")))?;
    let handle = hub.create(config)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"session_id": handle.id()})),
    )
        .into_response())
}

async fn list_sessions(State(hub): State<Arc<Hub>>) -> Json<serde_json::Value> {
    Json(json!({"sessions": hub.ids()}))
}

async fn status(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(hub.get(&id)?.status().await?).into_response())
}

async fn start(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(hub.get(&id)?.start().await?).into_response())
}

async fn end(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let status = hub.get(&id)?.end().await?;
    Ok(
        Json(json!({"status": status, "report_ref": format!("/sessions/{id}/report")}))
            .into_response(),
    )
}

/// Runs one scheduler tick now, in addition to the periodic ones.
async fn tick(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(hub.get(&id)?.tick().await?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn wants_text(q: &FormatQuery) -> bool {
    q.format.as_deref() == Some("text")
}

fn text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response()
}

async fn report(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
) -> Result<Response, ApiError> {
    let report = hub.get(&id)?.report().await?;
    Ok(if wants_text(&q) {
        text(report.render_text())
    } else {
        (
            [(header::CONTENT_TYPE, "application/json")],
            report.to_json(),
        )
            .into_response()
    })
}

async fn log(State(hub): State<Arc<Hub>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let body = hub.get(&id)?.log().await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

#[derive(Debug, Deserialize)]
struct SurveyQuery {
    family_alpha: Option<f64>,
    tests: Option<usize>,
    format: Option<String>,
}

async fn survey_results(
    State(hub): State<Arc<Hub>>,
    Path(id): Path<String>,
    Query(q): Query<SurveyQuery>,
) -> Result<Response, ApiError> {
    let mut options = AnalysisOptions::default();
    options.family_alpha = q.family_alpha.unwrap_or(options.family_alpha);
    options.tests = q.tests.unwrap_or(options.tests);
    let results = hub.get(&id)?.survey_results(options).await?;
    Ok(if q.format.as_deref() == Some("text") {
        text(render_table(&results, &options))
    } else {
        Json(json!({"options": options, "results": results})).into_response()
    })
}

async fn ws_upgrade(State(hub): State<Arc<Hub>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| connection(hub, socket))
}

/// One participant connection: the first record must be `join`; afterwards
/// `chat` and `survey` are accepted. Rejected records get an `error` reply.
async fn connection(hub: Arc<Hub>, socket: WebSocket) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<ServerMsg>();
    let writer = tokio::spawn(async move {
        while let Some(record) = rx.recv().await {
            if sink
                .send(Message::Text(record.to_line().into()))
                .await
                .is_err()
            {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let conn = hub.next_connection();
    let mut joined: Option<(SessionHandle, ParticipantId)> = None;
    let reject = |tx: &mpsc::UnboundedSender<ServerMsg>, message: String| {
        let _ = tx.send(ServerMsg::Error { message });
    };
    while let Some(Ok(frame)) = stream.next().await {
        let body = match frame {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        for parsed in parse_client_lines(&body) {
            let msg = match parsed {
                Ok(m) => m,
                Err(e) => {
                    reject(&tx, format!("unreadable record: {e}"));
                    continue;
                }
            };
            let result = match (&joined, msg) {
                (
                    None,
                    ClientMsg::Join {
                        session_id,
                        display_name,
                    },
                ) => match hub.get(session_id.as_str()) {
                    Ok(handle) => handle
                        .join(&display_name, conn, Some(tx.clone()))
                        .await
                        .map(|j| {
                            joined = Some((handle, j.participant_id));
                        }),
                    Err(e) => Err(e),
                },
                (None, _) => Err(ApiError::BadRequest("send join first".into())),
                (Some(_), ClientMsg::Join { .. }) => {
                    Err(ApiError::BadRequest("already joined".into()))
                }
                (Some((handle, pid)), ClientMsg::Chat { text }) => handle.chat(pid, &text).await,
                (Some((handle, pid)), ClientMsg::Survey { answers }) => {
                    handle.survey(pid, answers).await
                }
            };
            if let Err(e) = result {
                reject(&tx, e.to_string());
            }
        }
    }
    if let Some((handle, pid)) = joined {
        handle.detach(pid, conn);
    }
    drop(tx);
    let _ = writer.await;
}
