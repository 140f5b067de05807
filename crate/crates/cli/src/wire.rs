//! Broker access for external producers and consumers. The bearer token is the tenant secret.
//!
//! - `PUT  /v1/topics/{tenant}/{category}/{topic}` creates the topic (idempotent).
//! - `POST .../publish` with `{ts_ms, payload}` (any JSON) or `{ts_ms, payload_hex}`; returns `{offset}`.
//! - `POST .../cursor` with `{subscription, start?}`; returns the subscription's committed position.
//! - `GET  .../read?subscription=..&max=..&wait_ms=..` returns and commits the next records.

use crate::gateway::{ApiError, FieldError, Gateway};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::json;
use std::sync::Arc;
use std::time::Duration;
use tdm_core::{Capability, StartPosition, TimestampMs, TopicName};

pub const MAX_READ: usize = 10_000;
pub const MAX_WAIT_MS: u64 = 30_000;

pub(crate) fn routes() -> Router<Arc<Gateway>> {
    Router::new()
        .route("/v1/topics/{tenant}/{category}/{topic}", put(create))
        .route("/v1/topics/{tenant}/{category}/{topic}/publish", post(publish))
        .route("/v1/topics/{tenant}/{category}/{topic}/cursor", post(cursor))
        .route("/v1/topics/{tenant}/{category}/{topic}/read", get(read))
}

type TopicPath = Path<(String, String, String)>;

fn bad_request(f: &str, message: impl Into<String>) -> ApiError {
    let mut e = ApiError::invalid(vec![FieldError { field: f.into(), message: message.into() }]);
    e.code = "invalid_request";
    e
}

fn authorize(gw: &Gateway, headers: &HeaderMap, Path((tenant, category, topic)): TopicPath) -> Result<(TopicName, Capability), ApiError> {
    let name = TopicName::new(&tenant, &category, &topic).map_err(|e| bad_request("topic", e.to_string()))?;
    let secret = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))?;
    let cap = gw.broker().authenticate(&tenant, secret.trim())?;
    Ok((name, cap))
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    b.map(|Json(v)| v).map_err(|e| bad_request("body", e.body_text()))
}

async fn blocking(f: impl FnOnce() -> Result<Response, ApiError> + Send + 'static) -> Response {
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::internal(e.to_string()).into_response(),
    }
}

async fn create(State(gw): State<Arc<Gateway>>, headers: HeaderMap, path: TopicPath) -> Response {
    blocking(move || {
        let (name, cap) = authorize(&gw, &headers, path)?;
        gw.broker().create_topic(&name, &cap)?;
        Ok(Json(json!({ "topic": name })).into_response())
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PublishBody {
    ts_ms: TimestampMs,
    #[serde(default)]
    payload: Option<Box<RawValue>>,
    #[serde(default)]
    payload_hex: Option<String>,
}

async fn publish(State(gw): State<Arc<Gateway>>, headers: HeaderMap, path: TopicPath, b: Result<Json<PublishBody>, JsonRejection>) -> Response {
    blocking(move || {
        let (name, cap) = authorize(&gw, &headers, path)?;
        let b = body(b)?;
        let bytes = match (b.payload, b.payload_hex) {
            (Some(raw), None) => raw.get().as_bytes().to_vec(),
            (None, Some(h)) => hex::decode(h).map_err(|e| bad_request("payload_hex", e.to_string()))?,
            _ => return Err(bad_request("payload", "exactly one of payload and payload_hex is required")),
        };
        let offset = gw.broker().publish(&name, b.ts_ms, &bytes, &cap)?;
        Ok(Json(json!({ "offset": offset })).into_response())
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CursorBody {
    subscription: String,
    #[serde(default)]
    start: Option<StartPosition>,
}

async fn cursor(State(gw): State<Arc<Gateway>>, headers: HeaderMap, path: TopicPath, b: Result<Json<CursorBody>, JsonRejection>) -> Response {
    blocking(move || {
        let (name, cap) = authorize(&gw, &headers, path)?;
        let b = body(b)?;
        if b.subscription.is_empty() {
            return Err(bad_request("subscription", "must not be empty"));
        }
        let c = gw.broker().open_cursor(&name, b.start.unwrap_or(StartPosition::Earliest), &b.subscription, &cap)?;
        gw.broker().commit_cursor(&c)?;
        Ok(Json(json!({ "subscription": b.subscription, "next_offset": c.next_offset() })).into_response())
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReadParams {
    subscription: String,
    #[serde(default)]
    max: Option<usize>,
    #[serde(default)]
    wait_ms: Option<u64>,
}

/// Payloads that are valid JSON are returned verbatim; anything else as hex.
#[derive(Serialize)]
struct WireRecord<'a> {
    offset: u64,
    ts_ms: TimestampMs,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<&'a RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload_hex: Option<String>,
}

#[derive(Serialize)]
struct ReadResponse<'a> {
    records: Vec<WireRecord<'a>>,
    next_offset: u64,
}

async fn read(
    State(gw): State<Arc<Gateway>>,
    headers: HeaderMap,
    path: TopicPath,
    q: Result<Query<ReadParams>, axum::extract::rejection::QueryRejection>,
) -> Response {
    blocking(move || {
        let (name, cap) = authorize(&gw, &headers, path)?;
        let Query(q) = q.map_err(|e| bad_request("query", e.body_text()))?;
        let max = q.max.unwrap_or(100);
        if !(1..=MAX_READ).contains(&max) {
            return Err(bad_request("max", format!("must be in 1..={MAX_READ}")));
        }
        let wait = Duration::from_millis(q.wait_ms.unwrap_or(0).min(MAX_WAIT_MS));
        let broker = gw.broker();
        let mut c = broker.open_cursor(&name, StartPosition::Earliest, &q.subscription, &cap)?;
        let batch = broker.read_next_wait(&mut c, max, wait)?;
        broker.commit_cursor(&c)?;
        let records: Vec<WireRecord> = batch
            .iter()
            .map(|r| {
                let raw = serde_json::from_slice::<&RawValue>(&r.payload).ok();
                WireRecord { offset: r.offset, ts_ms: r.ts_ms, payload: raw, payload_hex: raw.is_none().then(|| hex::encode(&r.payload)) }
            })
            .collect();
        Ok(Json(ReadResponse { records, next_offset: c.next_offset() }).into_response())
    })
    .await
}
