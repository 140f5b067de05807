//! Read-only query API under `/api/v1/` plus the broker wire endpoints under `/v1/topics/`.

use crate::config::GatewayConfig;
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, Method, Request, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;
use tdm_core::geostore::{AggregateFilter, GeoStore, GeoStoreError, GroupBy, ReplayStats};
use tdm_core::monitor::{Alert, NightlyReport};
use tdm_core::static_data::{RoadNetwork, StaticBundle};
use tdm_core::{BoundingBox, Broker, Capability, FleetKind, LedgerError, TimestampMs};

pub const JSON_CONTENT_TYPE: &str = "application/json; charset=utf-8";
pub const DEFAULT_ALERT_LIMIT: usize = 100;
pub const MAX_ALERT_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

/// A failed request, rendered as `{error, message, fields?}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub fields: Vec<FieldError>,
}

impl ApiError {
    pub fn invalid(fields: Vec<FieldError>) -> Self {
        let message = fields.iter().map(|f| format!("{}: {}", f.field, f.message)).collect::<Vec<_>>().join("; ");
        Self { status: StatusCode::BAD_REQUEST, code: "invalid_query", message, fields }
    }

    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), fields: Vec::new() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn body(&self) -> Value {
        let mut v = json!({ "error": self.code, "message": self.message });
        if !self.fields.is_empty() {
            v["fields"] = serde_json::to_value(&self.fields).expect("serializable");
        }
        v
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        let (status, code) = match &e {
            LedgerError::AuthFailed => (StatusCode::UNAUTHORIZED, "unauthorized"),
            LedgerError::Forbidden { .. } => (StatusCode::FORBIDDEN, "forbidden"),
            LedgerError::UnknownTopic(_) => (StatusCode::NOT_FOUND, "unknown_topic"),
            LedgerError::OffsetOutOfRange { .. } | LedgerError::InvalidRange { .. } => (StatusCode::BAD_REQUEST, "invalid_request"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<GeoStoreError> for ApiError {
    fn from(e: GeoStoreError) -> Self {
        match e {
            GeoStoreError::InvalidQuery(m) => Self::invalid(vec![FieldError { field: "query".into(), message: m }]),
            GeoStoreError::Ledger(l) => l.into(),
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

/// Parsed query parameters; every endpoint accepts a subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ApiQuery {
    pub from_ms: TimestampMs,
    pub to_ms: TimestampMs,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_by: Option<GroupBy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fleet: Option<FleetKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub route_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

impl ApiQuery {
    pub fn filter(&self) -> AggregateFilter {
        AggregateFilter { t0_ms: self.from_ms, t1_ms: self.to_ms, fleet: self.fleet, route_id: self.route_id.clone(), bbox: self.bbox }
    }
}

#[derive(Clone, Copy)]
struct Spec {
    allowed: &'static [&'static str],
    time_required: bool,
    group_by_required: bool,
    bbox_required: bool,
}

fn field(field: &str, message: impl Into<String>) -> FieldError {
    FieldError { field: field.into(), message: message.into() }
}

pub fn parse_bbox(s: &str) -> Result<BoundingBox, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("{p:?} is not a number")))
        .collect::<Result<_, _>>()?;
    let [min_lat, min_lon, max_lat, max_lon] = parts[..] else {
        return Err("expected min_lat,min_lon,max_lat,max_lon".into());
    };
    BoundingBox::new(min_lat, min_lon, max_lat, max_lon).map_err(|e| e.to_string())
}

fn parse_params(params: &[(String, String)], spec: Spec) -> Result<(ApiQuery, Vec<(String, String)>), ApiError> {
    let mut errors = Vec::new();
    let mut q = ApiQuery { from_ms: TimestampMs::MIN, to_ms: TimestampMs::MAX, ..ApiQuery::default() };
    let mut rest = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (k, v) in params {
        if !seen.insert(k.as_str()) {
            errors.push(field(k, "given more than once"));
            continue;
        }
        match k.as_str() {
            "from_ms" | "to_ms" if spec.allowed.contains(&k.as_str()) => match v.parse::<i64>() {
                Ok(t) if k == "from_ms" => q.from_ms = t,
                Ok(t) => q.to_ms = t,
                Err(_) => errors.push(field(k, "must be an integer millisecond timestamp")),
            },
            "group_by" if spec.allowed.contains(&"group_by") => match v.as_str() {
                "route" => q.group_by = Some(GroupBy::Route),
                "fleet" => q.group_by = Some(GroupBy::Fleet),
                "segment" => q.group_by = Some(GroupBy::Segment),
                _ => errors.push(field(k, "must be one of route, fleet, segment")),
            },
            "fleet" if spec.allowed.contains(&"fleet") => match v.parse::<FleetKind>() {
                Ok(f) => q.fleet = Some(f),
                Err(_) => errors.push(field(k, "must be one of diesel, electric, hybrid")),
            },
            "route_id" if spec.allowed.contains(&"route_id") => {
                if v.is_empty() || v.chars().any(|c| c.is_whitespace() || c.is_control()) {
                    errors.push(field(k, "must be a non-empty token"));
                } else {
                    q.route_id = Some(v.clone());
                }
            }
            "bbox" if spec.allowed.contains(&"bbox") => match parse_bbox(v) {
                Ok(b) => q.bbox = Some(b),
                Err(m) => errors.push(field(k, m)),
            },
            other if spec.allowed.contains(&other) => rest.push((k.clone(), v.clone())),
            _ => errors.push(field(k, "unknown parameter")),
        }
    }
    if spec.time_required {
        for k in ["from_ms", "to_ms"] {
            if !seen.contains(k) {
                errors.push(field(k, "required"));
            }
        }
    }
    if spec.group_by_required && !seen.contains("group_by") {
        errors.push(field("group_by", "required"));
    }
    if spec.bbox_required && !seen.contains("bbox") {
        errors.push(field("bbox", "required"));
    }
    if errors.is_empty() && q.from_ms > q.to_ms {
        errors.push(field("from_ms", "must not be after to_ms"));
    }
    if errors.is_empty() {
        Ok((q, rest))
    } else {
        Err(ApiError::invalid(errors))
    }
}

fn units() -> Value {
    json!({ "energy": "kWh", "distance": "mile", "consumption": "kWh/mile" })
}

/// Shared state behind every handler.
pub struct Gateway {
    broker: Arc<Broker>,
    cap: Capability,
    cfg: GatewayConfig,
    store: RwLock<GeoStore>,
    network: Option<RoadNetwork>,
}

impl Gateway {
    /// Loads the road network from `cfg.static_dir` when configured; the store starts empty.
    pub fn new(broker: Arc<Broker>, cap: Capability, cfg: GatewayConfig) -> Result<Self, tdm_core::static_data::StaticDataError> {
        let network = match &cfg.static_dir {
            Some(dir) => Some(StaticBundle::load(dir)?.network),
            None => None,
        };
        Ok(Self::with_network(broker, cap, cfg, network))
    }

    pub fn with_network(broker: Arc<Broker>, cap: Capability, cfg: GatewayConfig, network: Option<RoadNetwork>) -> Self {
        let store = RwLock::new(GeoStore::new(cfg.energy));
        Self { broker, cap, cfg, store, network }
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    /// Replay joined records published since the last refresh. A missing joined topic is an empty store.
    pub fn refresh(&self) -> Result<ReplayStats, GeoStoreError> {
        let mut store = self.store.write();
        match store.catch_up(&self.broker, &self.cfg.joined_topic, &self.cap) {
            Err(GeoStoreError::Ledger(LedgerError::UnknownTopic(_))) => Ok(ReplayStats::default()),
            r => r,
        }
    }

    pub fn store_len(&self) -> usize {
        self.store.read().len()
    }

    pub fn aggregate(&self, params: &[(String, String)]) -> Result<Value, ApiError> {
        let spec = Spec {
            allowed: &["from_ms", "to_ms", "group_by", "fleet", "route_id", "bbox"],
            time_required: true,
            group_by_required: true,
            bbox_required: false,
        };
        let (q, _) = parse_params(params, spec)?;
        let group_by = q.group_by.expect("required");
        let agg = self.store.read().aggregate_energy(group_by, &q.filter())?;
        Ok(json!({
            "query": q,
            "units": units(),
            "rows": agg.rows,
            "skipped_intervals": agg.skipped_intervals,
            "charging_intervals": agg.charging_intervals,
        }))
    }

    pub fn segments(&self, params: &[(String, String)]) -> Result<Value, ApiError> {
        let spec = Spec {
            allowed: &["from_ms", "to_ms", "fleet", "route_id", "bbox"],
            time_required: true,
            group_by_required: false,
            bbox_required: true,
        };
        let (q, _) = parse_params(params, spec)?;
        let network = self.network.as_ref().ok_or_else(|| ApiError::internal("no road network loaded; set gateway.static_dir"))?;
        let bbox = q.bbox.expect("required");
        let filter = AggregateFilter { bbox: None, ..q.filter() };
        let segments = self.store.read().segment_rows(network, &bbox, &filter)?;
        Ok(json!({ "query": q, "units": units(), "segments": segments }))
    }

    pub fn alerts(&self, params: &[(String, String)]) -> Result<Value, ApiError> {
        let spec = Spec { allowed: &["from_ms", "to_ms", "limit", "cursor"], time_required: false, group_by_required: false, bbox_required: false };
        let (q, rest) = parse_params(params, spec)?;
        let mut limit = DEFAULT_ALERT_LIMIT;
        let mut before: Option<(TimestampMs, u64)> = None;
        let mut errors = Vec::new();
        for (k, v) in &rest {
            match k.as_str() {
                "limit" => match v.parse::<usize>() {
                    Ok(n) if (1..=MAX_ALERT_LIMIT).contains(&n) => limit = n,
                    _ => errors.push(field(k, format!("must be an integer in 1..={MAX_ALERT_LIMIT}"))),
                },
                _ => match parse_cursor(v) {
                    Some(c) => before = Some(c),
                    None => errors.push(field(k, "malformed cursor")),
                },
            }
        }
        if !errors.is_empty() {
            return Err(ApiError::invalid(errors));
        }

        let mut found: Vec<(TimestampMs, u64, Value)> = Vec::new();
        let mut bad = None;
        let scan = self.broker.scan_range(&self.cfg.alerts_topic, q.from_ms, q.to_ms, &self.cap, |env| {
            if before.is_some_and(|b| (env.ts_ms, env.offset) >= b) {
                return;
            }
            match serde_json::from_slice::<Alert>(&env.payload) {
                Ok(a) => {
                    let mut v = serde_json::to_value(&a).expect("serializable");
                    v["ts_ms"] = json!(env.ts_ms);
                    v["offset"] = json!(env.offset);
                    found.push((env.ts_ms, env.offset, v));
                }
                Err(e) => bad = Some(format!("alert at offset {}: {e}", env.offset)),
            }
        });
        match scan {
            Ok(()) | Err(LedgerError::UnknownTopic(_)) => {}
            Err(e) => return Err(e.into()),
        }
        if let Some(m) = bad {
            return Err(ApiError::internal(m));
        }
        found.sort_by_key(|a| std::cmp::Reverse((a.0, a.1)));
        let next_cursor = (found.len() > limit).then(|| format!("{}.{}", found[limit - 1].0, found[limit - 1].1));
        found.truncate(limit);
        let alerts: Vec<Value> = found.into_iter().map(|(_, _, v)| v).collect();
        let mut query = json!({ "limit": limit });
        if params.iter().any(|(k, _)| k == "from_ms") {
            query["from_ms"] = json!(q.from_ms);
        }
        if params.iter().any(|(k, _)| k == "to_ms") {
            query["to_ms"] = json!(q.to_ms);
        }
        if let Some((t, o)) = before {
            query["cursor"] = json!(format!("{t}.{o}"));
        }
        Ok(json!({ "query": query, "alerts": alerts, "next_cursor": next_cursor }))
    }

    pub fn topic_stats(&self, params: &[(String, String)]) -> Result<Value, ApiError> {
        if let Some((k, _)) = params.first() {
            return Err(ApiError::invalid(vec![field(k, "unknown parameter")]));
        }
        let topics = self.broker.all_topic_stats(&self.cap);
        let last_report = match &self.cfg.report_dir {
            Some(dir) => latest_report(dir).map_err(ApiError::internal)?,
            None => None,
        };
        Ok(json!({ "topics": topics, "last_report": last_report }))
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/api/v1/aggregate", get(aggregate))
            .route("/api/v1/segments", get(segments))
            .route("/api/v1/alerts", get(alerts))
            .route("/api/v1/topics/stats", get(topic_stats))
            .merge(crate::wire::routes())
            .fallback(not_found)
            .layer(middleware::from_fn(fixed_headers))
            .with_state(self)
    }
}

fn parse_cursor(s: &str) -> Option<(TimestampMs, u64)> {
    let (t, o) = s.rsplit_once('.')?;
    Some((t.parse().ok()?, o.parse().ok()?))
}

/// Summary of the newest `<date>.json` report in `dir`.
fn latest_report(dir: &Path) -> Result<Option<Value>, String> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(format!("{}: {e}", dir.display())),
    };
    let newest = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.parse::<chrono::NaiveDate>().is_ok()))
        .max();
    let Some(path) = newest else { return Ok(None) };
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let r: NightlyReport = serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(Some(json!({
        "date": r.date,
        "complete": r.complete,
        "alert_count": r.alerts.len(),
        "topics": r.topics.iter().map(|t| json!({ "topic": t.topic, "status": t.status, "observed": t.observed })).collect::<Vec<_>>(),
        "coverage": { "trips_checked": r.coverage.trips_checked, "trips_covered": r.coverage.trips_covered, "gaps": r.coverage.gaps },
        "errors": r.errors,
    })))
}

type Params = Query<Vec<(String, String)>>;

async fn run(gw: Arc<Gateway>, f: impl FnOnce(&Gateway) -> Result<Value, ApiError> + Send + 'static) -> Response {
    match tokio::task::spawn_blocking(move || f(&gw)).await {
        Ok(Ok(v)) => Json(v).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => ApiError::internal(e.to_string()).into_response(),
    }
}

async fn aggregate(State(gw): State<Arc<Gateway>>, Query(p): Params) -> Response {
    run(gw, move |g| g.aggregate(&p)).await
}

async fn segments(State(gw): State<Arc<Gateway>>, Query(p): Params) -> Response {
    run(gw, move |g| g.segments(&p)).await
}

async fn alerts(State(gw): State<Arc<Gateway>>, Query(p): Params) -> Response {
    run(gw, move |g| g.alerts(&p)).await
}

async fn topic_stats(State(gw): State<Arc<Gateway>>, Query(p): Params) -> Response {
    run(gw, move |g| g.topic_stats(&p)).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn fixed_headers(req: Request<axum::body::Body>, next: Next) -> Response {
    let preflight = req.method() == Method::OPTIONS;
    let mut res = if preflight { StatusCode::NO_CONTENT.into_response() } else { next.run(req).await };
    let h = res.headers_mut();
    if !preflight {
        h.insert(header::CONTENT_TYPE, HeaderValue::from_static(JSON_CONTENT_TYPE));
    }
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, PUT, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("authorization, content-type"));
    res
}
