// SPDX-License-Identifier: Apache-2.0

//! HTTP routes. Every body is JSON; every error is an [`ApiError`].

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::stream::{self, Stream, StreamExt};
use netorch_bgpd::{Origin, Prefix};
use netorch_core::autoscaler::{HealthSample, ScalePolicy};
use netorch_core::config::ConfigDocument;
use netorch_core::devsim::{Binding, Faults, SpawnOptions};
use netorch_core::events::Category;
use netorch_core::inventory::{DeviceDescriptor, DeviceFilter, Tenant};
use netorch_core::orchestrator::Orchestrator;
use netorch_core::provisioner::InstanceSpec;
use netorch_core::reconciler::TaskDocument;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::error::ApiError;

/// Longest a single long-poll request may block.
pub const MAX_WAIT: Duration = Duration::from_secs(60);

#[derive(Clone)]
pub struct AppState {
    pub orch: Arc<Orchestrator>,
    token: Option<Arc<str>>,
}

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(b: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    b.map(|Json(v)| v).map_err(ApiError::from)
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v).map_err(ApiError::from)
}

fn wait_for(secs: Option<f64>) -> Duration {
    secs.filter(|s| s.is_finite() && *s > 0.0)
        .map(Duration::from_secs_f64)
        .unwrap_or(Duration::ZERO)
        .min(MAX_WAIT)
}

/// The router. With `token` set, every route except `/healthz` requires
/// `Authorization: Bearer <token>`.
pub fn router(orch: Arc<Orchestrator>, token: Option<String>) -> Router {
    let state = AppState {
        orch,
        token: token.map(Arc::from),
    };
    let api = Router::new()
        .route("/devices", get(list_devices).post(add_device))
        .route("/devices/{id}", get(get_device))
        .route("/devices/{id}/probe", post(probe_device))
        .route("/tenants", get(list_tenants).post(add_tenant))
        .route("/tasks", get(list_tasks).post(submit_task))
        .route("/tasks/{id}", get(get_task))
        .route("/instances", get(list_instances).post(create_instances))
        .route("/instances/{id}", get(get_instance).delete(terminate_instance))
        .route("/instances/{id}/validate", post(validate_instance))
        .route("/instances/{id}/fresh-install", post(fresh_install))
        .route("/instances/{id}/retry", post(retry_instance))
        .route("/instances/{id}/disable", post(disable_instance))
        .route("/instances/{id}/health", post(ingest_health))
        .route("/policies", get(list_policies).post(set_policy))
        .route("/metrics", get(metrics))
        .route("/bgp", get(list_speakers))
        .route("/bgp/{speaker}/rib", get(rib))
        .route("/bgp/{speaker}/routes", post(originate))
        .route("/events", get(events))
        .route("/events/stream", get(event_stream))
        .route("/sim/devices", post(spawn_sim))
        .route("/sim/devices/{endpoint}", get(inspect_sim))
        .route("/sim/devices/{endpoint}/faults", put(set_faults))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth));
    Router::new()
        .route("/healthz", get(|| async { Json(json!({"status": "ok"})) }))
        .merge(api)
        .with_state(state)
}

async fn auth(State(st): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(&**token) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    router: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router).with_graceful_shutdown(shutdown).await
}

/// Bind an ephemeral loopback port and serve in the background. Returns
/// the base URL.
pub async fn spawn_local(orch: Arc<Orchestrator>, token: Option<String>) -> std::io::Result<String> {
    let listener = TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await?;
    let addr = listener.local_addr()?;
    let app = router(orch, token);
    tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });
    Ok(format!("http://{addr}"))
}

// Devices and tenants.

async fn list_devices(State(st): State<AppState>, q: Result<Query<DeviceFilter>, QueryRejection>) -> ApiResult<Json<Value>> {
    let filter = query(q)?;
    Ok(Json(json!(st.orch.inventory.list_devices(filter))))
}

async fn add_device(State(st): State<AppState>, b: Result<Json<DeviceDescriptor>, JsonRejection>) -> ApiResult<Response> {
    let d = st.orch.register_device(body(b)?).await?;
    Ok((StatusCode::CREATED, Json(d)).into_response())
}

async fn get_device(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.inventory.resolve(&id)?)))
}

async fn probe_device(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let r = st.orch.probe_device(&id).await?;
    Ok(Json(json!(st.orch.inventory.resolve(&id).map(|d| json!(d)).unwrap_or(json!({"reachability": r})))))
}

async fn list_tenants(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.orch.inventory.tenants()))
}

async fn add_tenant(State(st): State<AppState>, b: Result<Json<Tenant>, JsonRejection>) -> ApiResult<Response> {
    let t = st.orch.inventory.add_tenant(body(b)?)?;
    Ok((StatusCode::CREATED, Json(t)).into_response())
}

// Tasks.

#[derive(Deserialize, Default)]
struct WaitQuery {
    /// Seconds to block for completion.
    wait: Option<f64>,
}

async fn list_tasks(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.orch.tasks()))
}

async fn submit_task(
    State(st): State<AppState>,
    q: Result<Query<WaitQuery>, QueryRejection>,
    b: Result<Json<TaskDocument>, JsonRejection>,
) -> ApiResult<Response> {
    let wait = wait_for(query(q)?.wait);
    let rec = st.orch.submit_task(body(b)?)?;
    if wait.is_zero() {
        return Ok((StatusCode::ACCEPTED, Json(rec)).into_response());
    }
    let rec = st.orch.wait_task(&rec.id, wait).await.expect("task recorded");
    Ok((StatusCode::OK, Json(rec)).into_response())
}

async fn get_task(
    State(st): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<WaitQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let wait = wait_for(query(q)?.wait);
    let rec = if wait.is_zero() { st.orch.task(&id) } else { st.orch.wait_task(&id, wait).await };
    rec.map(|r| Json(json!(r)))
        .ok_or_else(|| ApiError::not_found("unknown_task", format!("unknown task {id:?}")))
}

// Instances.

async fn list_instances(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.orch.provisioner.list()))
}

async fn create_instances(
    State(st): State<AppState>,
    q: Result<Query<WaitQuery>, QueryRejection>,
    b: Result<Json<InstanceSpec>, JsonRejection>,
) -> ApiResult<Response> {
    let wait = wait_for(query(q)?.wait);
    let mut records = st.orch.provisioner.submit(&body(b)?)?;
    if !wait.is_zero() {
        for r in records.iter_mut() {
            *r = match st.orch.provisioner.wait_settled(&r.id, wait).await {
                Ok(done) => done,
                Err(_) => st.orch.provisioner.get(&r.id)?,
            };
        }
    }
    Ok((StatusCode::CREATED, Json(records)).into_response())
}

async fn get_instance(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.provisioner.get(&id)?)))
}

async fn terminate_instance(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.provisioner.terminate(&id).await?)))
}

async fn validate_instance(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.provisioner.validate(&id).await?)))
}

async fn fresh_install(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.provisioner.fresh_install(&id).await?)))
}

async fn retry_instance(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.provisioner.retry(&id)?)))
}

async fn disable_instance(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.provisioner.disable(&id)?)))
}

#[derive(Deserialize)]
struct HealthInput {
    utilization: f64,
    #[serde(default = "yes")]
    alive: bool,
    /// Defaults to the time of receipt.
    timestamp: Option<DateTime<Utc>>,
}

fn yes() -> bool {
    true
}

async fn ingest_health(
    State(st): State<AppState>,
    Path(id): Path<String>,
    b: Result<Json<HealthInput>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let h = body(b)?;
    let accepted = st.orch.autoscaler.ingest(HealthSample {
        instance_id: id,
        timestamp: h.timestamp.unwrap_or_else(Utc::now),
        utilization: h.utilization,
        alive: h.alive,
    })?;
    Ok(Json(json!({"accepted": accepted})))
}

// Policies and metrics.

async fn list_policies(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.orch.autoscaler.policies()))
}

async fn set_policy(State(st): State<AppState>, b: Result<Json<ScalePolicy>, JsonRejection>) -> ApiResult<Response> {
    let p = st.orch.set_policy(body(b)?)?;
    Ok((StatusCode::CREATED, Json(p)).into_response())
}

async fn metrics(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.orch.metrics()))
}

// BGP.

async fn list_speakers(State(st): State<AppState>) -> Json<Value> {
    Json(json!(st.orch.fabric.list()))
}

async fn rib(State(st): State<AppState>, Path(speaker): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.fabric.rib(&speaker)?)))
}

#[derive(Deserialize)]
struct RouteInput {
    prefix: String,
    #[serde(default)]
    origin: Origin,
    #[serde(default)]
    withdraw: bool,
}

async fn originate(
    State(st): State<AppState>,
    Path(speaker): Path<String>,
    b: Result<Json<RouteInput>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let r = body(b)?;
    let prefix: Prefix = r.prefix.parse()?;
    let snap = if r.withdraw {
        st.orch.fabric.withdraw(&speaker, prefix)?
    } else {
        st.orch.fabric.announce(&speaker, prefix, r.origin)?
    };
    Ok(Json(json!(snap)))
}

// Events.

#[derive(Deserialize, Default)]
struct EventQuery {
    #[serde(default)]
    since: u64,
    /// Long-poll: block up to this many seconds for the first new event.
    wait: Option<f64>,
    category: Option<Category>,
}

async fn events(State(st): State<AppState>, q: Result<Query<EventQuery>, QueryRejection>) -> ApiResult<Json<Value>> {
    let q = query(q)?;
    let wait = wait_for(q.wait);
    let mut out = if wait.is_zero() {
        st.orch.events.since(q.since)
    } else {
        st.orch.events.wait_since(q.since, wait).await
    };
    if let Some(c) = q.category {
        out.retain(|e| e.category == c);
    }
    Ok(Json(json!(out)))
}

/// Server-sent events, one per record, with the seq as the SSE id.
async fn event_stream(
    State(st): State<AppState>,
    q: Result<Query<EventQuery>, QueryRejection>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let q = query(q)?;
    let log = st.orch.events.clone();
    let category = q.category;
    let s = stream::unfold(q.since, move |since| {
        let log = log.clone();
        async move {
            let batch = log.wait_since(since, Duration::from_secs(15)).await;
            let next = batch.last().map(|e| e.seq).unwrap_or(since);
            let items: Vec<Result<Event, Infallible>> = batch
                .into_iter()
                .filter(|e| category.is_none_or(|c| c == e.category))
                .map(|e| {
                    Ok(Event::default()
                        .id(e.seq.to_string())
                        .data(serde_json::to_string(&e).expect("events serialize")))
                })
                .collect();
            Some((stream::iter(items), next))
        }
    })
    .flatten();
    Ok(Sse::new(s).keep_alive(KeepAlive::default()))
}

// Simulators.

#[derive(Deserialize)]
struct SimInput {
    dialect: String,
    #[serde(default)]
    initial: ConfigDocument,
    #[serde(default)]
    faults: Faults,
    #[serde(default)]
    ports: Vec<u16>,
    /// Bind a real loopback TCP port (0 picks one) instead of in-process.
    port: Option<u16>,
}

async fn spawn_sim(State(st): State<AppState>, b: Result<Json<SimInput>, JsonRejection>) -> ApiResult<Response> {
    let s = body(b)?;
    let binding = match s.port {
        Some(port) => Binding::Tcp { port },
        None => Binding::InProcess,
    };
    let opts = SpawnOptions::new(s.dialect)
        .initial(s.initial)
        .faults(s.faults)
        .ports(s.ports)
        .binding(binding);
    let endpoint = st.orch.spawn_sim(opts).await?;
    Ok((StatusCode::CREATED, Json(json!({"endpoint": endpoint}))).into_response())
}

async fn inspect_sim(State(st): State<AppState>, Path(endpoint): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!(st.orch.fleet.inspect(&endpoint)?)))
}

async fn set_faults(
    State(st): State<AppState>,
    Path(endpoint): Path<String>,
    b: Result<Json<Faults>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let f = body(b)?;
    st.orch.set_sim_faults(&endpoint, f.clone())?;
    Ok(Json(json!(f)))
}
