//! Local HTTP service for live teaching: sessions hold a simulated arm,
//! a trace recorder, trained feature nets and a reward model.
//!
//! Every JSON response carries `"schema": "ferl-service/1"`; the trace
//! export is the versioned trace file format. Floats are written in
//! shortest round-trip form, so a correctly rounding JSON parser recovers
//! them bit for bit. Routes:
//!
//! | method | path | body / query |
//! |---|---|---|
//! | POST | `/sessions` | `{features?, theta?}` |
//! | GET | `/sessions/{id}` | |
//! | GET | `/sessions/{id}/scene` | |
//! | POST | `/sessions/{id}/drag` | `{target: [x, y, z]}` |
//! | POST | `/sessions/{id}/trace/start` | `{feature?}` |
//! | POST | `/sessions/{id}/trace/append` | `{q?}` |
//! | POST | `/sessions/{id}/trace/save` | `{rating_start?, rating_end?}` (0-10) |
//! | POST | `/sessions/{id}/trace/discard` | |
//! | GET | `/sessions/{id}/traces` | trace file text |
//! | POST | `/sessions/{id}/train` | `{encoding?, epochs?, seed?}` |
//! | GET | `/sessions/{id}/jobs/{job}` | |
//! | GET | `/sessions/{id}/field` | `?net=&samples=&seed=` |
//! | POST | `/sessions/{id}/plan` | `{start, goal}` |
//! | POST | `/sessions/{id}/corrections` | `{index, delta}` |
//! | POST | `/sessions/{id}/ferl-step` | `{seed?}` |
//! | GET | `/sessions/{id}/stream` | server-sent `state` events |

use std::collections::{HashMap, VecDeque};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast;

use ferl::arm::{forward_kinematics, JointConfig};
use ferl::eval::feature_field;
use ferl::gt::GtFeatureId;
use ferl::ik::{ik_step, IkConfig, OrientationGoal};
use ferl::io::traces_to_string;
use ferl::learner::{train_feature, train_feature_auto, FeatureNet, TrainConfig};
use ferl::planner::{plan, Correction, PlanConfig, Trajectory};
use ferl::reward::{ferl_step, BetaBelief, FerlConfig, RewardModel, StoredSource};
use ferl::scene::Scene;
use ferl::state::{raw_state, Encoding, RawState};
use ferl::traces::{rating_to_label, validate_trace, FeatureTrace, TraceMeta};
use ferl::FerlError;

pub const SCHEMA: &str = "ferl-service/1";
/// Field samples allowed per request.
pub const MAX_FIELD_SAMPLES: usize = 100_000;
const STREAM_CAPACITY: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl From<FerlError> for ApiError {
    fn from(e: FerlError) -> Self {
        ApiError::Invalid(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "schema": SCHEMA, "error": self.to_string() }))).into_response()
    }
}

type ApiResult = Result<Json<Value>, ApiError>;

#[derive(Clone, Debug, PartialEq)]
pub enum JobStatus {
    Running,
    Done { net: usize },
    Failed(String),
}

pub struct Session {
    pub scene: Scene,
    pub q: JointConfig,
    /// Feature name and buffered states while recording.
    pub recording: Option<(String, Vec<RawState>)>,
    pub saved: Vec<FeatureTrace>,
    pub nets: Vec<Arc<FeatureNet>>,
    pub jobs: Vec<JobStatus>,
    pub model: RewardModel,
    pub belief: BetaBelief,
    pub trajectory: Option<Trajectory>,
    pub corrections: VecDeque<Correction>,
    stream: broadcast::Sender<String>,
}

impl Session {
    fn new(scene: Scene, model: RewardModel) -> Session {
        Session {
            scene,
            q: JointConfig::HOME,
            recording: None,
            saved: Vec::new(),
            nets: Vec::new(),
            jobs: Vec::new(),
            model,
            belief: BetaBelief::default(),
            trajectory: None,
            corrections: VecDeque::new(),
            stream: broadcast::channel(STREAM_CAPACITY).0,
        }
    }

    fn arm_state(&self) -> Value {
        let p = forward_kinematics(&self.q.clamped()).map(|p| p.ee_position()).map(|p| [p.x, p.y, p.z]);
        json!({ "schema": SCHEMA, "q": self.q.0, "ee": p.ok() })
    }

    fn publish(&self) {
        // No subscribers is fine.
        let _ = self.stream.send(self.arm_state().to_string());
    }

    fn buffer_len(&self) -> usize {
        self.recording.as_ref().map_or(0, |r| r.1.len())
    }
}

pub struct AppState {
    scene: Scene,
    sessions: RwLock<HashMap<u64, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(scene: Scene) -> Shared {
        Arc::new(AppState {
            scene,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn session(&self, id: u64) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("session {id}")))
    }
}

fn lock(s: &Mutex<Session>) -> std::sync::MutexGuard<'_, Session> {
    s.lock().unwrap_or_else(|p| p.into_inner())
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/scene", get(get_scene))
        .route("/sessions/{id}/drag", post(drag))
        .route("/sessions/{id}/trace/start", post(trace_start))
        .route("/sessions/{id}/trace/append", post(trace_append))
        .route("/sessions/{id}/trace/save", post(trace_save))
        .route("/sessions/{id}/trace/discard", post(trace_discard))
        .route("/sessions/{id}/traces", get(get_traces))
        .route("/sessions/{id}/train", post(train))
        .route("/sessions/{id}/jobs/{job}", get(get_job))
        .route("/sessions/{id}/field", get(get_field))
        .route("/sessions/{id}/plan", post(plan_route))
        .route("/sessions/{id}/corrections", post(queue_correction))
        .route("/sessions/{id}/ferl-step", post(run_ferl_step))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(state)
}

/// Serves until the process ends.
pub async fn serve(addr: SocketAddr, scene: Scene) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(scene))).await
}

fn body<T: Default + for<'de> Deserialize<'de>>(raw: Option<Json<Value>>) -> Result<T, ApiError> {
    match raw {
        None => Ok(T::default()),
        Some(Json(v)) if v.is_null() => Ok(T::default()),
        Some(Json(v)) => serde_json::from_value(v).map_err(|e| ApiError::Invalid(format!("bad body: {e}"))),
    }
}

fn required<T: for<'de> Deserialize<'de>>(raw: Option<Json<Value>>) -> Result<T, ApiError> {
    let Json(v) = raw.ok_or_else(|| ApiError::Invalid("missing JSON body".into()))?;
    serde_json::from_value(v).map_err(|e| ApiError::Invalid(format!("bad body: {e}")))
}

fn joint_config(v: &[f64]) -> Result<JointConfig, ApiError> {
    let q = JointConfig::from_slice(v)?;
    q.check_limits()?;
    Ok(q)
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    features: Option<Vec<String>>,
    theta: Option<Vec<f64>>,
}

async fn create_session(State(app): State<Shared>, raw: Option<Json<Value>>) -> ApiResult {
    let b: CreateBody = body(raw)?;
    let ids: Vec<GtFeatureId> = match b.features {
        Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?,
        None => vec![GtFeatureId::Coffee, GtFeatureId::Table],
    };
    let theta = b.theta.unwrap_or_else(|| {
        ids.iter().map(|id| if *id == GtFeatureId::Coffee { 0.0 } else { 10.0 }).collect()
    });
    let model = RewardModel::gt(app.scene.clone(), &ids, theta)?;
    let id = app.next_id.fetch_add(1, Ordering::Relaxed);
    let session = Session::new(app.scene.clone(), model);
    let reply = json!({ "schema": SCHEMA, "session": id, "scene_hash": app.scene.hash_hex(), "q": session.q.0 });
    app.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
    Ok(Json(reply))
}

async fn get_session(State(app): State<Shared>, Path(id): Path<u64>) -> ApiResult {
    let s = app.session(id)?;
    let s = lock(&s);
    let mut v = s.arm_state();
    let features: Vec<String> = s.model.features().iter().map(|f| f.name()).collect();
    let extra = json!({
        "session": id,
        "recording": s.recording.is_some(),
        "buffer_len": s.buffer_len(),
        "saved": s.saved.len(),
        "nets": s.nets.len(),
        "features": features,
        "theta": s.model.theta(),
        "queued_corrections": s.corrections.len(),
    });
    v.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    Ok(Json(v))
}

async fn get_scene(State(app): State<Shared>, Path(id): Path<u64>) -> ApiResult {
    let s = app.session(id)?;
    let s = lock(&s);
    let scene = serde_json::to_value(&s.scene).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(json!({ "schema": SCHEMA, "scene_hash": s.scene.hash_hex(), "scene": scene })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DragBody {
    target: [f64; 3],
}

/// One damped-least-squares step toward the target, clamped to the
/// workspace. While recording, the new state is appended.
async fn drag(State(app): State<Shared>, Path(id): Path<u64>, raw: Option<Json<Value>>) -> ApiResult {
    let b: DragBody = required(raw)?;
    if b.target.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::Invalid("target must be finite".into()));
    }
    let s = app.session(id)?;
    let mut s = lock(&s);
    let target = s.scene.workspace.clamp(b.target);
    let q = ik_step(&s.q, &target, &OrientationGoal::Free, &IkConfig::default()).clamped();
    let state = raw_state(&q, &s.scene)?;
    s.q = q;
    if let Some((_, buf)) = s.recording.as_mut() {
        buf.push(state);
    }
    s.publish();
    let mut v = s.arm_state();
    v["target"] = json!(target);
    v["buffer_len"] = json!(s.buffer_len());
    Ok(Json(v))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartBody {
    feature: Option<String>,
}

async fn trace_start(State(app): State<Shared>, Path(id): Path<u64>, raw: Option<Json<Value>>) -> ApiResult {
    let b: StartBody = body(raw)?;
    let s = app.session(id)?;
    let mut s = lock(&s);
    if s.recording.is_some() {
        return Err(ApiError::Conflict("already recording".into()));
    }
    s.recording = Some((b.feature.unwrap_or_else(|| "unknown".into()), Vec::new()));
    Ok(Json(json!({ "schema": SCHEMA, "recording": true, "buffer_len": 0 })))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppendBody {
    q: Option<Vec<f64>>,
}

/// Appends the given configuration, or the current one, to the buffer.
async fn trace_append(State(app): State<Shared>, Path(id): Path<u64>, raw: Option<Json<Value>>) -> ApiResult {
    let b: AppendBody = body(raw)?;
    let s = app.session(id)?;
    let mut s = lock(&s);
    if s.recording.is_none() {
        return Err(ApiError::Conflict("not recording".into()));
    }
    let q = match b.q {
        Some(v) => joint_config(&v)?,
        None => s.q,
    };
    let state = raw_state(&q, &s.scene)?;
    s.q = q;
    s.recording.as_mut().unwrap().1.push(state);
    s.publish();
    Ok(Json(json!({ "schema": SCHEMA, "recording": true, "buffer_len": s.buffer_len() })))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SaveBody {
    rating_start: Option<f64>,
    rating_end: Option<f64>,
}

/// Validates the buffer into a trace. A rejected buffer stays recording.
async fn trace_save(State(app): State<Shared>, Path(id): Path<u64>, raw: Option<Json<Value>>) -> ApiResult {
    let b: SaveBody = body(raw)?;
    let s = app.session(id)?;
    let mut s = lock(&s);
    let Some((feature, states)) = s.recording.clone() else {
        return Err(ApiError::Conflict("not recording".into()));
    };
    let label_start = b.rating_start.map(rating_to_label).transpose()?;
    let label_end = b.rating_end.map(rating_to_label).transpose()?;
    let meta = TraceMeta {
        feature,
        seed: 0,
        protocol: "ui".into(),
        scene_hash: s.scene.hash_hex(),
    };
    let trace = validate_trace(states, label_start, label_end, meta)?;
    s.saved.push(trace);
    s.recording = None;
    Ok(Json(json!({ "schema": SCHEMA, "recording": false, "saved": s.saved.len() })))
}

async fn trace_discard(State(app): State<Shared>, Path(id): Path<u64>) -> ApiResult {
    let s = app.session(id)?;
    let mut s = lock(&s);
    if s.recording.take().is_none() {
        return Err(ApiError::Conflict("not recording".into()));
    }
    Ok(Json(json!({ "schema": SCHEMA, "recording": false, "saved": s.saved.len() })))
}

async fn get_traces(State(app): State<Shared>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    let s = app.session(id)?;
    let text = traces_to_string(&lock(&s).saved);
    Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response())
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainBody {
    /// An encoding tag, or `auto` for the subspace heuristic.
    encoding: Option<String>,
    epochs: Option<usize>,
    seed: Option<u64>,
}

/// Starts a training job on the saved traces and returns its id at once.
async fn train(State(app): State<Shared>, Path(id): Path<u64>, raw: Option<Json<Value>>) -> ApiResult {
    let b: TrainBody = body(raw)?;
    let encoding = b.encoding.unwrap_or_else(|| "auto".into());
    let auto = encoding == "auto";
    let mut cfg = TrainConfig {
        seed: b.seed.unwrap_or(0),
        ..TrainConfig::default()
    };
    if !auto {
        cfg.encoding = encoding.parse::<Encoding>()?;
    }
    if let Some(e) = b.epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let session = app.session(id)?;
    let (job, traces) = {
        let mut s = lock(&session);
        if s.saved.is_empty() {
            return Err(ApiError::Invalid("no saved traces to train on".into()));
        }
        if auto && s.saved.len() < 2 {
            return Err(ApiError::Invalid("subspace selection needs at least 2 traces".into()));
        }
        s.jobs.push(JobStatus::Running);
        (s.jobs.len() - 1, s.saved.clone())
    };
    tokio::task::spawn_blocking(move || {
        let result = if auto {
            train_feature_auto(&traces, &cfg)
        } else {
            train_feature(&traces, &cfg)
        };
        let mut s = lock(&session);
        s.jobs[job] = match result {
            Ok(net) => {
                s.nets.push(Arc::new(net));
                JobStatus::Done { net: s.nets.len() - 1 }
            }
            Err(e) => JobStatus::Failed(e.to_string()),
        };
    });
    Ok(Json(json!({ "schema": SCHEMA, "job": job, "status": "running" })))
}

async fn get_job(State(app): State<Shared>, Path((id, job)): Path<(u64, usize)>) -> ApiResult {
    let s = app.session(id)?;
    let s = lock(&s);
    let status = s.jobs.get(job).ok_or_else(|| ApiError::NotFound(format!("job {job}")))?;
    Ok(Json(match status {
        JobStatus::Running => json!({ "schema": SCHEMA, "job": job, "status": "running" }),
        JobStatus::Done { net } => json!({ "schema": SCHEMA, "job": job, "status": "done", "net": net }),
        JobStatus::Failed(e) => json!({ "schema": SCHEMA, "job": job, "status": "failed", "error": e }),
    }))
}

#[derive(Deserialize)]
struct FieldQuery {
    net: Option<usize>,
    samples: Option<usize>,
    seed: Option<u64>,
}

/// `points` lists `[x, y, z, value]` at the EE of reachable sampled states.
async fn get_field(State(app): State<Shared>, Path(id): Path<u64>, Query(q): Query<FieldQuery>) -> ApiResult {
    let (net, scene) = {
        let s = app.session(id)?;
        let s = lock(&s);
        let k = match q.net {
            Some(k) => k,
            None => s.nets.len().checked_sub(1).ok_or_else(|| ApiError::NotFound("trained net".into()))?,
        };
        let net = s.nets.get(k).cloned().ok_or_else(|| ApiError::NotFound(format!("net {k}")))?;
        (net, s.scene.clone())
    };
    let samples = q.samples.unwrap_or(1000);
    if samples == 0 || samples > MAX_FIELD_SAMPLES {
        return Err(ApiError::Invalid(format!("samples must be in 1..={MAX_FIELD_SAMPLES}")));
    }
    let seed = q.seed.unwrap_or(0);
    let points = tokio::task::spawn_blocking(move || feature_field(&net, &scene, samples, seed))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(json!({ "schema": SCHEMA, "samples": samples, "seed": seed, "points": points })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanBody {
    start: Vec<f64>,
    goal: Vec<f64>,
}

async fn plan_route(State(app): State<Shared>, Path(id): Path<u64>, raw: Option<Json<Value>>) -> ApiResult {
    let b: PlanBody = required(raw)?;
    let start = joint_config(&b.start)?;
    let goal = joint_config(&b.goal)?;
    let session = app.session(id)?;
    let (model, scene) = {
        let s = lock(&session);
        (s.model.clone(), s.scene.clone())
    };
    let traj = tokio::task::spawn_blocking(move || plan(&model, &start, &goal, &scene, &PlanConfig::default()))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let waypoints: Vec<[f64; 7]> = traj.waypoints.iter().map(|q| q.0).collect();
    lock(&session).trajectory = Some(traj);
    Ok(Json(json!({ "schema": SCHEMA, "waypoints": waypoints })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrectionBody {
    index: usize,
    delta: [f64; 7],
}

async fn queue_correction(State(app): State<Shared>, Path(id): Path<u64>, raw: Option<Json<Value>>) -> ApiResult {
    let b: CorrectionBody = required(raw)?;
    if b.delta.iter().any(|v| !v.is_finite()) {
        return Err(ApiError::Invalid("delta must be finite".into()));
    }
    let s = app.session(id)?;
    let mut s = lock(&s);
    s.corrections.push_back(Correction {
        index: b.index,
        delta: b.delta,
    });
    Ok(Json(json!({ "schema": SCHEMA, "queued": s.corrections.len() })))
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    seed: Option<u64>,
}

/// Applies the oldest queued correction to the current plan. Feature
/// traces, when needed, come from the saved traces.
async fn run_ferl_step(State(app): State<Shared>, Path(id): Path<u64>, raw: Option<Json<Value>>) -> ApiResult {
    let b: StepBody = body(raw)?;
    let session = app.session(id)?;
    let (model, belief, traj, correction, traces) = {
        let mut s = lock(&session);
        let traj = s.trajectory.clone().ok_or_else(|| ApiError::Conflict("no plan yet".into()))?;
        let c = s.corrections.pop_front().ok_or_else(|| ApiError::Conflict("no queued correction".into()))?;
        (s.model.clone(), s.belief.clone(), traj, c, s.saved.clone())
    };
    let cfg = FerlConfig {
        seed: b.seed.unwrap_or(0),
        ..FerlConfig::default()
    };
    let out = tokio::task::spawn_blocking(move || {
        let mut source = StoredSource(traces);
        ferl_step(&model, &belief, &correction, &traj, &mut source, &cfg)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    let features: Vec<String> = out.model.features().iter().map(|f| f.name()).collect();
    let waypoints: Vec<[f64; 7]> = out.trajectory.waypoints.iter().map(|q| q.0).collect();
    let reply = json!({
        "schema": SCHEMA,
        "beta_hat": out.beta_hat,
        "learned_feature": out.learned_feature,
        "features": features,
        "theta": out.model.theta(),
        "waypoints": waypoints,
    });
    let mut s = lock(&session);
    s.model = out.model;
    s.belief = out.belief;
    s.trajectory = Some(out.trajectory);
    Ok(Json(reply))
}

/// Arm state after every change, as `state` events.
async fn stream(
    State(app): State<Shared>,
    Path(id): Path<u64>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let s = app.session(id)?;
    let (rx, first) = {
        let s = lock(&s);
        (s.stream.subscribe(), s.arm_state().to_string())
    };
    let events = futures::stream::unfold((Some(first), rx), |(first, mut rx)| async move {
        if let Some(data) = first {
            return Some((Ok(Event::default().event("state").data(data)), (None, rx)));
        }
        loop {
            match rx.recv().await {
                Ok(data) => return Some((Ok(Event::default().event("state").data(data)), (None, rx))),
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
