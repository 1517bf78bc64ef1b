//! JSON API over a single session.
//!
//! Reads clone an `Arc` of the current session and never wait on a running
//! mutation. Mutations take the writer lock, work on a private copy in a
//! blocking task and publish it only on success.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{BytesRejection, JsonRejection};
use axum::extract::{DefaultBodyLimit, FromRequest, Path, Query, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use reweighter_core::layout::{
    cluster_seed, features_of, sample_representatives, top_contributors, ClusterLayout, Contributor, DiffResult, GlyphKind, Side,
};
use reweighter_core::cocluster::CoClustering;
use reweighter_core::session::{Action, Event, FineTuneMetrics, Adjustment, Session};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::io::{self, IoError, LoadMode};

pub const BODY_LIMIT: usize = 10 * 1024 * 1024;
pub const CONTRIBUTORS_K: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.into(), message: message.into(), detail: None }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<reweighter_core::Error> for ApiError {
    fn from(e: reweighter_core::Error) -> Self {
        use reweighter_core::Error as E;
        let msg = e.to_string();
        match e {
            E::UnknownSample { id } => Self::new(StatusCode::NOT_FOUND, "unknown_sample", msg).with_detail(serde_json::json!({ "id": id })),
            E::InvalidClassIndex { id, label, num_classes } => Self::new(StatusCode::BAD_REQUEST, "invalid_label", msg)
                .with_detail(serde_json::json!({ "id": id, "label": label, "num_classes": num_classes })),
            E::AlreadyValidation { id } => {
                Self::new(StatusCode::CONFLICT, "already_validation", msg).with_detail(serde_json::json!({ "id": id }))
            }
            E::NothingToUndo => Self::new(StatusCode::CONFLICT, "nothing_to_undo", msg),
            E::NoQualityEvidence | E::EmptyHighQuality => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "no_quality_evidence", msg),
            E::DegenerateWeightMass(_) | E::ZeroEffectiveWeight => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "degenerate_weights", msg),
            E::NonFiniteObjective { iteration, .. } => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "optimizer_failed", msg).with_detail(serde_json::json!({ "iteration": iteration }))
            }
            E::NonFiniteLoss { .. } | E::InvalidBounds { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "optimizer_failed", msg),
            _ => Self::invalid(msg),
        }
    }
}

impl From<IoError> for ApiError {
    fn from(e: IoError) -> Self {
        let msg = e.to_string();
        match e {
            IoError::VersionMismatch { found } => {
                Self::new(StatusCode::BAD_REQUEST, "version_mismatch", msg).with_detail(serde_json::json!({ "found": found }))
            }
            IoError::Core(c) => c.into(),
            IoError::Io { .. } => Self::internal(msg),
            _ => Self::new(StatusCode::BAD_REQUEST, "corrupt_session", msg),
        }
    }
}

fn body_error(status: StatusCode, text: String) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(status, "payload_too_large", format!("request body exceeds {BODY_LIMIT} bytes"))
    } else {
        ApiError::invalid(text)
    }
}

/// `Json` whose rejections use the API error body.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: serde::de::DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(Self(v)),
            Err(r @ JsonRejection::BytesRejection(_)) => Err(body_error(r.status(), r.body_text())),
            Err(r) => Err(ApiError::invalid(r.body_text())),
        }
    }
}

/// Raw body text with the API error body on rejection.
struct ApiText(String);

impl<S: Send + Sync> FromRequest<S> for ApiText {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        let bytes = axum::body::Bytes::from_request(req, state).await.map_err(|r: BytesRejection| body_error(r.status(), r.body_text()))?;
        String::from_utf8(bytes.to_vec()).map(Self).map_err(|_| ApiError::invalid("body is not UTF-8"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecomputeStatus {
    pub running: bool,
    pub epoch: u64,
    /// Summary of the last finished recompute.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub last: Option<RecomputeSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecomputeSummary {
    pub epoch: u64,
    pub converged: bool,
    pub objective: f64,
    pub flagged: usize,
    pub millis: u64,
}

/// Server-side session holder.
pub struct AppState {
    current: RwLock<Arc<Session>>,
    writer: tokio::sync::Mutex<()>,
    status: Mutex<RecomputeStatus>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(session: Session) -> Shared {
        let epoch = session.state.epoch;
        Arc::new(Self {
            current: RwLock::new(Arc::new(session)),
            writer: tokio::sync::Mutex::new(()),
            status: Mutex::new(RecomputeStatus { running: false, epoch, last: None }),
        })
    }

    /// The last published session.
    pub fn snapshot(&self) -> Arc<Session> {
        self.current.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    fn publish(&self, session: Session) {
        *self.current.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(session);
    }

    fn set_status(&self, f: impl FnOnce(&mut RecomputeStatus)) {
        f(&mut self.status.lock().unwrap_or_else(|p| p.into_inner()));
    }

    /// Runs `op` on a copy of the session under the writer lock and publishes
    /// the copy only if `op` succeeds.
    async fn mutate<T, F>(&self, op: F) -> Result<(T, u64), ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
    {
        let _guard = self.writer.lock().await;
        let base = self.snapshot();
        let (session, out) = tokio::task::spawn_blocking(move || {
            let mut s = (*base).clone();
            let out = op(&mut s);
            (s, out)
        })
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?;
        let value = out?;
        let epoch = session.state.epoch;
        self.publish(session);
        Ok((value, epoch))
    }
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn strip_timestamps(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("timestamp");
            map.values_mut().for_each(strip_timestamps);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timestamps),
        _ => {}
    }
}

/// SHA-256 of the session document with audit timestamps removed.
pub fn state_hash(session: &Session) -> String {
    let mut v = serde_json::to_value(session).expect("session serializes");
    strip_timestamps(&mut v);
    let bytes = serde_json::to_vec(&v).expect("value serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub fn router(state: Shared, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/graph", get(graph))
        .route("/api/clusters", get(clusters))
        .route("/api/layout", get(layout))
        .route("/api/cluster/{id}/samples", get(cluster_samples))
        .route("/api/select", post(select))
        .route("/api/adjustments", post(adjustments))
        .route("/api/recompute", post(recompute))
        .route("/api/recompute/status", get(recompute_status))
        .route("/api/diff", get(diff))
        .route("/api/undo", post(undo))
        .route("/api/finetune", post(finetune))
        .route("/api/refresh", post(refresh))
        .route("/api/session", get(get_session).post(load_session))
        .route("/api/statehash", get(statehash))
        .route("/api/log", get(log))
        .fallback(not_found)
        .with_state(state);
    let app = match ui_dir {
        Some(dir) => api.nest_service("/ui", ServeDir::new(dir)),
        None => api,
    };
    app.layer(DefaultBodyLimit::max(BODY_LIMIT)).layer(CorsLayer::permissive())
}

/// Binds `addr` and serves until the process stops.
pub async fn serve(state: Shared, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, ui_dir)).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct GraphSummary<'a> {
    epoch: u64,
    m: usize,
    n: usize,
    val_ids: &'a [u64],
    train_ids: &'a [u64],
    val_weights: &'a [f64],
    train_weights: Vec<f64>,
    confidences: &'a [f64],
    s_plus: Vec<u64>,
    s_minus: Vec<u64>,
    pending: usize,
}

async fn graph(State(app): State<Shared>) -> Response {
    let s = app.snapshot();
    let st = &s.state;
    Json(GraphSummary {
        epoch: st.epoch,
        m: st.graph.m(),
        n: st.graph.n(),
        val_ids: &st.graph.val_ids,
        train_ids: &st.graph.train_ids,
        val_weights: &st.graph.val_weights,
        train_weights: st.training_weights(),
        confidences: &st.graph.confidences,
        s_plus: st.quality.s_plus.iter().copied().collect(),
        s_minus: st.quality.s_minus.iter().copied().collect(),
        pending: s.pending.len(),
    })
    .into_response()
}

#[derive(Serialize)]
struct ClustersBody<'a> {
    epoch: u64,
    /// Training groups cut at the hierarchy leaves; indexes the layout.
    clustering: &'a CoClustering,
    hierarchy: &'a CoClustering,
    layout: &'a ClusterLayout,
}

async fn clusters(State(app): State<Shared>) -> Response {
    let s = app.snapshot();
    let st = &s.state;
    Json(ClustersBody { epoch: st.epoch, clustering: &st.leaf_clustering, hierarchy: &st.clustering, layout: &st.layout }).into_response()
}

#[derive(Serialize)]
struct LayoutBody<'a> {
    epoch: u64,
    layout: &'a ClusterLayout,
}

async fn layout(State(app): State<Shared>) -> Response {
    let s = app.snapshot();
    Json(LayoutBody { epoch: s.state.epoch, layout: &s.state.layout }).into_response()
}

fn parse_cluster(id: &str) -> Option<(Side, usize)> {
    let (side, rest) = match id.as_bytes().first()? {
        b'v' => (Side::Validation, &id[1..]),
        b't' => (Side::Training, &id[1..]),
        _ => return None,
    };
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((side, rest.parse().ok()?))
}

#[derive(Deserialize)]
struct BudgetQuery {
    budget: Option<usize>,
}

#[derive(Serialize)]
struct SampleRow {
    id: u64,
    x: f64,
    /// Weight: `w^v` for validation samples, `w^s` for training samples.
    y: f64,
    observed_label: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    glyph: Option<GlyphKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quality: Option<&'static str>,
}

#[derive(Serialize)]
struct ClusterSamples {
    epoch: u64,
    cluster: String,
    side: Side,
    size: usize,
    samples: Vec<SampleRow>,
}

async fn cluster_samples(State(app): State<Shared>, Path(id): Path<String>, Query(q): Query<BudgetQuery>) -> Result<Response, ApiError> {
    let s = app.snapshot();
    let st = &s.state;
    let unknown = || ApiError::new(StatusCode::NOT_FOUND, "unknown_cluster", format!("no cluster {id:?}"));
    let (side, c) = parse_cluster(&id).ok_or_else(unknown)?;
    let cc = &st.leaf_clustering;
    let members = match side {
        Side::Validation => cc.row_groups.get(c),
        Side::Training => cc.col_groups.get(c),
    }
    .ok_or_else(unknown)?;
    let ids: Vec<u64> = match side {
        Side::Validation => members.iter().map(|&i| st.graph.val_ids[i]).collect(),
        Side::Training => members.iter().map(|&j| st.graph.train_ids[j]).collect(),
    };
    let budget = q.budget.unwrap_or(s.config.layout.representative_budget);
    let picks = {
        let feats = features_of(&st.dataset, &ids)?;
        let prioritized: Vec<bool> = match side {
            Side::Validation => vec![false; ids.len()],
            Side::Training => ids.iter().map(|&id| st.quality.contains(id)).collect(),
        };
        sample_representatives(&feats, &prioritized, budget, cluster_seed(s.config.layout.seed, side, c))
    };
    let positions = match side {
        Side::Validation => &st.layout.val_positions,
        Side::Training => &st.layout.train_positions,
    };
    let x_of = |id: u64| positions.iter().find(|p| p.id == id).map_or(0.5, |p| p.x);
    let w_s = st.training_weights();
    let samples = picks
        .into_iter()
        .map(|p| {
            let id = ids[p];
            let sample = st.dataset.sample(id).ok_or(reweighter_core::Error::UnknownSample { id })?;
            let row = match side {
                Side::Validation => {
                    let i = members[p];
                    SampleRow { id, x: x_of(id), y: st.graph.val_weights[i], observed_label: sample.observed_label, payload: sample.payload.clone(), glyph: None, confidence: None, quality: None }
                }
                Side::Training => {
                    let j = members[p];
                    SampleRow {
                        id,
                        x: x_of(id),
                        y: w_s[j],
                        observed_label: sample.observed_label,
                        payload: sample.payload.clone(),
                        glyph: Some(st.layout.glyphs[j].kind()),
                        confidence: Some(st.graph.confidences[j]),
                        quality: quality_tag(&s, id),
                    }
                }
            };
            Ok(row)
        })
        .collect::<Result<Vec<_>, reweighter_core::Error>>()?;
    Ok(Json(ClusterSamples { epoch: st.epoch, cluster: id, side, size: ids.len(), samples }).into_response())
}

fn quality_tag(s: &Session, id: u64) -> Option<&'static str> {
    let q = &s.state.quality;
    if q.s_plus.contains(&id) {
        Some("high")
    } else if q.s_minus.contains(&id) {
        Some("low")
    } else {
        None
    }
}

#[derive(Deserialize)]
struct SelectRequest {
    sample_ids: Vec<u64>,
    side: Side,
}

#[derive(Serialize)]
struct ContributorRow {
    id: u64,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    glyph: Option<GlyphKind>,
}

#[derive(Serialize)]
struct SelectRow {
    id: u64,
    weight: f64,
    observed_label: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    glyph: Option<GlyphKind>,
    positive: Vec<ContributorRow>,
    negative: Vec<ContributorRow>,
}

#[derive(Serialize)]
struct SelectBody {
    epoch: u64,
    side: Side,
    rows: Vec<SelectRow>,
}

async fn select(State(app): State<Shared>, ApiJson(req): ApiJson<SelectRequest>) -> Result<Response, ApiError> {
    let s = app.snapshot();
    let st = &s.state;
    let g = &st.graph;
    let w_s = st.training_weights();
    let train_glyph = |id: u64| g.train_index(id).map(|j| st.layout.glyphs[j].kind());
    let rows = req
        .sample_ids
        .iter()
        .map(|&id| {
            let c = top_contributors(g, req.side, id, CONTRIBUTORS_K)?;
            let (weight, glyph) = match req.side {
                Side::Validation => (g.val_weights[g.val_index(id).expect("checked by top_contributors")], None),
                Side::Training => (w_s[g.train_index(id).expect("checked by top_contributors")], train_glyph(id)),
            };
            let sample = st.dataset.sample(id).ok_or(reweighter_core::Error::UnknownSample { id })?;
            let conv = |list: Vec<Contributor>| -> Vec<ContributorRow> {
                list.into_iter()
                    .map(|c| ContributorRow {
                        id: c.id,
                        value: c.value,
                        glyph: match req.side {
                            Side::Validation => train_glyph(c.id),
                            Side::Training => None,
                        },
                    })
                    .collect()
            };
            Ok(SelectRow {
                id,
                weight,
                observed_label: sample.observed_label,
                payload: sample.payload.clone(),
                glyph,
                positive: conv(c.positive),
                negative: conv(c.negative),
            })
        })
        .collect::<Result<Vec<_>, reweighter_core::Error>>()?;
    Ok(Json(SelectBody { epoch: st.epoch, side: req.side, rows }).into_response())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AdjustmentBody {
    List(Vec<Action>),
    Wrapped { adjustments: Vec<Action> },
}

#[derive(Deserialize)]
struct ApplyQuery {
    apply: Option<String>,
}

#[derive(Serialize)]
struct AdjustmentsResponse {
    epoch: u64,
    seqs: Vec<u64>,
    applied: bool,
    pending: usize,
}

async fn adjustments(
    State(app): State<Shared>,
    Query(q): Query<ApplyQuery>,
    ApiJson(body): ApiJson<AdjustmentBody>,
) -> Result<Response, ApiError> {
    let immediate = match q.apply.as_deref() {
        None | Some("staged") => false,
        Some("immediate") => true,
        Some(other) => return Err(ApiError::invalid(format!("unknown apply mode {other:?}"))),
    };
    let actions = match body {
        AdjustmentBody::List(a) | AdjustmentBody::Wrapped { adjustments: a } => a,
    };
    if actions.is_empty() {
        return Err(ApiError::invalid("no adjustments given"));
    }
    let ts = now_millis();
    let ((seqs, pending), epoch) = app
        .mutate(move |s| {
            let seqs = if immediate {
                s.apply(actions, ts)?
            } else {
                // Staging never fails, so check the batch on a scratch copy first.
                s.clone().apply(actions.clone(), ts)?;
                s.stage(actions, ts)
            };
            Ok((seqs, s.pending.len()))
        })
        .await?;
    Ok(Json(AdjustmentsResponse { epoch, seqs, applied: immediate, pending }).into_response())
}

#[derive(Serialize)]
struct RecomputeResponse {
    epoch: u64,
    converged: bool,
    objective: f64,
    diff: DiffResult,
}

async fn recompute(State(app): State<Shared>) -> Result<Response, ApiError> {
    let started = std::time::Instant::now();
    let _status = {
        app.set_status(|st| st.running = true);
        StatusReset(app.clone())
    };
    let ts = now_millis();
    let (out, epoch) = app.mutate(move |s| Ok(s.recompute(ts)?)).await?;
    let summary = RecomputeSummary {
        epoch,
        converged: out.converged,
        objective: out.objective,
        flagged: out.diff.flagged_ids().len(),
        millis: started.elapsed().as_millis() as u64,
    };
    app.set_status(|st| st.last = Some(summary));
    Ok(Json(RecomputeResponse { epoch, converged: out.converged, objective: out.objective, diff: out.diff }).into_response())
}

/// Clears the running flag however the recompute ends.
struct StatusReset(Shared);

impl Drop for StatusReset {
    fn drop(&mut self) {
        let epoch = self.0.snapshot().state.epoch;
        self.0.set_status(|st| {
            st.running = false;
            st.epoch = epoch;
        });
    }
}

async fn recompute_status(State(app): State<Shared>) -> Json<RecomputeStatus> {
    let mut status = app.status.lock().unwrap_or_else(|p| p.into_inner()).clone();
    status.epoch = app.snapshot().state.epoch;
    Json(status)
}

#[derive(Deserialize)]
struct DiffQuery {
    pct: Option<f64>,
}

#[derive(Serialize)]
struct DiffBody {
    epoch: u64,
    flagged: Vec<u64>,
    diff: DiffResult,
}

async fn diff(State(app): State<Shared>, Query(q): Query<DiffQuery>) -> Result<Response, ApiError> {
    let pct = q.pct.unwrap_or(reweighter_core::session::DEFAULT_DIFF_PCT);
    if !(0.0..=100.0).contains(&pct) {
        return Err(ApiError::invalid(format!("pct must lie in [0, 100] (got {pct})")));
    }
    let s = app.snapshot();
    let d = s
        .state
        .diff(pct)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_snapshot", "no recompute has happened yet"))?;
    Ok(Json(DiffBody { epoch: s.state.epoch, flagged: d.flagged_ids(), diff: d }).into_response())
}

#[derive(Serialize)]
struct EpochBody {
    epoch: u64,
    pending: usize,
}

async fn undo(State(app): State<Shared>) -> Result<Response, ApiError> {
    let ts = now_millis();
    let (pending, epoch) = app
        .mutate(move |s| {
            s.undo(ts)?;
            Ok(s.pending.len())
        })
        .await?;
    Ok(Json(EpochBody { epoch, pending }).into_response())
}

#[derive(Serialize)]
struct FineTuneBody {
    epoch: u64,
    metrics: FineTuneMetrics,
}

async fn finetune(State(app): State<Shared>) -> Result<Response, ApiError> {
    let ts = now_millis();
    let (metrics, epoch) = app.mutate(move |s| Ok(s.fine_tune(ts)?)).await?;
    Ok(Json(FineTuneBody { epoch, metrics }).into_response())
}

async fn refresh(State(app): State<Shared>) -> Result<Response, ApiError> {
    let ts = now_millis();
    let (pending, epoch) = app
        .mutate(move |s| {
            s.refresh_influence(ts)?;
            Ok(s.pending.len())
        })
        .await?;
    Ok(Json(EpochBody { epoch, pending }).into_response())
}

async fn get_session(State(app): State<Shared>) -> Result<Response, ApiError> {
    let s = app.snapshot();
    let text = io::session_to_json(&s).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], text).into_response())
}

#[derive(Deserialize)]
struct LoadQuery {
    mode: Option<String>,
}

#[derive(Serialize)]
struct LoadBody {
    epoch: u64,
    statehash: String,
}

async fn load_session(State(app): State<Shared>, Query(q): Query<LoadQuery>, ApiText(text): ApiText) -> Result<Response, ApiError> {
    let mode = match q.mode.as_deref() {
        None | Some("restore") => LoadMode::Restore,
        Some("replay") => LoadMode::Replay,
        Some("verify") => LoadMode::Verify,
        Some(other) => return Err(ApiError::invalid(format!("unknown load mode {other:?}"))),
    };
    let (hash, epoch) = app
        .mutate(move |s| {
            *s = io::session_from_json(&text, mode)?;
            Ok(state_hash(s))
        })
        .await?;
    Ok(Json(LoadBody { epoch, statehash: hash }).into_response())
}

async fn statehash(State(app): State<Shared>) -> Json<Value> {
    let s = app.snapshot();
    Json(serde_json::json!({ "epoch": s.state.epoch, "statehash": state_hash(&s) }))
}

#[derive(Serialize)]
struct LogBody<'a> {
    epoch: u64,
    events: &'a [Event],
    pending: &'a [Adjustment],
}

async fn log(State(app): State<Shared>) -> Response {
    let s = app.snapshot();
    Json(LogBody { epoch: s.state.epoch, events: &s.log, pending: &s.pending }).into_response()
}
