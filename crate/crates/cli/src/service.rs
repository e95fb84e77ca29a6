//! HTTP API over an in-memory catalog with file-backed sessions.
//!
//! Concurrency: the catalog is immutable and shared; each session has its own
//! async mutex so recommend/feedback calls on one session run one at a time;
//! the exposure ledger has a single writer lock and readers work on a clone.
//!
//! Retries: every POST body accepts an optional `request_id`. A repeated id
//! returns the stored response of the first call instead of acting again.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use optidiv_core::catalog::{Catalog, Feature};
use optidiv_core::equity::{ExposureLedger, DEFAULT_LAMBDA};
use optidiv_core::kernel::{KernelParams, ScoringMode, DEFAULT_THETA};
use optidiv_core::recommender::{embedding_key, rank, RankRequest, RecommendError, SeedProfile};
use optidiv_core::session::{SessionDefaults, SessionError, SessionStore, UserSession, Verdict};
use optidiv_core::textemb::{seed_target, DocVector, EmbedError};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Mutex as AsyncMutex;
use tower_http::trace::TraceLayer;

/// How many request ids are remembered per session for replay.
const REPLAY_WINDOW: usize = 256;
const DEFAULT_ITEM_LIMIT: usize = 20;
const MAX_ITEM_LIMIT: usize = 500;

/// When an item counts as exposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ExposureOn {
    /// Every returned recommendation.
    #[default]
    Recommend,
    /// Only recommendations the user accepted.
    Accept,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceDefaults {
    pub session: SessionDefaults,
    pub lambda: f64,
    pub theta: f64,
    pub k: usize,
    pub exposure_on: ExposureOn,
}

impl Default for ServiceDefaults {
    fn default() -> Self {
        Self {
            session: SessionDefaults::default(),
            lambda: DEFAULT_LAMBDA,
            theta: DEFAULT_THETA,
            k: 10,
            exposure_on: ExposureOn::default(),
        }
    }
}

impl ServiceDefaults {
    pub fn validate(&self) -> Result<(), String> {
        let s = &self.session;
        if !(s.bounds.min > 0.0 && s.bounds.min <= s.bounds.max && s.bounds.max.is_finite()) {
            return Err("sigma bounds must satisfy 0 < min <= max".into());
        }
        if !s.bounds.contains(s.sigma) {
            return Err(format!(
                "default sigma {} outside [{}, {}]",
                s.sigma, s.bounds.min, s.bounds.max
            ));
        }
        if !(s.eta > 0.0 && s.eta < 1.0) {
            return Err(format!("eta must lie in (0, 1), got {}", s.eta));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        KernelParams::new(s.sigma, self.theta).map_err(|e| e.to_string())?;
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        Ok(())
    }
}

/// Source of event timestamps (milliseconds). Swappable for tests.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    })
}

struct SessionSlot {
    session: UserSession,
    replies: VecDeque<(String, Reply)>,
}

impl SessionSlot {
    fn replay(&self, request_id: Option<&str>) -> Option<Reply> {
        let id = request_id?;
        self.replies
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, r)| r.clone())
    }

    fn remember(&mut self, request_id: Option<String>, reply: &Reply) {
        if let Some(id) = request_id {
            if self.replies.len() == REPLAY_WINDOW {
                self.replies.pop_front();
            }
            self.replies.push_back((id, reply.clone()));
        }
    }
}

type Reply = (StatusCode, Value);

pub struct AppState {
    catalog: Arc<Catalog>,
    store: SessionStore,
    defaults: ServiceDefaults,
    ledger: Mutex<ExposureLedger>,
    sessions: Mutex<HashMap<String, Arc<AsyncMutex<Option<SessionSlot>>>>>,
    created: AsyncMutex<HashMap<String, Reply>>,
    clock: Clock,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("[invalid-config] {0}")]
    Config(String),
    #[error(
        "[ledger-mismatch] stored exposure ledger does not cover the same items as the catalog"
    )]
    LedgerMismatch,
    #[error("[store] {0}")]
    Store(#[from] SessionError),
}

impl AppState {
    /// Loads the persisted ledger when the store has one.
    pub fn new(
        catalog: Catalog,
        store: SessionStore,
        defaults: ServiceDefaults,
        clock: Clock,
    ) -> Result<Arc<Self>, StartupError> {
        defaults.validate().map_err(StartupError::Config)?;
        let fresh = ExposureLedger::for_catalog(&catalog);
        let ledger = match store.load_ledger()? {
            Some(saved) if saved.counts().keys().eq(fresh.counts().keys()) => saved,
            Some(_) => return Err(StartupError::LedgerMismatch),
            None => fresh,
        };
        Ok(Arc::new(Self {
            catalog: Arc::new(catalog),
            store,
            defaults,
            ledger: Mutex::new(ledger),
            sessions: Mutex::new(HashMap::new()),
            created: AsyncMutex::new(HashMap::new()),
            clock,
        }))
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn ledger_snapshot(&self) -> ExposureLedger {
        self.ledger.lock().expect("ledger lock").clone()
    }

    fn record(&self, ids: &[&str]) -> Result<(), ApiError> {
        let mut ledger = self.ledger.lock().expect("ledger lock");
        ledger
            .record_exposure(ids)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        self.store.save_ledger(&ledger).map_err(ApiError::from)
    }

    fn slot(&self, id: &str) -> Arc<AsyncMutex<Option<SessionSlot>>> {
        self.sessions
            .lock()
            .expect("session map lock")
            .entry(id.to_owned())
            .or_default()
            .clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/items", get(items))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/recommend", post(recommend))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/metrics/equity", get(equity_metrics))
        .fallback(|| async {
            ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint")
        })
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

pub async fn bind(addr: SocketAddr) -> Result<tokio::net::TcpListener, String> {
    tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| format!("[bind-failed] cannot listen on {addr}: {e}"))
}

// ---------------------------------------------------------------- errors

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn reply(&self) -> Reply {
        (
            self.status,
            serde_json::json!({ "error": { "code": self.code, "message": self.message } }),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = self.reply();
        (status, axum::Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::NotFound(_) | SessionError::InvalidId(_) => {
                Self::new(StatusCode::NOT_FOUND, "session-not-found", e.to_string())
            }
            SessionError::NotRecommended(_) => {
                Self::new(StatusCode::CONFLICT, "not-recommended", e.to_string())
            }
            SessionError::Kernel(_) | SessionError::InvalidEta(_) => {
                Self::bad_request(e.to_string())
            }
            SessionError::Decode { .. } | SessionError::Io(_) => {
                tracing::error!(error = %e, "session store failure");
                Self::internal(e.to_string())
            }
        }
    }
}

impl From<RecommendError> for ApiError {
    fn from(e: RecommendError) -> Self {
        match e {
            RecommendError::Distance(_) => Self::internal(e.to_string()),
            _ => Self::new(StatusCode::BAD_REQUEST, "invalid-request", e.to_string()),
        }
    }
}

/// JSON body extractor whose rejections use the API error shape.
pub struct Body<T>(T);

impl<S, T> FromRequest<S> for Body<T>
where
    axum::Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: axum::extract::Request, state: &S) -> Result<Self, Self::Rejection> {
        axum::Json::<T>::from_request(req, state)
            .await
            .map(|axum::Json(v)| Body(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

fn respond((status, body): Reply) -> Response {
    (status, axum::Json(body)).into_response()
}

// ---------------------------------------------------------------- handlers

async fn health(State(state): State<Arc<AppState>>) -> Response {
    respond((
        StatusCode::OK,
        serde_json::json!({
            "status": "ok",
            "items": state.catalog.len(),
            "version": env!("CARGO_PKG_VERSION"),
        }),
    ))
}

#[derive(Deserialize)]
struct ItemsQuery {
    prefix: Option<String>,
    limit: Option<usize>,
}

#[derive(Serialize)]
struct ItemSummary<'a> {
    id: &'a str,
    title: &'a str,
    artist: &'a str,
    genre_id: &'a str,
}

/// Items whose id or title starts with `prefix` (case-insensitive), in catalog order.
async fn items(
    State(state): State<Arc<AppState>>,
    query: Result<Query<ItemsQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let limit = q.limit.unwrap_or(DEFAULT_ITEM_LIMIT);
    if limit == 0 || limit > MAX_ITEM_LIMIT {
        return Err(ApiError::bad_request(format!(
            "limit must lie in 1..={MAX_ITEM_LIMIT}"
        )));
    }
    let prefix = q.prefix.unwrap_or_default().to_lowercase();
    let found: Vec<ItemSummary> = state
        .catalog
        .items()
        .iter()
        .filter(|it| {
            it.id.to_lowercase().starts_with(&prefix)
                || it.title.to_lowercase().starts_with(&prefix)
        })
        .take(limit)
        .map(|it| ItemSummary {
            id: &it.id,
            title: &it.title,
            artist: &it.artist,
            genre_id: &it.genre_id,
        })
        .collect();
    Ok(respond((
        StatusCode::OK,
        serde_json::json!({ "items": found }),
    )))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    seed_ids: Option<Vec<String>>,
    target_doc_ids: Option<Vec<String>>,
    sigma: Option<f64>,
    request_id: Option<String>,
}

fn target_profile(catalog: &Catalog, ids: Vec<String>) -> Result<SeedProfile, ApiError> {
    let key = embedding_key(catalog).map_err(ApiError::from)?;
    let mut seeds = Vec::with_capacity(ids.len());
    for id in &ids {
        let item = catalog.get(id).ok_or_else(|| {
            ApiError::new(
                StatusCode::BAD_REQUEST,
                "invalid-request",
                format!("unknown document `{id}`"),
            )
        })?;
        match item.features.get(key) {
            Some(Feature::Vector(v)) => seeds.push(DocVector {
                id: id.clone(),
                vector: v.clone(),
            }),
            _ => {
                return Err(ApiError::internal(format!(
                    "document `{id}` has no `{key}` vector"
                )))
            }
        }
    }
    let vector = seed_target(&seeds).map_err(|e| match e {
        EmbedError::NoSeeds => ApiError::bad_request("target_doc_ids must not be empty"),
        other => ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid-request",
            other.to_string(),
        ),
    })?;
    Ok(SeedProfile::Target {
        vector,
        exclude: ids.into_iter().collect(),
    })
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Body(req): Body<CreateSession>,
) -> Result<Response, ApiError> {
    // holding the map for the whole call keeps a retried request_id from
    // racing its first attempt
    let mut created = state.created.lock().await;
    if let Some(reply) = req.request_id.as_ref().and_then(|id| created.get(id)) {
        return Ok(respond(reply.clone()));
    }
    let profile = match (req.seed_ids, req.target_doc_ids) {
        (Some(ids), None) => {
            let set: BTreeSet<String> = ids.into_iter().collect();
            SeedProfile::Items(set)
        }
        (None, Some(ids)) => target_profile(&state.catalog, ids)?,
        _ => {
            return Err(ApiError::bad_request(
                "give exactly one of seed_ids or target_doc_ids",
            ))
        }
    };
    profile.validate(&state.catalog)?;
    let now = (state.clock)();
    let (session, notice) =
        optidiv_core::session::create_session(profile, &state.defaults.session, req.sigma, now)?;
    state.store.save_session(&session)?;
    let mut body =
        serde_json::json!({ "session_id": session.session_id, "sigma": session.sigma() });
    if let Some(n) = notice {
        body["clamped"] = serde_json::json!({ "requested": n.requested, "applied": n.applied });
    }
    tracing::info!(session = %session.session_id, sigma = session.sigma(), "session created");
    let reply = (StatusCode::CREATED, body);
    if let Some(id) = req.request_id {
        created.insert(id, reply.clone());
    }
    let slot = state.slot(&session.session_id);
    *slot.lock().await = Some(SessionSlot {
        session,
        replies: VecDeque::new(),
    });
    Ok(respond(reply))
}

/// Locks the session and loads it from the store on first use.
async fn with_session<F>(
    state: &AppState,
    id: &str,
    request_id: Option<String>,
    f: F,
) -> Result<Response, ApiError>
where
    F: FnOnce(&AppState, &mut UserSession) -> Result<Reply, ApiError>,
{
    let slot = state.slot(id);
    let mut guard = slot.lock().await;
    if guard.is_none() {
        match state.store.load_session(id) {
            Ok(session) => {
                *guard = Some(SessionSlot {
                    session,
                    replies: VecDeque::new(),
                })
            }
            Err(e) => {
                // don't let probes for unknown ids grow the map
                drop(guard);
                let mut map = state.sessions.lock().expect("session map lock");
                if map
                    .get(id)
                    .is_some_and(|s| Arc::ptr_eq(s, &slot) && Arc::strong_count(s) == 2)
                {
                    map.remove(id);
                }
                return Err(e.into());
            }
        }
    }
    let slot = guard.as_mut().expect("loaded above");
    if let Some(reply) = slot.replay(request_id.as_deref()) {
        return Ok(respond(reply));
    }
    let reply = f(state, &mut slot.session)?;
    slot.remember(request_id, &reply);
    Ok(respond(reply))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecommendBody {
    k: Option<usize>,
    mode: Option<ScoringMode>,
    lambda: Option<f64>,
    request_id: Option<String>,
}

#[derive(Serialize)]
struct RecommendationView<'a> {
    item_id: &'a str,
    title: &'a str,
    artist: &'a str,
    distance: f64,
    raw_score: f64,
    adjusted_score: f64,
    band: optidiv_core::kernel::Band,
    bold: bool,
    rank: usize,
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(req): Body<RecommendBody>,
) -> Result<Response, ApiError> {
    let k = req.k.unwrap_or(state.defaults.k);
    let lambda = req.lambda.unwrap_or(state.defaults.lambda);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(ApiError::bad_request("lambda must be nonnegative"));
    }
    let mode = req.mode.unwrap_or(ScoringMode::Diverse);
    with_session(&state, &id, req.request_id, |state, session| {
        let params = KernelParams::bounded(session.sigma(), state.defaults.theta, session.bounds)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let request = RankRequest {
            params,
            lambda,
            k,
            mode,
        };
        let recs = rank(
            &state.catalog,
            &session.profile,
            &request,
            &state.ledger_snapshot(),
        )?;
        if state.defaults.exposure_on == ExposureOn::Recommend {
            let ids: Vec<&str> = recs.iter().map(|r| r.item_id.as_str()).collect();
            state.record(&ids)?;
        }
        session.note_recommendations(&recs, (state.clock)());
        state.store.save_session(session)?;
        let views: Vec<RecommendationView> = recs
            .iter()
            .map(|r| {
                let item = state.catalog.get(&r.item_id).expect("ranked from catalog");
                RecommendationView {
                    item_id: &r.item_id,
                    title: &item.title,
                    artist: &item.artist,
                    distance: r.distance,
                    raw_score: r.raw_score,
                    adjusted_score: r.adjusted_score,
                    band: r.band,
                    bold: r.bold,
                    rank: r.rank,
                }
            })
            .collect();
        Ok((
            StatusCode::OK,
            serde_json::json!({ "recommendations": views, "sigma": session.sigma() }),
        ))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    item_id: String,
    verdict: Verdict,
    request_id: Option<String>,
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Body(req): Body<FeedbackBody>,
) -> Result<Response, ApiError> {
    with_session(&state, &id, req.request_id, |state, session| {
        let event = session
            .apply_feedback(&req.item_id, req.verdict, (state.clock)())?
            .clone();
        if state.defaults.exposure_on == ExposureOn::Accept && req.verdict == Verdict::Accept {
            state.record(&[req.item_id.as_str()])?;
        }
        state.store.save_session(session)?;
        tracing::info!(session = %session.session_id, item = %event.item_id, bold = event.bold,
            sigma_before = event.sigma_before, sigma_after = event.sigma_after, "feedback");
        Ok((
            StatusCode::OK,
            serde_json::json!({ "sigma_before": event.sigma_before, "sigma_after": event.sigma_after }),
        ))
    })
    .await
}

async fn equity_metrics(State(state): State<Arc<AppState>>) -> Response {
    let ledger = state.ledger_snapshot();
    respond((
        StatusCode::OK,
        serde_json::json!({
            "gini": ledger.gini(),
            "coverage": optidiv_core::equity::coverage(&ledger, &state.catalog),
            "total_exposures": ledger.total(),
        }),
    ))
}
