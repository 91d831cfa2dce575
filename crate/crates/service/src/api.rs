use std::path::PathBuf;
use std::str::FromStr;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use elicit_core::dm::{DmConfig, NoiseMode};
use elicit_core::engine::{Interaction, QueryKind, QueryRecord, SessionStatus, VariantConfig};
use elicit_core::model::Response as Choice;
use elicit_core::pareto::{approximate_pareto, ParetoApproximation, ParetoSettings};
use elicit_core::problems::{catalog, ProblemSpec, UtilitySpec};
use elicit_core::{seed, Error};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::store::{AppState, DmMode, Entry};

pub const API_SCHEMA_VERSION: u32 = 1;
const MAX_MENU_SIZE: usize = 64;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: json!({ "error": message.into(), "field": field.into() }),
        }
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session {id}"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidState(_) | Error::BudgetExhausted(_) => StatusCode::CONFLICT,
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::NotPsd(_) | Error::ReplayDiverged { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<(T, Value)> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed JSON: {e}")))?;
    let parsed = serde_path_to_error::deserialize(value.clone())
        .map_err(|e| ApiError::field(e.path().to_string(), e.inner().to_string()))?;
    Ok((parsed, value))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum VariantArg {
    Label(String),
    Config(Box<VariantConfig>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    problem: String,
    #[serde(default)]
    variant: Option<VariantArg>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    budget: Option<usize>,
    #[serde(default)]
    dm_mode: DmMode,
    /// Simulated decision-maker; defaults to the problem's paired utility
    /// without noise.
    #[serde(default)]
    dm: Option<DmConfig>,
    /// Pareto approximation settings for a posteriori variants.
    #[serde(default)]
    pareto: Option<ParetoSettings>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseRequest {
    seq: usize,
    choice: u8,
}

#[derive(Debug, Deserialize)]
struct QueryParams {
    #[serde(default)]
    decisions: bool,
}

#[derive(Debug, Deserialize)]
struct MenuParams {
    #[serde(default = "one")]
    k: usize,
    #[serde(default)]
    allow_early: bool,
}

fn one() -> usize {
    1
}

#[derive(Serialize)]
struct Progress {
    n: usize,
    budget: usize,
    initial_answered: usize,
    initial_total: usize,
}

fn progress(e: &Entry) -> Progress {
    let s = &e.session;
    let initial_total = s.queries().iter().filter(|q| q.kind == QueryKind::Initial).count();
    Progress {
        n: s.interaction_index(),
        budget: s.variant().budget,
        initial_answered: s.responses().len().min(initial_total),
        initial_total,
    }
}

fn session_doc(e: &Entry) -> Value {
    let s = &e.session;
    json!({
        "schema_version": API_SCHEMA_VERSION,
        "id": e.id,
        "problem": s.problem().name(),
        "variant": s.variant().label(),
        "seed": s.seed(),
        "dm_mode": e.meta.dm_mode,
        "status": e.status(),
        "progress": progress(e),
        "posterior_version": s.posterior_version(),
        "pending_seq": s.pending_query().map(|q| q.seq),
        "created_ms": e.meta.created_ms,
        "updated_ms": e.meta.updated_ms,
        "error": e.last_error,
    })
}

fn query_doc(e: &Entry, q: &QueryRecord, decisions: bool) -> Value {
    let s = &e.session;
    let options: Vec<Value> = (0..2)
        .map(|i| {
            let mut o = json!({ "objectives": q.objectives[i] });
            if decisions {
                o["decisions"] = json!(q.decisions[i]);
            }
            o
        })
        .collect();
    json!({
        "schema_version": API_SCHEMA_VERSION,
        "session_id": e.id,
        "seq": q.seq,
        "kind": q.kind,
        "options": options,
        "objective_names": s.problem().objective_names(),
        "orientation": s.problem().orientation(),
        "progress": progress(e),
    })
}

fn pareto_for(state: &AppState, problem: &ProblemSpec, settings: &ParetoSettings) -> elicit_core::Result<ParetoApproximation> {
    let dir = state.config().data_dir.join("pareto");
    std::fs::create_dir_all(&dir)?;
    let path: PathBuf = dir.join(format!(
        "{}_{}_{}x{}.csv",
        problem.name(),
        settings.algorithm,
        settings.population,
        settings.generations
    ));
    if path.exists() {
        return ParetoApproximation::load(problem, &path);
    }
    let approx = approximate_pareto(problem, settings, 0)?;
    approx.save(problem, &path)?;
    Ok(approx)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> elicit_core::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn create_session(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let (req, raw): (CreateRequest, Value) = parse_body(&body)?;
    let key = headers
        .get("idempotency-key")
        .map(|v| v.to_str().map(str::to_owned))
        .transpose()
        .map_err(|_| ApiError::field("Idempotency-Key", "header must be visible ASCII"))?;
    let _guard = state.create_lock().lock().await;
    if let Some(key) = &key {
        if let Some((id, meta)) = state.find_idempotent(key) {
            if meta.request != raw {
                return Err(ApiError::conflict("idempotency key already used for a different request"));
            }
            let entry = state.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
            let doc = session_doc(&entry.lock().expect("entry lock"));
            return Ok((StatusCode::OK, Json(doc)).into_response());
        }
    }

    let problem = ProblemSpec::from_str(&req.problem).map_err(|e| ApiError::field("problem", e.to_string()))?;
    let mut variant = match req.variant {
        None => VariantConfig::default(),
        Some(VariantArg::Label(l)) => VariantConfig::from_label(&l).map_err(|e| ApiError::field("variant", e.to_string()))?,
        Some(VariantArg::Config(c)) => *c,
    };
    if let Some(b) = req.budget {
        variant.budget = b;
    }
    variant.validate().map_err(|e| ApiError::field("variant", e.to_string()))?;
    let dm = match (req.dm_mode, req.dm) {
        (DmMode::Live, Some(_)) => return Err(ApiError::field("dm", "a live session cannot have a simulated decision-maker")),
        (DmMode::Live, None) => None,
        (DmMode::Simulated, Some(dm)) => Some(dm),
        (DmMode::Simulated, None) => Some(DmConfig {
            utility: UtilitySpec::paired_with(&problem),
            noise: NoiseMode::None,
            seed: seed::derive(req.seed, "dm", 0),
        }),
    };
    let pareto = if variant.interaction == Interaction::APosteriori {
        let settings = req.pareto.unwrap_or_else(|| ParetoSettings::standard(problem.m));
        let (st, p) = (state.clone(), problem.clone());
        Some(blocking(move || pareto_for(&st, &p, &settings)).await?)
    } else {
        None
    };
    let seed = req.seed;
    let session = blocking(move || elicit_core::engine::Session::create(problem, variant, seed, dm, pareto)).await?;
    let entry = state.insert(session, req.dm_mode, key, raw)?;
    let doc = session_doc(&entry.lock().expect("entry lock"));
    Ok((StatusCode::CREATED, Json(doc)).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = state.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let e = entry.lock().expect("entry lock");
    Ok(Json(session_doc(&e)))
}

fn menu_link(id: &str) -> Value {
    json!(format!("/v1/sessions/{id}/menu?k=1"))
}

async fn get_query(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<QueryParams>,
) -> ApiResult<Json<Value>> {
    let entry = state.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let mut e = entry.lock().expect("entry lock");
    if !e.busy {
        if let Some(q) = e.session.pending_query() {
            return Ok(Json(query_doc(&e, q, params.decisions)));
        }
        if e.session.status() == SessionStatus::Finished {
            return Err(ApiError::conflict("session is finished").with("menu", menu_link(&id)));
        }
    }
    let error = e.last_error.clone();
    state.resume_if_idle(&entry, &mut e);
    Err(ApiError::conflict("no pending query yet; the session is busy")
        .with("status", json!(e.status()))
        .with("last_error", json!(error)))
}

async fn post_response(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let entry = state.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let (req, _): (ResponseRequest, Value) = parse_body(&body)?;
    let choice = Choice::try_from(req.choice).map_err(|_| ApiError::field("choice", "choice must be 1 or 2"))?;
    let mut e = entry.lock().expect("entry lock");
    if e.busy {
        return Err(ApiError::conflict("session is busy").with("status", json!("busy")));
    }
    let Some(pending) = e.session.pending_query().map(|q| q.seq) else {
        return Err(ApiError::conflict("no query is awaiting a response").with("status", json!(e.status())));
    };
    if req.seq != pending {
        let reason = if req.seq < pending { "duplicate" } else { "out-of-order" };
        return Err(ApiError::conflict(format!("{reason} response for query {}", req.seq))
            .with("expected_seq", json!(pending)));
    }
    let mut next = e.session.clone();
    next.submit_response(req.seq, choice)?;
    state.commit(&mut e, next)?;
    state.resume_if_idle(&entry, &mut e);
    Ok((StatusCode::ACCEPTED, Json(session_doc(&e))).into_response())
}

async fn get_menu(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(params): Query<MenuParams>,
) -> ApiResult<Json<Value>> {
    let entry = state.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    if params.k == 0 || params.k > MAX_MENU_SIZE {
        return Err(ApiError::field("k", format!("k must be in 1..={MAX_MENU_SIZE}")));
    }
    let k = params.k;
    let session = {
        let mut e = entry.lock().expect("entry lock");
        let finished = !e.busy && e.session.status() == SessionStatus::Finished;
        if !finished && !params.allow_early {
            return Err(ApiError::conflict("session is not finished; pass allow_early=true for an interim menu"));
        }
        if e.session.posterior().is_none() {
            return Err(ApiError::conflict("no posterior yet"));
        }
        let version = e.session.posterior_version();
        if let Some(menu) = e.menus.get(&(k, version)) {
            return Ok(Json(menu_doc(&e.id, k, version, menu, true)));
        }
        if e.busy || e.session.refit_pending() {
            return Err(ApiError::conflict("session is busy").with("status", json!("busy")));
        }
        e.busy = true;
        e.session.clone()
    };
    let result = blocking(move || session.compute_menu(k)).await;
    let mut e = entry.lock().expect("entry lock");
    e.busy = false;
    let menu = result?;
    let version = e.session.posterior_version();
    e.session.log_menu(k, menu.clone());
    state.persist(&mut e)?;
    e.menus.insert((k, version), menu.clone());
    Ok(Json(menu_doc(&e.id, k, version, &menu, false)))
}

fn menu_doc(id: &str, k: usize, version: usize, menu: &elicit_core::menu::MenuResult, cached: bool) -> Value {
    json!({
        "schema_version": API_SCHEMA_VERSION,
        "session_id": id,
        "k": k,
        "posterior_version": version,
        "cached": cached,
        "menu": menu,
    })
}

async fn get_problems() -> Json<Value> {
    let list: Vec<Value> = catalog()
        .into_iter()
        .map(|(p, u)| {
            json!({
                "name": p.name(),
                "kind": p.kind,
                "d": p.d,
                "m": p.m,
                "utility": u.label(),
                "objective_names": p.objective_names(),
                "orientation": p.orientation(),
            })
        })
        .collect();
    Json(json!({ "schema_version": API_SCHEMA_VERSION, "problems": list }))
}

async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config().auth_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t.as_bytes() == token.as_bytes());
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/query", get(get_query))
        .route("/v1/sessions/{id}/response", post(post_response))
        .route("/v1/sessions/{id}/menu", get(get_menu))
        .route("/v1/problems", get(get_problems))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}
