//! REST API over the engine.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/images` | raw PNG body; opens a session |
//! | POST | `/jobs/interpret` | prompt to classes and ranks |
//! | POST | `/jobs/segment` | classes to per-class masks |
//! | POST | `/jobs/compose` | prompt or program to costmap |
//! | GET | `/jobs/{id}` | job status and outputs |
//! | POST | `/plan` | shortest path on a costmap |
//! | POST | `/validate` | checks a DSL program |
//! | GET | `/artifacts/{ref}` | stored bytes (PNG, RF32, JSON or DSL text) |
//! | GET | `/sessions/{id}/manifest` | everything a session produced |
//! | GET | `/info` | backends and pipeline parameters |
//!
//! Requests naming a `session` fall back to that session's latest image,
//! classes, masks and costmap, and record their results in it.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use overseec_core::classes::ClassSet;
use overseec_core::io::{decode_rgb_png, image_shape, RF32_MAGIC};
use overseec_core::planner::PlanQuery;
use overseec_core::raster::Pixel;
use overseec_engine::session::{Engine, MaskRefs, PlanRecord, SessionManifest};
use overseec_engine::store::ArtifactRef;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::ErrorBody;
use crate::jobs::{Job, JobKind, JobOutput, JobQueue, JobState};

const MAX_UPLOAD: usize = 512 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    jobs: Arc<JobQueue>,
    sessions: Arc<Mutex<()>>,
    info: Arc<Value>,
}

impl AppState {
    /// `info` is served verbatim from `/info`.
    pub fn new(engine: Engine, workers: usize, info: Value) -> Self {
        Self {
            engine: Arc::new(engine),
            jobs: JobQueue::new(workers),
            sessions: Arc::new(Mutex::new(())),
            info: Arc::new(info),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }
}

pub struct ApiError(ErrorBody);

impl<E: Into<ErrorBody>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bad_request(message: impl Into<String>) -> ErrorBody {
    ErrorBody::new("bad_request", message)
}

fn not_found(message: impl Into<String>) -> ErrorBody {
    ErrorBody::new("not_found", message)
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ErrorBody> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ErrorBody::new("internal", e.to_string())))?
        .map_err(ApiError)
}

fn load_session(engine: &Engine, id: Option<&str>) -> Result<Option<SessionManifest>, ErrorBody> {
    let Some(id) = id else { return Ok(None) };
    engine
        .load_session(id)?
        .map(Some)
        .ok_or_else(|| not_found(format!("session {id:?} not found")))
}

fn update_session(state: &AppState, id: Option<&str>, f: impl FnOnce(&mut SessionManifest)) -> Result<(), ErrorBody> {
    let Some(id) = id else { return Ok(()) };
    let _guard = state.sessions.lock().unwrap_or_else(|e| e.into_inner());
    let mut manifest = state.engine.load_session(id)?.unwrap_or_default();
    f(&mut manifest);
    state.engine.save_session(id, &manifest)?;
    Ok(())
}

fn require(engine: &Engine, r: &ArtifactRef) -> Result<(), ErrorBody> {
    if engine.store().contains(r) {
        Ok(())
    } else {
        Err(not_found(format!("artifact {r} not found")))
    }
}

fn pick<T: Clone>(given: Option<T>, session: Option<&SessionManifest>, from: impl Fn(&SessionManifest) -> Option<T>, what: &str) -> Result<T, ErrorBody> {
    given
        .or_else(|| session.and_then(from))
        .ok_or_else(|| bad_request(format!("no {what} given and none in the session")))
}

fn classes_of(engine: &Engine, given: Option<&ArtifactRef>, session: Option<&SessionManifest>) -> Result<ClassSet, ErrorBody> {
    match given {
        Some(r) => Ok(engine.store().get_json(r)?),
        None => pick(None, session, |m| m.classes.clone(), "classes"),
    }
}

#[derive(Debug, Serialize)]
struct Uploaded {
    image: ArtifactRef,
    session: String,
    width: usize,
    height: usize,
}

async fn upload_image(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Uploaded>)> {
    let out = blocking(move || {
        let engine = &state.engine;
        let image = engine.put_image(&body)?;
        let shape = image_shape(&decode_rgb_png(&body).map_err(|e| ErrorBody::new("bad_image", e.to_string()))?);
        let session = uuid::Uuid::new_v4().simple().to_string();
        let manifest = SessionManifest {
            image: Some(image.clone()),
            ..SessionManifest::default()
        };
        engine.save_session(&session, &manifest)?;
        Ok(Uploaded {
            image,
            session,
            width: shape.width,
            height: shape.height,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(out)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpretRequest {
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub image: Option<ArtifactRef>,
    pub prompt: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRequest {
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub image: Option<ArtifactRef>,
    /// Ref of a stored class set, as returned by an interpret job.
    #[serde(default)]
    pub classes: Option<ArtifactRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComposeRequest {
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub prompt: Option<String>,
    /// Hand-written DSL; the model is not asked when present.
    #[serde(default)]
    pub program: Option<String>,
    #[serde(default)]
    pub classes: Option<ArtifactRef>,
    #[serde(default)]
    pub masks: Option<BTreeMap<String, MaskRefs>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRequest {
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub costmap: Option<ArtifactRef>,
    pub start: Pixel,
    pub goal: Pixel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidateRequest {
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub classes: Option<ArtifactRef>,
    pub program: String,
}

fn accepted(job: Job) -> (StatusCode, Json<Job>) {
    (StatusCode::ACCEPTED, Json(job))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

async fn submit_interpret(State(state): State<AppState>, Json(req): Json<InterpretRequest>) -> ApiResult<(StatusCode, Json<Job>)> {
    let checked = state.clone();
    let req2 = req.clone();
    blocking(move || {
        let session = load_session(&checked.engine, req2.session.as_deref())?;
        let image = pick(req2.image.clone(), session.as_ref(), |m| m.image.clone(), "image")?;
        require(&checked.engine, &image)
    })
    .await?;
    let inputs = to_value(&req);
    let job = state.jobs.clone().submit(JobKind::Interpret, req.session.clone(), inputs, move || {
        let interp = state.engine.interpret(&req.prompt)?;
        update_session(&state, req.session.as_deref(), |m| {
            m.prompt = Some(req.prompt.clone());
            m.classes = Some(interp.classes.clone());
            m.ranks = Some(interp.ranks.clone());
        })?;
        Ok(JobOutput {
            refs: vec![interp.classes_ref.clone(), interp.ranks_ref.clone()],
            result: to_value(&interp),
        })
    });
    Ok(accepted(job))
}

async fn submit_segment(State(state): State<AppState>, Json(req): Json<SegmentRequest>) -> ApiResult<(StatusCode, Json<Job>)> {
    let checked = state.clone();
    let req2 = req.clone();
    let (image, classes) = blocking(move || {
        let session = load_session(&checked.engine, req2.session.as_deref())?;
        let image = pick(req2.image.clone(), session.as_ref(), |m| m.image.clone(), "image")?;
        require(&checked.engine, &image)?;
        let classes = classes_of(&checked.engine, req2.classes.as_ref(), session.as_ref())?;
        Ok((image, classes))
    })
    .await?;
    let inputs = json!({ "session": req.session, "image": image, "classes": classes });
    let job = state.jobs.clone().submit(JobKind::Segment, req.session.clone(), inputs, move || {
        let out = state.engine.segment(&image, &classes)?;
        update_session(&state, req.session.as_deref(), |m| {
            m.masks.extend(out.masks.clone());
        })?;
        Ok(JobOutput {
            refs: out.masks.values().flat_map(|m| m.refs().map(Clone::clone)).collect(),
            result: to_value(&out),
        })
    });
    Ok(accepted(job))
}

async fn submit_compose(State(state): State<AppState>, Json(req): Json<ComposeRequest>) -> ApiResult<(StatusCode, Json<Job>)> {
    let checked = state.clone();
    let req2 = req.clone();
    let (prompt, classes, masks) = blocking(move || {
        let session = load_session(&checked.engine, req2.session.as_deref())?;
        let prompt = match (&req2.program, &req2.prompt) {
            (Some(_), p) => p.clone(),
            (None, Some(p)) => Some(p.clone()),
            (None, None) => Some(pick(None, session.as_ref(), |m| m.prompt.clone(), "prompt or program")?),
        };
        let classes = classes_of(&checked.engine, req2.classes.as_ref(), session.as_ref())?;
        let masks = req2
            .masks
            .clone()
            .or_else(|| session.as_ref().map(|m| m.masks.clone()))
            .unwrap_or_default();
        Ok((prompt, classes, masks))
    })
    .await?;
    let inputs = to_value(&req);
    let job = state.jobs.clone().submit(JobKind::Compose, req.session.clone(), inputs, move || {
        let out = state.engine.compose(prompt.as_deref(), req.program.as_deref(), &classes, &masks)?;
        update_session(&state, req.session.as_deref(), |m| {
            if req.prompt.is_some() {
                m.prompt = req.prompt.clone();
            }
            m.program_source = Some(out.source.clone());
            m.program = Some(out.program.clone());
            m.costmap = Some(out.costmap.clone());
            m.heatmap = Some(out.heatmap.clone());
        })?;
        Ok(JobOutput {
            refs: vec![out.program.clone(), out.costmap.clone(), out.heatmap.clone()],
            result: to_value(&out),
        })
    });
    Ok(accepted(job))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    let job = state.jobs.get(&id).ok_or_else(|| not_found(format!("job {id:?} not found")))?;
    if job.state != JobState::Done {
        return Ok(Json(job));
    }
    blocking(move || {
        for r in &job.outputs.as_ref().expect("done jobs have outputs").refs {
            state.engine.store().get(r)?;
        }
        Ok(Json(job))
    })
    .await
}

#[derive(Debug, Serialize)]
struct Planned {
    costmap: ArtifactRef,
    #[serde(flatten)]
    record: PlanRecord,
}

async fn plan(State(state): State<AppState>, Json(req): Json<PlanRequest>) -> ApiResult<Json<Planned>> {
    blocking(move || {
        let session = load_session(&state.engine, req.session.as_deref())?;
        let costmap = pick(req.costmap.clone(), session.as_ref(), |m| m.costmap.clone(), "costmap")?;
        let path = state.engine.plan(&costmap, PlanQuery::new(req.start, req.goal))?;
        let record = PlanRecord {
            start: req.start,
            goal: req.goal,
            path,
        };
        update_session(&state, req.session.as_deref(), |m| m.plans.push(record.clone()))?;
        Ok(Json(Planned { costmap, record }))
    })
    .await
}

async fn validate_program(State(state): State<AppState>, Json(req): Json<ValidateRequest>) -> ApiResult<Json<Value>> {
    blocking(move || {
        let session = load_session(&state.engine, req.session.as_deref())?;
        let classes = classes_of(&state.engine, req.classes.as_ref(), session.as_ref())?;
        let program = state.engine.program(None, Some(&req.program), &classes)?;
        Ok(Json(json!({ "ok": true, "source": overseec_core::dsl::format(program.program()) })))
    })
    .await
}

fn content_type(bytes: &[u8]) -> &'static str {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else if bytes.starts_with(RF32_MAGIC) {
        "application/x-rf32"
    } else if serde_json::from_slice::<serde::de::IgnoredAny>(bytes).is_ok() {
        "application/json"
    } else if std::str::from_utf8(bytes).is_ok() {
        "text/plain; charset=utf-8"
    } else {
        "application/octet-stream"
    }
}

async fn get_artifact(State(state): State<AppState>, Path(reference): Path<String>) -> ApiResult<Response> {
    blocking(move || {
        let r: ArtifactRef = reference.parse()?;
        let bytes = state.engine.store().get(&r)?;
        let headers = [
            (header::CONTENT_TYPE, content_type(&bytes)),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ];
        Ok((headers, bytes).into_response())
    })
    .await
}

async fn get_manifest(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionManifest>> {
    blocking(move || Ok(Json(load_session(&state.engine, Some(&id))?.expect("present when Some"))))
        .await
}

async fn info(State(state): State<AppState>) -> Json<Value> {
    Json((*state.info).clone())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/info", get(info))
        .route("/images", post(upload_image))
        .route("/jobs/interpret", post(submit_interpret))
        .route("/jobs/segment", post(submit_segment))
        .route("/jobs/compose", post(submit_compose))
        .route("/jobs/{id}", get(get_job))
        .route("/plan", post(plan))
        .route("/validate", post(validate_program))
        .route("/artifacts/{reference}", get(get_artifact))
        .route("/sessions/{id}/manifest", get(get_manifest))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Serves `router` on `listener` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
