//! REST routes. Handlers parse, hop onto the blocking pool and call the engine.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use artisketch_core::render::Camera;

use crate::engine::{
    AdjustRequest, CommitRequest, CompleteRequest, CreateSession, Engine, PredictRequest, RenderQuery, RenderStyle,
    StrokesRequest,
};
use crate::error::{ServiceError, ServiceResult};

type AppState = State<Arc<Engine>>;

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session).delete(delete_session))
        .route("/sessions/:id/camera", put(put_camera))
        .route("/sessions/:id/render", get(render))
        .route("/sessions/:id/strokes", post(post_strokes))
        .route("/sessions/:id/predict", post(predict))
        .route("/sessions/:id/joints", get(get_joints).post(commit_joint))
        .route("/sessions/:id/joints/:j/adjust", post(adjust_joint))
        .route("/sessions/:id/undo", post(undo))
        .route("/sessions/:id/animate", get(animate))
        .route("/sessions/:id/export/urdf", get(export_urdf))
        .route("/sessions/:id/complete", post(complete))
        .route("/jobs/:id", get(get_job))
        .route("/jobs/:id/cancel", post(cancel_job))
        .route("/jobs/:id/resume", post(resume_job))
        .with_state(engine)
}

fn parse_id(s: &str, what: &str) -> ServiceResult<Uuid> {
    Uuid::parse_str(s).map_err(|_| ServiceError::not_found(format!("{what} {s}")))
}

/// JSON body; an empty body means `T::default()`.
fn body<T: DeserializeOwned + Default>(bytes: &Bytes) -> ServiceResult<T> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    required(bytes)
}

fn required<T: DeserializeOwned>(bytes: &Bytes) -> ServiceResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ServiceError::BadRequest(format!("invalid JSON body: {e}")))
}

fn camera_param(s: &Option<String>) -> ServiceResult<Option<Camera>> {
    s.as_deref()
        .filter(|c| !c.is_empty())
        .map(|c| serde_json::from_str(c).map_err(|e| ServiceError::BadRequest(format!("invalid camera: {e}"))))
        .transpose()
}

async fn blocking<T, F>(f: F) -> ServiceResult<T>
where
    F: FnOnce() -> ServiceResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Core(artisketch_core::Error::Backend(format!("worker panicked: {e}"))))?
}

fn json<T: Serialize>(status: StatusCode, v: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], serde_json::to_vec(v).expect("serializable")).into_response()
}

fn ok<T: Serialize>(v: ServiceResult<T>) -> Response {
    match v {
        Ok(v) => json(StatusCode::OK, &v),
        Err(e) => e.into_response(),
    }
}

async fn health() -> Response {
    json(StatusCode::OK, &serde_json::json!({ "schema_version": 1, "status": "ok" }))
}

async fn create_session(State(engine): AppState, bytes: Bytes) -> Response {
    let r = async {
        let req: CreateSession = required(&bytes)?;
        blocking(move || engine.create_session(req)).await
    }
    .await;
    match r {
        Ok(v) => json(StatusCode::CREATED, &v),
        Err(e) => e.into_response(),
    }
}

async fn get_session(State(engine): AppState, Path(id): Path<String>) -> Response {
    ok(async {
        let id = parse_id(&id, "session")?;
        blocking(move || engine.session_view(id)).await
    }
    .await)
}

async fn delete_session(State(engine): AppState, Path(id): Path<String>) -> Response {
    match async {
        let id = parse_id(&id, "session")?;
        blocking(move || engine.delete_session(id)).await
    }
    .await
    {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct CameraBody {
    camera: Camera,
}

async fn put_camera(State(engine): AppState, Path(id): Path<String>, bytes: Bytes) -> Response {
    ok(async {
        let id = parse_id(&id, "session")?;
        let b: CameraBody = required(&bytes)?;
        blocking(move || engine.set_camera(id, b.camera)).await
    }
    .await)
}

#[derive(Deserialize)]
struct RenderParams {
    camera: Option<String>,
    #[serde(default)]
    style: Option<RenderStyle>,
    highlight: Option<String>,
    format: Option<String>,
}

async fn render(State(engine): AppState, Path(id): Path<String>, Query(p): Query<RenderParams>) -> Response {
    let r = async {
        let id = parse_id(&id, "session")?;
        let q = RenderQuery {
            camera: camera_param(&p.camera)?,
            style: p.style.unwrap_or_default(),
            highlight: p.highlight.clone(),
        };
        blocking(move || engine.render(id, &q)).await
    }
    .await;
    match (r, p.format.as_deref()) {
        (Ok(v), Some("png")) => ([(header::CONTENT_TYPE, "image/png")], v.png_bytes()).into_response(),
        (Ok(v), _) => json(StatusCode::OK, &v),
        (Err(e), _) => e.into_response(),
    }
}

async fn post_strokes(State(engine): AppState, Path(id): Path<String>, bytes: Bytes) -> Response {
    ok(async {
        let id = parse_id(&id, "session")?;
        let req: StrokesRequest = body(&bytes)?;
        blocking(move || engine.post_strokes(id, req)).await
    }
    .await)
}

async fn predict(State(engine): AppState, Path(id): Path<String>, bytes: Bytes) -> Response {
    let r = async {
        let id = parse_id(&id, "session")?;
        let req: PredictRequest = body(&bytes)?;
        blocking(move || engine.predict(id, &req)).await
    }
    .await;
    match r {
        // the exact bytes the CLI writes
        Ok(p) => ([(header::CONTENT_TYPE, "application/json")], p.to_json_bytes()).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_joints(State(engine): AppState, Path(id): Path<String>) -> Response {
    ok(async {
        let id = parse_id(&id, "session")?;
        blocking(move || engine.joints(id)).await
    }
    .await)
}

async fn commit_joint(State(engine): AppState, Path(id): Path<String>, bytes: Bytes) -> Response {
    ok(async {
        let id = parse_id(&id, "session")?;
        let req: CommitRequest = body(&bytes)?;
        blocking(move || engine.commit_joint(id, &req)).await
    }
    .await)
}

async fn adjust_joint(State(engine): AppState, Path((id, j)): Path<(String, String)>, bytes: Bytes) -> Response {
    ok(async {
        let id = parse_id(&id, "session")?;
        let j: usize = j.parse().map_err(|_| ServiceError::not_found(format!("joint {j}")))?;
        let req: AdjustRequest = body(&bytes)?;
        blocking(move || engine.adjust_joint(id, j, &req)).await
    }
    .await)
}

async fn undo(State(engine): AppState, Path(id): Path<String>) -> Response {
    ok(async {
        let id = parse_id(&id, "session")?;
        blocking(move || engine.undo(id)).await
    }
    .await)
}

#[derive(Deserialize)]
struct AnimateParams {
    joint: usize,
    value: f64,
    camera: Option<String>,
}

async fn animate(State(engine): AppState, Path(id): Path<String>, Query(p): Query<AnimateParams>) -> Response {
    let r = async {
        let id = parse_id(&id, "session")?;
        let camera = camera_param(&p.camera)?;
        blocking(move || engine.animate(id, p.joint, p.value, camera)).await
    }
    .await;
    match r {
        Ok(png) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn export_urdf(State(engine): AppState, Path(id): Path<String>) -> Response {
    let r = async {
        let id = parse_id(&id, "session")?;
        blocking(move || engine.export_urdf_zip(id)).await
    }
    .await;
    match r {
        Ok(zip) => (
            [
                (header::CONTENT_TYPE, "application/zip"),
                (header::CONTENT_DISPOSITION, "attachment; filename=\"model.zip\""),
            ],
            zip,
        )
            .into_response(),
        Err(e) => e.into_response(),
    }
}

async fn complete(State(engine): AppState, Path(id): Path<String>, bytes: Bytes) -> Response {
    let r = async {
        let id = parse_id(&id, "session")?;
        let req: CompleteRequest = required(&bytes)?;
        blocking(move || engine.start_completion(id, &req)).await
    }
    .await;
    match r {
        Ok(v) => json(StatusCode::ACCEPTED, &v),
        Err(e) => e.into_response(),
    }
}

#[derive(Deserialize)]
struct JobParams {
    #[serde(default)]
    grid: bool,
}

async fn get_job(State(engine): AppState, Path(id): Path<String>, Query(p): Query<JobParams>) -> Response {
    ok(async {
        let id = parse_id(&id, "job")?;
        blocking(move || engine.job_view(id, p.grid)).await
    }
    .await)
}

async fn cancel_job(State(engine): AppState, Path(id): Path<String>) -> Response {
    ok(async {
        let id = parse_id(&id, "job")?;
        blocking(move || engine.cancel_job(id)).await
    }
    .await)
}

#[derive(Default, Deserialize)]
struct ResumeBody {
    #[serde(default)]
    k_max: Option<usize>,
}

async fn resume_job(State(engine): AppState, Path(id): Path<String>, bytes: Bytes) -> Response {
    ok(async {
        let id = parse_id(&id, "job")?;
        let b: ResumeBody = body(&bytes)?;
        blocking(move || engine.resume_job(id, b.k_max)).await
    }
    .await)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Arc<Engine>, bind: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
