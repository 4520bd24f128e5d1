//! JSON API over a read-only [`Engine`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use scout_core::dataset::Split;
use scout_core::explainer::ExplainError;
use scout_core::synthgen::Keypoint;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::explain::{Contrast, Engine, ExplainRequest, ExplanationRecord};
use crate::heatmap::{base64_png, image_png};
use crate::quiz::{AnswerRequest, AnswerResponse, QuizOptions, QuizState, QuizStore, QuizSummary};

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub quiz: Arc<QuizStore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::NotFound(_) | Error::Explain(ExplainError::ClassOutOfRange { .. }) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Usage(_) | Error::Explain(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub id: usize,
    pub name: String,
    pub test_images: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassesResponse {
    pub classes: Vec<ClassInfo>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub id: u32,
    pub label: usize,
    pub class_name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagesResponse {
    pub images: Vec<ImageSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageResponse {
    pub id: u32,
    pub label: usize,
    pub class_name: String,
    pub split: Split,
    pub prediction: usize,
    pub confidence: f64,
    pub width: usize,
    pub height: usize,
    pub png_base64: String,
    pub keypoints: Vec<Keypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainBody {
    #[serde(flatten)]
    pub request: ExplainRequest,
    #[serde(default)]
    pub contrast: Contrast,
}

#[derive(Debug, Deserialize)]
struct ClassQuery {
    class: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct TokenQuery {
    token: String,
}

pub fn router(engine: Arc<Engine>) -> Router {
    let state = AppState {
        engine,
        quiz: Arc::new(QuizStore::new()),
    };
    Router::new()
        .route("/api/classes", get(classes))
        .route("/api/images", get(images))
        .route("/api/image/{id}", get(image))
        .route("/api/explain", post(explain))
        .route("/api/quiz/start", post(quiz_start))
        .route("/api/quiz/answer", post(quiz_answer))
        .route("/api/quiz/state", get(quiz_state))
        .route("/api/quiz/summary", get(quiz_summary))
        .with_state(state)
}

async fn classes(State(s): State<AppState>) -> Json<ClassesResponse> {
    let classes = s
        .engine
        .classes()
        .iter()
        .enumerate()
        .map(|(id, name)| ClassInfo {
            id,
            name: name.clone(),
            test_images: s
                .engine
                .data
                .scenes
                .iter()
                .filter(|x| x.annotation.split == Split::Test && x.annotation.label == id)
                .count(),
        })
        .collect();
    Json(ClassesResponse { classes })
}

async fn images(
    State(s): State<AppState>,
    query: std::result::Result<Query<ClassQuery>, QueryRejection>,
) -> ApiResult<ImagesResponse> {
    let Query(q) = query?;
    let names = s.engine.classes();
    if let Some(c) = q.class {
        if c >= names.len() {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown class {c}")));
        }
    }
    let images = s
        .engine
        .data
        .scenes
        .iter()
        .map(|x| &x.annotation)
        .filter(|a| a.split == Split::Test && q.class.is_none_or(|c| a.label == c))
        .map(|a| ImageSummary {
            id: a.id,
            label: a.label,
            class_name: names[a.label].clone(),
        })
        .collect();
    Ok(Json(ImagesResponse { images }))
}

async fn image(
    State(s): State<AppState>,
    id: std::result::Result<Path<u32>, PathRejection>,
) -> ApiResult<ImageResponse> {
    let Path(id) = id?;
    let scene = s.engine.scene(id)?;
    let pass = s.engine.model.forward(&scene.image).map_err(Error::from)?;
    let prediction = pass.prediction();
    let shape = scene.image.shape();
    Ok(Json(ImageResponse {
        id,
        label: scene.annotation.label,
        class_name: s.engine.classes()[scene.annotation.label].clone(),
        split: scene.annotation.split,
        prediction,
        confidence: pass.posteriors()[prediction],
        width: shape[2],
        height: shape[1],
        png_base64: base64_png(&image_png(&scene.image)?),
        keypoints: scene.annotation.keypoints.clone(),
    }))
}

async fn explain(
    State(s): State<AppState>,
    body: std::result::Result<Json<ExplainBody>, JsonRejection>,
) -> ApiResult<ExplanationRecord> {
    let Json(body) = body?;
    let engine = s.engine.clone();
    let record = tokio::task::spawn_blocking(move || engine.explain(&body.request, body.contrast))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??
        .record;
    Ok(Json(record))
}

async fn quiz_start(State(s): State<AppState>, body: Bytes) -> ApiResult<QuizState> {
    let options: QuizOptions = if body.iter().all(u8::is_ascii_whitespace) {
        QuizOptions::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?
    };
    Ok(Json(s.quiz.start(&s.engine, options)?))
}

async fn quiz_answer(
    State(s): State<AppState>,
    body: std::result::Result<Json<AnswerRequest>, JsonRejection>,
) -> ApiResult<AnswerResponse> {
    let Json(request) = body?;
    let (engine, quiz) = (s.engine.clone(), s.quiz.clone());
    let response = tokio::task::spawn_blocking(move || quiz.answer(&engine, &request))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(response))
}

async fn quiz_state(
    State(s): State<AppState>,
    query: std::result::Result<Query<TokenQuery>, QueryRejection>,
) -> ApiResult<QuizState> {
    let Query(q) = query?;
    Ok(Json(s.quiz.state(&s.engine, &q.token)?))
}

async fn quiz_summary(
    State(s): State<AppState>,
    query: std::result::Result<Query<TokenQuery>, QueryRejection>,
) -> ApiResult<QuizSummary> {
    let Query(q) = query?;
    Ok(Json(s.quiz.summary(&q.token)?))
}

/// Serves until Ctrl-C.
pub async fn serve(engine: Arc<Engine>, addr: SocketAddr) -> crate::error::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Usage(format!("cannot bind {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| Error::io("socket", e))?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io("socket", e))
}
