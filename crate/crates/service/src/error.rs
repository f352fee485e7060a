use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use homeloc_core::ingest::IngestError;
use homeloc_core::model::ModelError;
use homeloc_core::segmentation::SegmentError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("tag `{tag_id}` already has a recording session ({session_id})")]
    AlreadyRecording { tag_id: String, session_id: String },
    #[error("no session `{0}`")]
    NoSuchSession(String),
    #[error("session `{0}` is not recording")]
    SessionNotRecording(String),
    #[error("({x}, {y}) lies outside the {width} x {height} px canvas")]
    OutOfCanvas { x: f64, y: f64, width: u32, height: u32 },
    #[error("no model loaded")]
    ModelNotLoaded,
    #[error("model window mismatch: {0}")]
    ModeMismatch(String),
    #[error("unknown flat `{0}`")]
    UnknownFlat(String),
    #[error("no position for tag `{0}` yet")]
    NoPosition(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ServiceError {
    /// Stable machine-readable name sent to clients.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::AlreadyRecording { .. } => "AlreadyRecording",
            ServiceError::NoSuchSession(_) => "NoSuchSession",
            ServiceError::SessionNotRecording(_) => "SessionNotRecording",
            ServiceError::OutOfCanvas { .. } => "OutOfCanvas",
            ServiceError::ModelNotLoaded => "ModelNotLoaded",
            ServiceError::ModeMismatch(_) => "ModeMismatch",
            ServiceError::UnknownFlat(_) => "UnknownFlat",
            ServiceError::NoPosition(_) => "NoPosition",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Ingest(_) => "Ingest",
            ServiceError::Model(_) => "Model",
            ServiceError::Segment(_) => "Segment",
            ServiceError::Io { .. } => "Io",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::AlreadyRecording { .. } | ServiceError::SessionNotRecording(_) => StatusCode::CONFLICT,
            ServiceError::NoSuchSession(_) | ServiceError::UnknownFlat(_) | ServiceError::NoPosition(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::OutOfCanvas { .. } | ServiceError::ModeMismatch(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::ModelNotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Ingest(_) | ServiceError::Model(_) | ServiceError::Segment(_) | ServiceError::Io { .. } => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code(),
            message: self.to_string(),
        };
        (self.status(), Json(body)).into_response()
    }
}
