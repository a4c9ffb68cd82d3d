use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use serde_json::json;

use artisketch_core::Error as CoreError;

/// Errors surfaced by the engine to HTTP and CLI callers.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{what} not found")]
    NotFound { what: String },
    /// Another request currently holds the session.
    #[error("session {0} is busy")]
    Conflict(String),
    #[error("{message}")]
    Unprocessable { code: &'static str, message: String },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type ServiceResult<T> = std::result::Result<T, ServiceError>;

impl ServiceError {
    pub fn not_found(what: impl Into<String>) -> Self {
        ServiceError::NotFound { what: what.into() }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound { .. } => "not-found",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Unprocessable { code, .. } => code,
            ServiceError::BadRequest(_) => "bad-request",
            ServiceError::Core(e) => e.code(),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound { .. } => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Core(e) if e.is_io() => StatusCode::INTERNAL_SERVER_ERROR,
            ServiceError::Core(_) => StatusCode::UNPROCESSABLE_ENTITY,
        }
    }

    /// CLI exit status: 3 for I/O, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ServiceError::Core(e) if e.is_io() => 3,
            _ => 2,
        }
    }

    fn details(&self) -> serde_json::Value {
        match self {
            ServiceError::Core(CoreError::AmbiguousSketch { candidates, .. }) => json!({ "candidates": candidates }),
            ServiceError::Core(CoreError::NoPartFound { best_iou, candidates }) => {
                json!({ "best_iou": best_iou, "candidates": candidates })
            }
            ServiceError::Core(CoreError::BlockedJoint { first_hit }) => json!({ "first_hit": first_hit }),
            ServiceError::Core(CoreError::RangeViolation { value, max }) => json!({ "value": value, "max": max }),
            _ => json!({}),
        }
    }

    pub fn body(&self) -> serde_json::Value {
        json!({
            "schema_version": 1,
            "error": { "code": self.code(), "message": self.to_string(), "details": self.details() }
        })
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), axum::Json(self.body())).into_response()
    }
}
