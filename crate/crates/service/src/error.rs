use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

use seedgrow::Error as CoreError;

/// JSON error body: `{code, message, field?}`.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorBody {
    pub code: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code,
                message: message.into(),
                field: None,
            },
        }
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} `{id}` not found")).field(what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "busy", "another request is running on this session")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn field(mut self, field: impl Into<String>) -> Self {
        self.body.field = Some(field.into());
        self
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::OutOfBounds { .. } => ApiError::new(StatusCode::NOT_FOUND, "out_of_range", msg).field("voxel"),
            CoreError::Invalid { field, .. } => ApiError::new(StatusCode::BAD_REQUEST, "invalid", msg).field(field),
            CoreError::Format { field, .. } => ApiError::new(StatusCode::BAD_REQUEST, "bad_format", msg).field(field),
            CoreError::DimMismatch { .. } => ApiError::new(StatusCode::BAD_REQUEST, "dim_mismatch", msg),
            CoreError::Io { .. } => ApiError::new(StatusCode::BAD_REQUEST, "io", msg).field("path"),
            CoreError::TerminalState { .. } => ApiError::new(StatusCode::CONFLICT, "terminal", msg),
            CoreError::Numeric { .. } => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "numeric", msg),
            _ => ApiError::new(StatusCode::BAD_REQUEST, "invalid", msg),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

pub type ApiResult<T> = std::result::Result<T, ApiError>;
