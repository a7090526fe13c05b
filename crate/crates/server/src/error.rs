use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use sciweave_core::Error as CoreError;

/// JSON error body: `{"error": kind, "message": text}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
    pub missing: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            message: message.into(),
            missing: Vec::new(),
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", msg)
    }

    pub fn conflict(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", msg)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        match e.root() {
            CoreError::NotFound(_) => Self::not_found(message),
            CoreError::MissingArtifact(roles) => Self {
                missing: roles.iter().map(|r| r.file_name()).collect(),
                ..Self::new(StatusCode::UNPROCESSABLE_ENTITY, "missing_artifact", message)
            },
            CoreError::RunActive(_) => Self::conflict(message),
            CoreError::PathEscape(_)
            | CoreError::InvalidRequest(_)
            | CoreError::UnknownModel(_)
            | CoreError::Precondition(_) => Self::bad_request(message),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.kind, "message": self.message });
        if !self.missing.is_empty() {
            body["missing"] = json!(self.missing);
        }
        (self.status, Json(body)).into_response()
    }
}
