use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use sketchloop_core::analogy::AnalogyError;
use sketchloop_core::backends::{BackendError, BackendKind};
use sketchloop_core::session::SessionError;
use thiserror::Error;

/// Error body: `{"error": "<code>", "message": "...", "backend": "<kind>"?}`.
#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{kind} backend failed: {message}")]
    Backend { kind: BackendKind, message: String },
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Backend { .. } => StatusCode::BAD_GATEWAY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "not_found",
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Backend { .. } => "backend_failed",
            ApiError::Internal(_) => "internal",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code(), "message": self.to_string() });
        if let ApiError::Backend { kind, .. } = &self {
            body["backend"] = json!(kind.as_str());
        }
        if let ApiError::Internal(_) = &self {
            tracing::error!(error = %self, "request failed");
        }
        (self.status(), Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::UnknownStroke(_) => ApiError::NotFound(e.to_string()),
            _ => ApiError::BadRequest(e.to_string()),
        }
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        ApiError::Backend {
            kind: e.kind,
            message: e.failure.to_string(),
        }
    }
}

impl From<AnalogyError> for ApiError {
    fn from(e: AnalogyError) -> Self {
        match e {
            AnalogyError::InvalidRequest(_) => ApiError::BadRequest(e.to_string()),
            AnalogyError::Backend(inner) => inner.into(),
            AnalogyError::EmptyReply(_) | AnalogyError::Unparseable { .. } => ApiError::Backend {
                kind: BackendKind::Llm,
                message: e.to_string(),
            },
        }
    }
}
