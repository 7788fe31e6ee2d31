use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict(String),
    Invalid {
        field: Option<String>,
        message: String,
    },
    Internal(String),
}

impl ApiError {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        ApiError::Invalid {
            field: Some(field.to_string()),
            message: message.into(),
        }
    }
}

impl From<mpart_core::Error> for ApiError {
    fn from(e: mpart_core::Error) -> Self {
        use mpart_core::Error as E;
        let message = e.to_string();
        match e {
            E::Config { field, .. } => ApiError::Invalid {
                message,
                field: Some(field),
            },
            E::InputDomain { .. } | E::DimensionMismatch { .. } | E::Ingest { .. } | E::Io(_) => {
                ApiError::Invalid {
                    field: None,
                    message,
                }
            }
            E::State(msg) => ApiError::Conflict(msg),
            _ => ApiError::Internal(message),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message, field) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m, None),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m, None),
            ApiError::Invalid { field, message } => (StatusCode::BAD_REQUEST, message, field),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m, None),
        };
        (
            status,
            Json(json!({"v": 1, "error": message, "field": field})),
        )
            .into_response()
    }
}
