use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("{0}")]
    NotFound(String),

    #[error("{0}")]
    Conflict(String),

    #[error("{0}")]
    BadRequest(String),

    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<imboost::Error> for ApiError {
    fn from(e: imboost::Error) -> Self {
        use imboost::Error as E;
        match e {
            E::LabelConflict { .. } | E::State(_) => ApiError::Conflict(e.to_string()),
            E::Shape { .. }
            | E::Config(_)
            | E::Empty(_)
            | E::Degenerate(_)
            | E::UndefinedMetric(_)
            | E::Parse { .. }
            | E::Format(_)
            | E::Csv(_)
            | E::Json(_) => ApiError::BadRequest(e.to_string()),
            E::NonFinite { .. } | E::Oracle(_) | E::Io(_) => ApiError::Internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}
