use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    /// Another job holds the single job slot.
    #[error("a {0} job is already running")]
    Busy(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    /// The request is well formed but the current state cannot serve it.
    #[error("{0}")]
    Unavailable(String),
    #[error(transparent)]
    Core(#[from] vadrank_core::Error),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        use vadrank_core::Error as E;
        match self {
            Self::Busy(_) => StatusCode::CONFLICT,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::Unavailable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::Core(
                E::InvalidFeedback(_)
                | E::InvalidArgument(_)
                | E::Config { .. }
                | E::ArchMismatch { .. }
                | E::InsufficientData { .. }
                | E::LabelOverlap { .. },
            ) => StatusCode::BAD_REQUEST,
            Self::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(json!({ "error": self.to_string() }))).into_response()
    }
}
