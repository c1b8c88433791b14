use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use csi_core::model::Violation;
use csi_core::survey::SurveyError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApiError {
    #[error("no such session: {0}")]
    NotFound(String),
    #[error("invalid session config")]
    Invalid(Vec<Violation>),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("session actor has stopped")]
    Closed,
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Closed | ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<SurveyError> for ApiError {
    fn from(e: SurveyError) -> Self {
        ApiError::BadRequest(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = match &self {
            ApiError::Invalid(violations) => {
                json!({"error": self.to_string(), "violations": violations})
            }
            _ => json!({"error": self.to_string()}),
        };
        (self.status(), Json(body)).into_response()
    }
}
