use capacity_core::analytics::AnalyticsError;
use capacity_core::dataset::DatasetError;
use capacity_core::features::FeatureError;
use capacity_core::forecast::ForecastError;
use capacity_core::ingest::IngestError;
use capacity_core::regress::RegressError;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    NotFound,
    BadRequest,
    Conflict,
    Internal,
}

impl ErrorKind {
    pub fn status(self) -> u16 {
        match self {
            ErrorKind::NotFound => 404,
            ErrorKind::BadRequest => 400,
            ErrorKind::Conflict => 409,
            ErrorKind::Internal => 500,
        }
    }
}

/// An engine failure with the HTTP class it maps to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
#[error("{message}")]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ServiceError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ServiceError {
            kind,
            message: message.into(),
        }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::NotFound, message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::BadRequest, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Conflict, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Internal, message)
    }
}

impl From<DatasetError> for ServiceError {
    fn from(e: DatasetError) -> Self {
        let kind = match e {
            DatasetError::UnknownUnit { .. } | DatasetError::NoClinics { .. } => ErrorKind::NotFound,
            DatasetError::InvalidRange { .. } => ErrorKind::BadRequest,
            DatasetError::Checksum { .. } | DatasetError::Schema { .. } | DatasetError::Malformed(_) => {
                ErrorKind::BadRequest
            }
            DatasetError::Io(_) => ErrorKind::Internal,
        };
        ServiceError::new(kind, e.to_string())
    }
}

impl From<FeatureError> for ServiceError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Dataset(inner) => inner.into(),
            other => ServiceError::bad_request(other.to_string()),
        }
    }
}

impl From<RegressError> for ServiceError {
    fn from(e: RegressError) -> Self {
        match e {
            RegressError::SchemaMismatch { .. } => ServiceError::conflict(e.to_string()),
            RegressError::Feature(inner) => inner.into(),
            RegressError::Io(_) | RegressError::Numerical(_) => ServiceError::internal(e.to_string()),
            other => ServiceError::bad_request(other.to_string()),
        }
    }
}

impl From<ForecastError> for ServiceError {
    fn from(e: ForecastError) -> Self {
        match e {
            ForecastError::ForeignClinic { .. } => ServiceError::not_found(e.to_string()),
            ForecastError::UnitKindMismatch { .. } => ServiceError::conflict(e.to_string()),
            ForecastError::Regress(inner) => inner.into(),
            ForecastError::Feature(inner) => inner.into(),
            ForecastError::Dataset(inner) => inner.into(),
            other => ServiceError::bad_request(other.to_string()),
        }
    }
}

impl From<AnalyticsError> for ServiceError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Dataset(inner) => inner.into(),
            AnalyticsError::Forecast(inner) => inner.into(),
            other => ServiceError::bad_request(other.to_string()),
        }
    }
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io(_) => ServiceError::internal(e.to_string()),
            other => ServiceError::bad_request(other.to_string()),
        }
    }
}
