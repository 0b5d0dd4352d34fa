//! Wire types and error mapping.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use deltahands::config::{ConfigError, TopologySpec};
use deltahands::grasp::GraspError;
use deltahands::hand::HandError;
use deltahands::teleop::{Mapping, PoseSample, TeleopError};
use deltahands::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind}: {detail}")]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub detail: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    schema_version: u32,
    error: &'a str,
    detail: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, detail: String) -> Self {
        Self { status, kind, detail }
    }

    pub fn invalid(kind: &'static str, detail: String) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, kind, detail)
    }

    pub fn internal(detail: String) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", detail)
    }

    pub fn not_found(detail: String) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", detail)
    }

    pub fn from_json(e: serde_json::Error) -> Self {
        if e.is_syntax() || e.is_eof() {
            Self::new(StatusCode::BAD_REQUEST, "MalformedJson", e.to_string())
        } else {
            Self::invalid("InvalidDocument", e.to_string())
        }
    }

    pub fn from_hand(e: HandError) -> Self {
        let kind = match &e {
            HandError::InvalidParams(_) => "InvalidParams",
            HandError::InvalidTopology(_) => "InvalidTopology",
            HandError::DimensionMismatch { .. } => "DimensionMismatch",
            HandError::Finger { .. } => "Unreachable",
            HandError::OutOfStroke { .. } => "OutOfStroke",
        };
        Self::invalid(kind, e.to_string())
    }

    pub fn from_config(e: ConfigError) -> Self {
        match e {
            ConfigError::Hand(h) => Self::from_hand(h),
            ConfigError::Parse(p) => Self::from_json(p),
            ConfigError::Version(v) => Self::invalid("UnsupportedVersion", format!("schema_version {v}")),
            ConfigError::Io { .. } => Self::internal(e.to_string()),
        }
    }

    pub fn from_teleop(e: TeleopError) -> Self {
        match e {
            TeleopError::Hand(h) => Self::from_hand(h),
            TeleopError::InvalidAxes(_) => Self::invalid("InvalidAxes", e.to_string()),
            TeleopError::InvalidCalibration(_) => Self::invalid("InvalidCalibration", e.to_string()),
            TeleopError::MalformedStream { .. } => Self::invalid("InvalidSample", e.to_string()),
            TeleopError::Io(_) => Self::internal(e.to_string()),
        }
    }

    pub fn from_grasp(e: GraspError) -> Self {
        let kind = match &e {
            GraspError::InvalidObject(_) | GraspError::MeshParse(_) => "InvalidObject",
            GraspError::TooFewEdges(_) => "InvalidSampling",
            _ => "GraspFailed",
        };
        Self::invalid(kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody { schema_version: SCHEMA_VERSION, error: self.kind, detail: &self.detail };
        (self.status, Json(body)).into_response()
    }
}

/// Messages accepted on the socket.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Targets {
        fingertips: Vec<Point3>,
        #[serde(default)]
        schema_version: Option<u32>,
    },
    TeleopSample {
        sample: PoseSample,
        #[serde(default)]
        schema_version: Option<u32>,
    },
    Mapping {
        #[serde(flatten)]
        mapping: Mapping,
        #[serde(default)]
        schema_version: Option<u32>,
    },
    Synergy {
        topology: TopologySpec,
        #[serde(default)]
        schema_version: Option<u32>,
    },
}

impl ClientMessage {
    pub fn name(&self) -> &'static str {
        match self {
            ClientMessage::Targets { .. } => "targets",
            ClientMessage::TeleopSample { .. } => "teleop_sample",
            ClientMessage::Mapping { .. } => "mapping",
            ClientMessage::Synergy { .. } => "synergy",
        }
    }

    pub fn schema_version(&self) -> Option<u32> {
        match self {
            ClientMessage::Targets { schema_version, .. }
            | ClientMessage::TeleopSample { schema_version, .. }
            | ClientMessage::Mapping { schema_version, .. }
            | ClientMessage::Synergy { schema_version, .. } => *schema_version,
        }
    }
}

/// Non-state replies on the socket.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerReply {
    Ack { schema_version: u32, request: &'static str, seq: u64 },
    Error { schema_version: u32, error: &'static str, detail: String },
}

impl ServerReply {
    pub fn ack(request: &'static str, seq: u64) -> Self {
        ServerReply::Ack { schema_version: SCHEMA_VERSION, request, seq }
    }

    pub fn error(e: &ApiError) -> Self {
        ServerReply::Error { schema_version: SCHEMA_VERSION, error: e.kind, detail: e.detail.clone() }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct IkRequest {
    pub targets: Vec<Point3>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IkResponse {
    pub schema_version: u32,
    pub reduced_actuation: Vec<f64>,
    pub full_actuation: Vec<f64>,
    pub residuals: Vec<f64>,
}
