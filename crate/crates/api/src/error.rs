// SPDX-License-Identifier: Apache-2.0

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use netorch_bgpd::BgpError;
use netorch_core::autoscaler::ScaleError;
use netorch_core::devsim::SimError;
use netorch_core::fabric::FabricError;
use netorch_core::inventory::InventoryError;
use netorch_core::provisioner::ProvisionError;
use netorch_core::reconciler::ReconcileError;
use serde_json::json;

/// Every failed request answers `{"error":{"code":..,"message":..}}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = match r {
            JsonRejection::JsonDataError(_) => StatusCode::UNPROCESSABLE_ENTITY,
            JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, "invalid_body", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_query", r.body_text())
    }
}

impl From<InventoryError> for ApiError {
    fn from(e: InventoryError) -> Self {
        use InventoryError::*;
        let (status, code) = match &e {
            DuplicateName(_) => (StatusCode::CONFLICT, "duplicate_name"),
            DuplicateTenant(_) => (StatusCode::CONFLICT, "duplicate_tenant"),
            UnknownDevice(_) => (StatusCode::NOT_FOUND, "unknown_device"),
            UnknownTenant(_) => (StatusCode::NOT_FOUND, "unknown_tenant"),
            UnknownDialect(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_dialect"),
            InvalidEndpoint(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_endpoint"),
            MissingAsn => (StatusCode::UNPROCESSABLE_ENTITY, "missing_asn"),
            InvalidAsn => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_asn"),
            InvalidQuota => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_quota"),
            Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "inventory_io"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<ProvisionError> for ApiError {
    fn from(e: ProvisionError) -> Self {
        use ProvisionError::*;
        let status = match &e {
            UnknownInstance(_) => StatusCode::NOT_FOUND,
            QuotaExceeded { .. } | NotReady { .. } | Terminated(_) | IllegalTransition { .. } => StatusCode::CONFLICT,
            WaitTimeout(_) => StatusCode::GATEWAY_TIMEOUT,
            Failed(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<ReconcileError> for ApiError {
    fn from(e: ReconcileError) -> Self {
        let (status, code) = match &e {
            ReconcileError::UnknownTarget(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_target"),
            ReconcileError::EmptyTargets => (StatusCode::UNPROCESSABLE_ENTITY, "empty_targets"),
            ReconcileError::Dialect(_) => (StatusCode::UNPROCESSABLE_ENTITY, "dialect"),
            ReconcileError::Channel(_) => (StatusCode::BAD_GATEWAY, "channel"),
            ReconcileError::Fetch(_) => (StatusCode::BAD_GATEWAY, "fetch"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<ScaleError> for ApiError {
    fn from(e: ScaleError) -> Self {
        let (status, code) = match &e {
            ScaleError::InvalidSample(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_sample"),
            ScaleError::InvalidPolicy(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_policy"),
            ScaleError::UnknownInstance(_) => (StatusCode::NOT_FOUND, "unknown_instance"),
            ScaleError::UnknownPolicy(_) => (StatusCode::NOT_FOUND, "unknown_policy"),
            ScaleError::ProvisionFailed(_) => (StatusCode::BAD_GATEWAY, "provision_failed"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<FabricError> for ApiError {
    fn from(e: FabricError) -> Self {
        match e {
            FabricError::UnknownSpeaker(_) => Self::not_found("unknown_speaker", e.to_string()),
            FabricError::Bgp(b) => b.into(),
        }
    }
}

impl From<BgpError> for ApiError {
    fn from(e: BgpError) -> Self {
        let (status, code) = match &e {
            BgpError::InvalidPrefix(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_prefix"),
            BgpError::UnknownPeer(_) => (StatusCode::NOT_FOUND, "unknown_peer"),
            _ => (StatusCode::BAD_GATEWAY, "bgp"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        let (status, code) = match &e {
            SimError::UnknownDialect(_) => (StatusCode::UNPROCESSABLE_ENTITY, "unknown_dialect"),
            SimError::UnknownEndpoint(_) => (StatusCode::NOT_FOUND, "unknown_endpoint"),
            SimError::PortExhausted => (StatusCode::SERVICE_UNAVAILABLE, "port_exhausted"),
            SimError::Bind(_) => (StatusCode::INTERNAL_SERVER_ERROR, "bind"),
        };
        Self::new(status, code, e.to_string())
    }
}
