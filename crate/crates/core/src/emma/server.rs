use super::{mix_intensity, EmmaData, EmmaError, EnergyMix, Granularity};
use crate::http::{error_response, HttpServer};
use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde_json::json;
use std::collections::HashMap;
use std::sync::Arc;

/// Shared, atomically reloadable EMMA state.
pub struct EmmaService {
    data: RwLock<Arc<EmmaData>>,
}

impl EmmaService {
    pub fn new(data: EmmaData) -> Arc<Self> {
        Arc::new(Self {
            data: RwLock::new(Arc::new(data)),
        })
    }

    pub fn snapshot(&self) -> Arc<EmmaData> {
        self.data.read().clone()
    }

    pub fn reload(&self, data: EmmaData) {
        *self.data.write() = Arc::new(data);
    }
}

impl IntoResponse for EmmaError {
    fn into_response(self) -> Response {
        error_response(self.status(), self)
    }
}

async fn intensity(
    State(svc): State<Arc<EmmaService>>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Json<serde_json::Value>, EmmaError> {
    let param = |k: &str| {
        params
            .get(k)
            .ok_or_else(|| EmmaError::Validation(format!("missing query parameter `{k}`")))
    };
    let country = param("country")?;
    let ts: i64 = param("ts")?
        .parse()
        .map_err(|_| EmmaError::Validation("`ts` must be integer milliseconds".into()))?;
    let granularity: Granularity = param("granularity")?.parse().map_err(EmmaError::Validation)?;
    let v = svc
        .snapshot()
        .locations
        .location_intensity(country, ts, granularity)?;
    Ok(Json(json!({ "intensity_gco2eq_kwh": v })))
}

async fn intensity_mix(
    State(svc): State<Arc<EmmaService>>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, EmmaError> {
    let mix: EnergyMix = serde_json::from_slice(&body)
        .map_err(|e| EmmaError::Validation(format!("bad mix body: {e}")))?;
    let v = mix_intensity(&mix, &svc.snapshot().sources)?;
    Ok(Json(json!({ "intensity_gco2eq_kwh": v })))
}

async fn sources(State(svc): State<Arc<EmmaService>>) -> Json<serde_json::Value> {
    let data = svc.snapshot();
    let list: Vec<_> = data
        .sources
        .iter()
        .map(|(s, v)| json!({"source": s.as_str(), "intensity_gco2eq_kwh": v}))
        .collect();
    Json(json!(list))
}

pub fn emma_router(svc: Arc<EmmaService>) -> Router {
    Router::new()
        .route("/intensity", get(intensity))
        .route("/intensity/mix", post(intensity_mix))
        .route("/sources", get(sources))
        .fallback(|| async { error_response(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(svc)
}

pub async fn serve_http(svc: Arc<EmmaService>, listen: &str) -> std::io::Result<HttpServer> {
    HttpServer::bind(listen, emma_router(svc)).await
}
