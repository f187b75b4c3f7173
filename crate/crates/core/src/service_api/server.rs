use super::alias::{apply_alias, AliasMap};
use super::controller::{ControllerError, ServiceController};
use super::spec::{validate_settings, ConfigError, SettingSpec, SloConfig, SloSpec};
use crate::clock::Clock;
use crate::http::{error_response, HttpServer};
use crate::store::StoreConnector;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::RwLock;
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use tracing::{info, warn};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7812";

#[derive(Debug, Clone)]
struct LiveSlo {
    public: SloSpec,
    internal_id: String,
}

#[derive(Debug, Clone)]
struct LiveSetting {
    public: SettingSpec,
    internal_id: String,
}

/// One immutable configuration generation. Requests hold an `Arc` to the
/// generation they started under.
#[derive(Debug, Clone, Default)]
struct Live {
    slos: Vec<LiveSlo>,
    settings: Vec<LiveSetting>,
    aliased: bool,
}

impl Live {
    fn slo(&self, id: &str) -> Option<&LiveSlo> {
        self.slos.iter().find(|s| s.public.id == id)
    }

    fn setting(&self, id: &str) -> Option<&LiveSetting> {
        self.settings.iter().find(|s| s.public.id == id)
    }
}

#[derive(Serialize)]
struct SloView<'a> {
    id: &'a str,
    description: &'a str,
    unit: &'a str,
    min: f64,
    max: f64,
}

impl<'a> From<&'a SloSpec> for SloView<'a> {
    fn from(s: &'a SloSpec) -> Self {
        Self {
            id: &s.id,
            description: &s.description,
            unit: &s.unit,
            min: s.s_min,
            max: s.s_max,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// SLO API and service-control API over one configuration.
pub struct ServiceApi {
    live: RwLock<Arc<Live>>,
    store: Arc<dyn StoreConnector>,
    controller: Arc<dyn ServiceController>,
    clock: Arc<dyn Clock>,
    alias_override: Option<AliasMap>,
    last_path: parking_lot::Mutex<Option<PathBuf>>,
    reconfiguring: tokio::sync::Mutex<()>,
    setting_locks: parking_lot::Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl ServiceApi {
    /// `alias_override`, when given, replaces the `aliases` of every
    /// configuration file loaded by this instance.
    pub async fn new(
        config: SloConfig,
        controller: Arc<dyn ServiceController>,
        store: Arc<dyn StoreConnector>,
        clock: Arc<dyn Clock>,
        alias_override: Option<AliasMap>,
    ) -> Result<Arc<Self>, ApiError> {
        let api = Self {
            live: RwLock::new(Arc::new(Live::default())),
            store,
            controller,
            clock,
            alias_override,
            last_path: parking_lot::Mutex::new(None),
            reconfiguring: tokio::sync::Mutex::new(()),
            setting_locks: parking_lot::Mutex::new(HashMap::new()),
        };
        let live = api.build(config).await?;
        *api.live.write() = Arc::new(live);
        Ok(Arc::new(api))
    }

    pub async fn from_file(
        path: impl Into<PathBuf>,
        controller: Arc<dyn ServiceController>,
        store: Arc<dyn StoreConnector>,
        clock: Arc<dyn Clock>,
        alias_override: Option<AliasMap>,
    ) -> Result<Arc<Self>, ApiError> {
        let path = path.into();
        let config = SloConfig::load(&path)?;
        let api = Self::new(config, controller, store, clock, alias_override).await?;
        *api.last_path.lock() = Some(path);
        Ok(api)
    }

    async fn build(&self, config: SloConfig) -> Result<Live, ApiError> {
        let aliases = self.alias_override.clone().unwrap_or(config.aliases);
        let settings = if config.settings.is_empty() {
            match self.controller.list().await {
                Ok(s) => s,
                Err(e) => {
                    warn!("controller list failed, serving no settings: {e}");
                    Vec::new()
                }
            }
        } else {
            config.settings
        };
        validate_settings(&settings)?;
        let public_slos = apply_alias(&config.slos, &aliases)?;
        let public_settings = apply_alias(&settings, &aliases)?;
        Ok(Live {
            slos: public_slos
                .into_iter()
                .zip(config.slos)
                .map(|(public, internal)| LiveSlo {
                    public,
                    internal_id: internal.id,
                })
                .collect(),
            settings: public_settings
                .into_iter()
                .zip(settings)
                .map(|(public, internal)| LiveSetting {
                    public,
                    internal_id: internal.id,
                })
                .collect(),
            aliased: !aliases.is_empty(),
        })
    }

    fn snapshot(&self) -> Arc<Live> {
        self.live.read().clone()
    }

    /// Loads `path` and swaps it in atomically. On error the current
    /// configuration stays live.
    pub async fn reconfigure(&self, path: impl Into<PathBuf>) -> Result<(usize, usize), ApiError> {
        let path = path.into();
        let _guard = self.reconfiguring.lock().await;
        let config = SloConfig::load(&path)?;
        let live = self.build(config).await?;
        let counts = (live.slos.len(), live.settings.len());
        *self.live.write() = Arc::new(live);
        *self.last_path.lock() = Some(path.clone());
        info!("reconfigured from {}", path.display());
        Ok(counts)
    }

    /// Re-reads the most recently loaded file.
    pub async fn reload(&self) -> Result<(usize, usize), ApiError> {
        let path = self.last_path.lock().clone();
        match path {
            Some(p) => self.reconfigure(p).await,
            None => Err(ConfigError::Alias("no configuration file to reload".into()).into()),
        }
    }

    pub fn public_slo_ids(&self) -> Vec<String> {
        self.snapshot().slos.iter().map(|s| s.public.id.clone()).collect()
    }

    fn setting_lock(&self, internal: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.setting_locks
            .lock()
            .entry(internal.to_string())
            .or_default()
            .clone()
    }
}

fn not_found(kind: &str) -> Response {
    error_response(StatusCode::NOT_FOUND, format!("unknown {kind}"))
}

fn controller_failure(e: &ControllerError, live: &Live) -> Response {
    warn!("controller error: {e}");
    let (status, msg) = match e {
        ControllerError::Unreachable(_) => (StatusCode::BAD_GATEWAY, "controller unreachable"),
        ControllerError::Type(_) => (StatusCode::BAD_REQUEST, "value has the wrong type"),
        ControllerError::UnknownSetting(_) => (StatusCode::BAD_GATEWAY, "setting unknown to the controller"),
        ControllerError::Rejected(_) => (StatusCode::BAD_REQUEST, "controller rejected the request"),
    };
    if live.aliased {
        error_response(status, msg)
    } else {
        error_response(status, e)
    }
}

async fn list_slos(State(api): State<Arc<ServiceApi>>) -> Json<Value> {
    let live = api.snapshot();
    let views: Vec<SloView> = live.slos.iter().map(|s| (&s.public).into()).collect();
    Json(json!(views))
}

async fn describe_slo(State(api): State<Arc<ServiceApi>>, Path(id): Path<String>) -> Response {
    let live = api.snapshot();
    match live.slo(&id) {
        Some(s) => Json(json!(SloView::from(&s.public))).into_response(),
        None => not_found("SLO"),
    }
}

async fn slo_value(State(api): State<Arc<ServiceApi>>, Path(id): Path<String>) -> Response {
    let live = api.snapshot();
    let Some(slo) = live.slo(&id) else {
        return not_found("SLO");
    };
    let now = api.clock.now_ms();
    match api.store.query(&slo.public.query, now).await {
        Ok(Some(v)) => Json(json!({
            "id": slo.public.id,
            "value": v,
            "fulfilled": slo.public.fulfilled(v),
        }))
        .into_response(),
        Ok(None) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => {
            warn!("store query for {} failed: {e}", slo.internal_id);
            error_response(StatusCode::BAD_GATEWAY, "telemetry store unavailable")
        }
    }
}

async fn list_settings(State(api): State<Arc<ServiceApi>>) -> Json<Value> {
    let live = api.snapshot();
    let views: Vec<&SettingSpec> = live.settings.iter().map(|s| &s.public).collect();
    Json(json!(views))
}

async fn describe_setting(State(api): State<Arc<ServiceApi>>, Path(id): Path<String>) -> Response {
    let live = api.snapshot();
    match live.setting(&id) {
        Some(s) => Json(json!(s.public)).into_response(),
        None => not_found("setting"),
    }
}

async fn setting_value(State(api): State<Arc<ServiceApi>>, Path(id): Path<String>) -> Response {
    let live = api.snapshot();
    let Some(s) = live.setting(&id) else {
        return not_found("setting");
    };
    match api.controller.get(&s.internal_id).await {
        Ok(v) => Json(json!({"id": s.public.id, "value": v})).into_response(),
        Err(e) => controller_failure(&e, &live),
    }
}

async fn put_setting_value(
    State(api): State<Arc<ServiceApi>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let live = api.snapshot();
    let Some(s) = live.setting(&id) else {
        return not_found("setting");
    };
    let value = match serde_json::from_slice::<Value>(&body)
        .ok()
        .and_then(|v| v.get("value").and_then(Value::as_f64))
    {
        Some(v) => v,
        None => return error_response(StatusCode::BAD_REQUEST, "body must be {\"value\": <number>}"),
    };
    if let Err(e) = s.public.check(value) {
        return error_response(StatusCode::BAD_REQUEST, e);
    }
    let lock = api.setting_lock(&s.internal_id);
    let _serialized = lock.lock().await;
    match api.controller.set(&s.internal_id, value).await {
        Ok(()) => Json(json!({"id": s.public.id, "value": value})).into_response(),
        Err(e) => controller_failure(&e, &live),
    }
}

async fn reconfigure(State(api): State<Arc<ServiceApi>>, body: Bytes) -> Response {
    let path = match serde_json::from_slice::<Value>(&body)
        .ok()
        .and_then(|v| v.get("path").and_then(Value::as_str).map(str::to_string))
    {
        Some(p) => p,
        None => return error_response(StatusCode::BAD_REQUEST, "body must be {\"path\": \"<file>\"}"),
    };
    match api.reconfigure(path).await {
        Ok((slos, settings)) => Json(json!({"slos": slos, "settings": settings})).into_response(),
        Err(e) => error_response(StatusCode::BAD_REQUEST, e),
    }
}

pub fn service_router(api: Arc<ServiceApi>) -> Router {
    Router::new()
        .route("/slos", get(list_slos))
        .route("/slos/{id}", get(describe_slo))
        .route("/slos/{id}/value", get(slo_value))
        .route("/settings", get(list_settings))
        .route("/settings/{id}", get(describe_setting))
        .route("/settings/{id}/value", get(setting_value).put(put_setting_value))
        .route("/reconfigure", post(reconfigure))
        .fallback(|| async { error_response(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(api)
}

pub async fn serve_http(api: Arc<ServiceApi>, listen: &str) -> std::io::Result<HttpServer> {
    HttpServer::bind(listen, service_router(api)).await
}
