//! The gateway decision systems talk to: SLO observation, service control,
//! aliasing, and declarative reconfiguration.

pub mod alias;
pub mod controller;
pub mod server;
pub mod spec;

pub use alias::{apply_alias, AliasEntry, AliasMap, Aliasable};
pub use controller::{
    mock_service_controller, ControllerError, LocalController, MockServiceController,
    ServiceController,
};
pub use server::{serve_http, service_router, ApiError, ServiceApi};
pub use spec::{
    parse_slos, validate_settings, ConfigError, SettingSpec, SettingValueError, SloConfig,
    SloSpec, ValueType,
};
