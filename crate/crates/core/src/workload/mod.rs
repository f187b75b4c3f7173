//! Desk-scale stand-in for the managed transcoding service, its clients and
//! its power meter.

pub mod model;
pub mod reporters;
pub mod service;

pub use model::{fps_model, power_model, BufferDip, ModelError, WorkloadModel};
pub use reporters::{
    attach_virtual, run_fps_reporter, run_power_reporter, run_reporter, ReporterHandle,
    ReporterKind, ReporterSpec,
};
pub use service::{run_service, ControlRequest, ControlServer, MockService, MockServiceHandle, THREAD_SETTING};
