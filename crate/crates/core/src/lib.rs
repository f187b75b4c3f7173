//! Carbon-aware service control: a telemetry pipeline feeding SLO
//! observations to decision systems that reconfigure a managed service.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bus;
pub mod clock;
pub mod decision;
pub mod emma;
pub mod hook;
pub mod http;
pub mod store;
pub mod service_api;
pub mod orchestrator;
pub mod workload;
