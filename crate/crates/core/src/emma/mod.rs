//! Energy Mix Manager: carbon intensity of energy mixes and of
//! (country, time) keys, served over HTTP.

pub mod locations;
pub mod server;
pub mod sources;

use axum::http::StatusCode;
use std::path::Path;

pub use locations::{
    load_location_dataset, parse_location_dataset, CarbonIntensityRecord, Granularity,
    LocationIndex,
};
pub use server::{emma_router, serve_http, EmmaService};
pub use sources::{
    load_source_table, mix_intensity, parse_source_table, EnergyMix, EnergySource, SourceTable,
};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7813";

#[derive(Debug, thiserror::Error)]
pub enum EmmaError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown energy source {0:?}")]
    UnknownSource(String),
    #[error("source table is missing: {0}")]
    MissingSources(String),
    #[error("malformed row at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("duplicate key {0}")]
    DuplicateKey(String),
    #[error("unknown country {0}")]
    UnknownCountry(String),
    #[error("timestamp {ts} precedes earliest record {earliest}")]
    OutOfRange { ts: i64, earliest: i64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl EmmaError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownCountry(_) => StatusCode::NOT_FOUND,
            Self::OutOfRange { .. } => StatusCode::RANGE_NOT_SATISFIABLE,
            Self::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        }
    }
}

/// Everything an EMMA instance answers from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmmaData {
    pub sources: SourceTable,
    pub locations: LocationIndex,
}

impl EmmaData {
    pub fn load(sources: impl AsRef<Path>, locations: impl AsRef<Path>) -> Result<Self, EmmaError> {
        Ok(Self {
            sources: load_source_table(sources)?,
            locations: load_location_dataset(locations)?,
        })
    }
}
