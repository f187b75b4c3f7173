//! Embedded time-series store with windowed aggregation queries.

pub mod memory;
pub mod query;
pub mod remote;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub use memory::MemoryStore;
pub use query::{Aggregation, ParseError, QuerySpec};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("invalid point: {0}")]
    InvalidPoint(&'static str),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("journal error: {0}")]
    Journal(#[from] std::io::Error),
    #[error("journal line {line}: {source}")]
    JournalDecode {
        line: usize,
        source: serde_json::Error,
    },
    #[error("remote store: {0}")]
    Remote(String),
}

/// One measurement. Journal/wire keys are `m`, `tg`, `f`, `ts`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryPoint {
    #[serde(rename = "m")]
    pub measurement: String,
    #[serde(rename = "tg", default)]
    pub tags: BTreeMap<String, String>,
    #[serde(rename = "f")]
    pub fields: BTreeMap<String, f64>,
    pub ts: i64,
}

impl TelemetryPoint {
    pub fn new(measurement: impl Into<String>, ts: i64) -> Self {
        Self {
            measurement: measurement.into(),
            tags: BTreeMap::new(),
            fields: BTreeMap::new(),
            ts,
        }
    }

    pub fn field(mut self, name: impl Into<String>, value: f64) -> Self {
        self.fields.insert(name.into(), value);
        self
    }

    pub fn tag(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.tags.insert(name.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.measurement.is_empty() {
            return Err(StoreError::InvalidPoint("empty measurement"));
        }
        if self.fields.is_empty() {
            return Err(StoreError::InvalidPoint("no fields"));
        }
        if self.fields.values().any(|v| !v.is_finite()) {
            return Err(StoreError::InvalidPoint("non-finite field value"));
        }
        Ok(())
    }
}

/// The three operations any telemetry database adapter must provide.
#[async_trait]
pub trait StoreConnector: Send + Sync {
    async fn write(&self, point: TelemetryPoint) -> Result<(), StoreError>;

    async fn query(&self, q: &QuerySpec, now_ms: i64) -> Result<Option<f64>, StoreError>;

    fn parse_query(&self, text: &str) -> Result<QuerySpec, StoreError> {
        Ok(QuerySpec::parse(text)?)
    }
}
