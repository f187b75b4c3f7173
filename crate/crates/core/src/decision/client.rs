//! HTTP client for the three APIs a decision system may use.

use super::DsError;
use crate::emma::Granularity;
use parking_lot::Mutex;
use reqwest::StatusCode;
use serde::Deserialize;
use serde_json::{json, Value};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamRange {
    pub min: f64,
    pub max: f64,
    pub integer: bool,
}

/// A value crossing the API boundary, kept as raw bits so trajectories can
/// be compared exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryEvent {
    Read(u64),
    Write(u64),
}

/// Captures every response body and every value read or written.
#[derive(Debug, Default)]
pub struct Recorder {
    responses: Mutex<Vec<String>>,
    trajectory: Mutex<Vec<TrajectoryEvent>>,
}

impl Recorder {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn responses(&self) -> Vec<String> {
        self.responses.lock().clone()
    }

    pub fn trajectory(&self) -> Vec<TrajectoryEvent> {
        self.trajectory.lock().clone()
    }
}

#[derive(Deserialize)]
struct RangeBody {
    min: f64,
    max: f64,
    #[serde(rename = "type", default)]
    value_type: Option<String>,
}

const ATTEMPTS: u32 = 3;

#[derive(Clone)]
pub struct ApiClient {
    http: reqwest::Client,
    slo_api: String,
    control_api: String,
    emma_api: String,
    recorder: Option<Arc<Recorder>>,
}

/// Accepts `host:port` or a full base URL.
pub fn base_url(endpoint: &str) -> String {
    let e = endpoint.trim_end_matches('/');
    if e.starts_with("http://") || e.starts_with("https://") {
        e.to_string()
    } else {
        format!("http://{e}")
    }
}

impl ApiClient {
    pub fn new(slo_api: &str, control_api: &str, emma_api: &str) -> Self {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .expect("client builds");
        Self {
            http,
            slo_api: base_url(slo_api),
            control_api: base_url(control_api),
            emma_api: base_url(emma_api),
            recorder: None,
        }
    }

    pub fn with_recorder(mut self, recorder: Arc<Recorder>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    fn note(&self, ev: TrajectoryEvent) {
        if let Some(r) = &self.recorder {
            r.trajectory.lock().push(ev);
        }
    }

    /// Returns `None` for 204. Transport failures are retried.
    async fn request(
        &self,
        method: reqwest::Method,
        url: String,
        body: Option<Value>,
    ) -> Result<Option<Value>, DsError> {
        let mut last = String::new();
        for attempt in 0..ATTEMPTS {
            if attempt > 0 {
                tokio::time::sleep(Duration::from_millis(100 << attempt)).await;
            }
            let mut req = self.http.request(method.clone(), &url);
            if let Some(b) = &body {
                req = req.json(b);
            }
            let resp = match req.send().await {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            let text = match resp.text().await {
                Ok(t) => t,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            if let Some(r) = &self.recorder {
                r.responses.lock().push(text.clone());
            }
            if status == StatusCode::NO_CONTENT {
                return Ok(None);
            }
            if !status.is_success() {
                return Err(DsError::Api {
                    url,
                    status: status.as_u16(),
                    body: text,
                });
            }
            return serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| DsError::Protocol(format!("{url}: {e}")));
        }
        Err(DsError::Unreachable(format!("{url}: {last}")))
    }

    async fn get(&self, url: String) -> Result<Option<Value>, DsError> {
        self.request(reqwest::Method::GET, url, None).await
    }

    fn number(v: &Value, key: &str) -> Result<f64, DsError> {
        v[key]
            .as_f64()
            .ok_or_else(|| DsError::Protocol(format!("missing numeric {key:?} in {v}")))
    }

    pub async fn slo_range(&self, id: &str) -> Result<Range, DsError> {
        let v = self
            .get(format!("{}/slos/{id}", self.slo_api))
            .await?
            .ok_or_else(|| DsError::Protocol(format!("empty description for SLO {id}")))?;
        let r: RangeBody = serde_json::from_value(v).map_err(|e| DsError::Protocol(e.to_string()))?;
        self.note(TrajectoryEvent::Read(r.min.to_bits()));
        self.note(TrajectoryEvent::Read(r.max.to_bits()));
        Ok(Range { min: r.min, max: r.max })
    }

    /// `None` when the SLO's query window holds no data.
    pub async fn slo_value(&self, id: &str) -> Result<Option<f64>, DsError> {
        let Some(v) = self.get(format!("{}/slos/{id}/value", self.slo_api)).await? else {
            self.note(TrajectoryEvent::Read(f64::NAN.to_bits()));
            return Ok(None);
        };
        let x = Self::number(&v, "value")?;
        self.note(TrajectoryEvent::Read(x.to_bits()));
        Ok(Some(x))
    }

    pub async fn param_range(&self, id: &str) -> Result<ParamRange, DsError> {
        let v = self
            .get(format!("{}/settings/{id}", self.control_api))
            .await?
            .ok_or_else(|| DsError::Protocol(format!("empty description for setting {id}")))?;
        let r: RangeBody = serde_json::from_value(v).map_err(|e| DsError::Protocol(e.to_string()))?;
        self.note(TrajectoryEvent::Read(r.min.to_bits()));
        self.note(TrajectoryEvent::Read(r.max.to_bits()));
        Ok(ParamRange {
            min: r.min,
            max: r.max,
            integer: r.value_type.as_deref() == Some("integer"),
        })
    }

    pub async fn param_value(&self, id: &str) -> Result<f64, DsError> {
        let v = self
            .get(format!("{}/settings/{id}/value", self.control_api))
            .await?
            .ok_or_else(|| DsError::Protocol(format!("empty value for setting {id}")))?;
        let x = Self::number(&v, "value")?;
        self.note(TrajectoryEvent::Read(x.to_bits()));
        Ok(x)
    }

    pub async fn set_param(&self, id: &str, value: f64) -> Result<(), DsError> {
        self.note(TrajectoryEvent::Write(value.to_bits()));
        self.request(
            reqwest::Method::PUT,
            format!("{}/settings/{id}/value", self.control_api),
            Some(json!({ "value": value })),
        )
        .await
        .map(|_| ())
    }

    pub async fn intensity(&self, country: &str, ts: i64, granularity: Granularity) -> Result<f64, DsError> {
        let url = format!(
            "{}/intensity?country={country}&ts={ts}&granularity={granularity}",
            self.emma_api
        );
        let v = self
            .get(url)
            .await?
            .ok_or_else(|| DsError::Protocol("empty intensity response".into()))?;
        let x = Self::number(&v, "intensity_gco2eq_kwh")?;
        self.note(TrajectoryEvent::Read(x.to_bits()));
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_normalize() {
        assert_eq!(base_url("127.0.0.1:7812"), "http://127.0.0.1:7812");
        assert_eq!(base_url("http://h:1/"), "http://h:1");
    }

    #[tokio::test]
    async fn unreachable_after_retries() {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = l.local_addr().unwrap().to_string();
        drop(l);
        let c = ApiClient::new(&addr, &addr, &addr);
        assert!(matches!(c.slo_value("X").await, Err(DsError::Unreachable(_))));
    }
}
