//! Decision systems. Each one is a sequential control loop that sees the
//! managed service only through the SLO, control and EMMA HTTP APIs.

pub mod client;
pub mod gds;
pub mod mdp;
pub mod policy;
pub mod rds;
pub mod rlds;

pub use client::{base_url, ApiClient, ParamRange, Range, Recorder, TrajectoryEvent};
pub use gds::{gds_decide, run_gds, GdsConfig, GdsInput, GdsRunConfig};
pub use mdp::{
    bin_values, build_state, carbon_footprint, default_bins, in_fn, reward, MdpAction, MdpState,
    ParamObs, SloObs,
};
pub use policy::{policy_act, Policy, PolicyConfig, Transition};
pub use rds::{run_rds, RdsConfig};
pub use rlds::{load_policy, rlds_train, save_policy, RldsConfig};

use crate::emma::Granularity;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::time::Instant;

#[derive(Debug, thiserror::Error)]
pub enum DsError {
    #[error("API unreachable: {0}")]
    Unreachable(String),
    #[error("{url} answered {status}: {body}")]
    Api { url: String, status: u16, body: String },
    #[error("unexpected API response: {0}")]
    Protocol(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("aborted at step {step}: {source}")]
    Aborted {
        step: u64,
        #[source]
        source: Box<DsError>,
    },
    #[error("step log: {0}")]
    Log(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn default_tau() -> f64 {
    60.0
}
fn default_country() -> String {
    "AT".into()
}
fn default_granularity() -> Granularity {
    Granularity::Hourly
}
fn default_power_slo() -> String {
    "Power".into()
}
fn default_multiplier() -> f64 {
    1.0
}

/// Settings shared by every decision system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLoopConfig {
    #[serde(default = "default_tau")]
    pub tau_s: f64,
    pub slo_api: String,
    pub control_api: String,
    pub emma_api: String,
    #[serde(default)]
    pub seed: u64,
    pub max_steps: u64,
    #[serde(default = "default_country")]
    pub country: String,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,
    /// SLO whose value is the power draw used for the carbon footprint.
    #[serde(default = "default_power_slo")]
    pub power_slo: String,
    /// Only used when the loop runs on its own clock.
    #[serde(default = "default_multiplier")]
    pub clock_multiplier: f64,
    #[serde(default)]
    pub origin_ms: Option<i64>,
}

impl ControlLoopConfig {
    pub fn validate(&self) -> Result<(), DsError> {
        if !(self.tau_s > 0.0) {
            return Err(DsError::Invalid("tau_s must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(DsError::Invalid("max_steps must be positive".into()));
        }
        if !(self.clock_multiplier > 0.0) {
            return Err(DsError::Invalid("clock_multiplier must be positive".into()));
        }
        Ok(())
    }

    pub fn client(&self) -> ApiClient {
        ApiClient::new(&self.slo_api, &self.control_api, &self.emma_api)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub ts: i64,
    pub state: Vec<Option<f64>>,
    pub action: Vec<Option<f64>>,
    pub reward: Option<f64>,
}

/// Per-step log, serialized as CSV `step,ts,<state...>,<action...>,reward`.
/// Missing cells (skipped steps, no reward) are empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepLog {
    pub state_columns: Vec<String>,
    pub action_columns: Vec<String>,
    pub rows: Vec<StepRecord>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl StepLog {
    pub fn new(state_columns: Vec<String>, action_columns: Vec<String>) -> Self {
        Self {
            state_columns,
            action_columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, rec: StepRecord) {
        debug_assert_eq!(rec.state.len(), self.state_columns.len());
        debug_assert_eq!(rec.action.len(), self.action_columns.len());
        self.rows.push(rec);
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), DsError> {
        let err = |e: csv::Error| DsError::Log(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["step".to_string(), "ts".to_string()];
        header.extend(self.state_columns.iter().cloned());
        header.extend(self.action_columns.iter().cloned());
        header.push("reward".into());
        out.write_record(&header).map_err(err)?;
        for r in &self.rows {
            let mut rec = vec![r.step.to_string(), r.ts.to_string()];
            rec.extend(r.state.iter().map(|&v| cell(v)));
            rec.extend(r.action.iter().map(|&v| cell(v)));
            rec.push(cell(r.reward));
            out.write_record(&rec).map_err(err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a log back. Action columns are those ending in `.set`.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, DsError> {
        let err = |e: csv::Error| DsError::Log(e.to_string());
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers().map_err(err)?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[0] != "step" || header[1] != "ts" || header.last().unwrap() != "reward" {
            return Err(DsError::Log("header must be step,ts,...,reward".into()));
        }
        let middle = &header[2..header.len() - 1];
        let n_state = middle.iter().take_while(|c| !c.ends_with(".set")).count();
        let mut log = StepLog::new(middle[..n_state].to_vec(), middle[n_state..].to_vec());
        let num = |s: &str, line: usize| -> Result<Option<f64>, DsError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| DsError::Log(format!("line {line}: bad number {s:?}")))
            }
        };
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(err)?;
            let line = i + 2;
            let f: Vec<&str> = rec.iter().collect();
            if f.len() != header.len() {
                return Err(DsError::Log(format!("line {line}: expected {} fields", header.len())));
            }
            let parse_int = |s: &str| s.parse::<i64>().map_err(|_| DsError::Log(format!("line {line}: bad integer {s:?}")));
            let mut state = Vec::with_capacity(n_state);
            for s in &f[2..2 + n_state] {
                state.push(num(s, line)?);
            }
            let mut action = Vec::new();
            for s in &f[2 + n_state..f.len() - 1] {
                action.push(num(s, line)?);
            }
            log.rows.push(StepRecord {
                step: parse_int(f[0])? as u64,
                ts: parse_int(f[1])?,
                state,
                action,
                reward: num(f[f.len() - 1], line)?,
            });
        }
        Ok(log)
    }
}

/// Result of one decision-system run. A run that stops on an error keeps
/// everything logged up to that point.
#[derive(Debug, Default)]
pub struct DsOutcome {
    pub log: StepLog,
    /// Wall-clock milliseconds spent deciding and applying, per step.
    pub decision_ms: Vec<f64>,
    pub failure: Option<DsError>,
}

pub(crate) struct Stopwatch(Instant);

impl Stopwatch {
    pub(crate) fn start() -> Self {
        Self(Instant::now())
    }

    pub(crate) fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1000.0
    }
}

pub(crate) fn aborted(step: u64, e: DsError) -> DsError {
    DsError::Aborted {
        step,
        source: Box::new(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_log_roundtrip() {
        let mut log = StepLog::new(vec!["p.min".into(), "C".into()], vec!["p.set".into()]);
        log.push(StepRecord {
            step: 0,
            ts: 60_000,
            state: vec![Some(0.0), None],
            action: vec![None],
            reward: None,
        });
        log.push(StepRecord {
            step: 1,
            ts: 120_000,
            state: vec![Some(0.5), Some(72.36)],
            action: vec![Some(7.0)],
            reward: Some(-2.0),
        });
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,ts,p.min,C,p.set,reward\n0,60000,0,,,\n"), "{text}");
        assert_eq!(StepLog::read_csv(&buf[..]).unwrap(), log);
    }

    #[test]
    fn config_defaults() {
        let c: ControlLoopConfig = serde_json::from_str(
            r#"{"slo_api":"127.0.0.1:7812","control_api":"127.0.0.1:7812","emma_api":"127.0.0.1:7813","max_steps":10}"#,
        )
        .unwrap();
        assert_eq!(c.tau_s, 60.0);
        assert_eq!(c.power_slo, "Power");
        assert!(c.validate().is_ok());
        let bad = ControlLoopConfig { tau_s: 0.0, ..c };
        assert!(bad.validate().is_err());
    }
}
