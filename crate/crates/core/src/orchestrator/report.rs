//! Run statistics recomputed from the raw step log and telemetry dump.

use crate::decision::{carbon_footprint, StepLog};
use crate::service_api::SloSpec;
use crate::store::{MemoryStore, TelemetryPoint};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("nothing to report: {0}")]
    Empty(String),
    #[error("{0}")]
    Invalid(String),
}

/// Mean, population standard deviation and count.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Self {
            n,
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

impl LatencySummary {
    pub fn of(values: &[f64]) -> Self {
        let s = Summary::of(values);
        Self {
            n: s.n,
            mean: s.mean,
            std: s.std,
            p50: percentile(values, 50.0),
            p99: percentile(values, 99.0),
            max: values.iter().cloned().fold(f64::NAN, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub samples: usize,
    pub mean: f64,
    pub std: f64,
    pub fulfilment: f64,
}

/// Statistics of one value series against an SLO range.
pub fn series_stats(values: &[f64], s_min: f64, s_max: f64) -> (Summary, f64) {
    let s = Summary::of(values);
    let inside = values.iter().filter(|&&v| s_min <= v && v <= s_max).count();
    let f = if values.is_empty() { 0.0 } else { inside as f64 / values.len() as f64 };
    (s, f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: usize,
    pub warmup_steps: usize,
    pub metrics: Vec<MetricRow>,
    pub carbon_mean: f64,
    pub carbon_std: f64,
    /// `(ts, mg CO2eq/min)` per sampled step.
    pub carbon_series: Vec<(i64, f64)>,
    /// Actions taken per step after warm-up, for systems with one parameter.
    pub action_histogram: Vec<(f64, usize)>,
    pub mean_reward: Option<f64>,
    pub decision_latency_ms: Option<LatencySummary>,
    pub reconfiguration_ms: Vec<f64>,
    pub failure: Option<String>,
}

impl RunReport {
    pub fn metric(&self, id: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.id == id)
    }
}

/// Inputs for [`compute_report`] besides the logs.
pub struct ReportParams<'a> {
    pub slos: &'a [SloSpec],
    pub tau_s: f64,
    pub warmup_steps: usize,
    /// Internal id of the SLO holding the power draw, if carbon is wanted.
    pub power_slo: Option<&'a str>,
    pub intensity: &'a dyn Fn(i64) -> Option<f64>,
}

/// Each SLO is evaluated over the telemetry at the end of every post-warm-up
/// step, that is at the step's decision time plus one time-step.
pub fn compute_report(
    log: &StepLog,
    telemetry: &[TelemetryPoint],
    p: &ReportParams<'_>,
) -> Result<RunReport, ReportError> {
    if log.rows.is_empty() {
        return Err(ReportError::Empty("step log has no rows".into()));
    }
    if telemetry.is_empty() {
        return Err(ReportError::Empty("telemetry dump is empty".into()));
    }
    let store = MemoryStore::new();
    for pt in telemetry {
        store
            .write(pt.clone())
            .map_err(|e| ReportError::Invalid(e.to_string()))?;
    }
    let tau_ms = (p.tau_s * 1000.0).round() as i64;
    let rows = &log.rows[p.warmup_steps.min(log.rows.len())..];
    let times: Vec<i64> = rows.iter().map(|r| r.ts + tau_ms).collect();

    let mut metrics = Vec::with_capacity(p.slos.len());
    for slo in p.slos {
        let values: Vec<f64> = times.iter().filter_map(|&t| store.query(&slo.query, t)).collect();
        let (s, f) = series_stats(&values, slo.s_min, slo.s_max);
        metrics.push(MetricRow {
            id: slo.id.clone(),
            unit: slo.unit.clone(),
            min: slo.s_min,
            max: slo.s_max,
            samples: s.n,
            mean: s.mean,
            std: s.std,
            fulfilment: f,
        });
    }

    let mut carbon_series = Vec::new();
    if let Some(id) = p.power_slo {
        let slo = p
            .slos
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| ReportError::Invalid(format!("power SLO {id:?} is not configured")))?;
        for &t in &times {
            if let (Some(w), Some(i)) = (store.query(&slo.query, t), (p.intensity)(t)) {
                let c = carbon_footprint(w, i).map_err(|e| ReportError::Invalid(e.to_string()))?;
                carbon_series.push((t, c));
            }
        }
    }
    let carbon = Summary::of(&carbon_series.iter().map(|c| c.1).collect::<Vec<_>>());

    let mut action_histogram: Vec<(f64, usize)> = Vec::new();
    if log.action_columns.len() == 1 {
        for r in rows {
            if let Some(a) = r.action[0] {
                match action_histogram.iter_mut().find(|(v, _)| *v == a) {
                    Some((_, n)) => *n += 1,
                    None => action_histogram.push((a, 1)),
                }
            }
        }
        action_histogram.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let rewards: Vec<f64> = rows.iter().filter_map(|r| r.reward).collect();

    Ok(RunReport {
        steps: log.rows.len(),
        warmup_steps: p.warmup_steps,
        metrics,
        carbon_mean: carbon.mean,
        carbon_std: carbon.std,
        carbon_series,
        action_histogram,
        mean_reward: (!rewards.is_empty()).then(|| Summary::of(&rewards).mean),
        decision_latency_ms: None,
        reconfiguration_ms: Vec::new(),
        failure: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decision::StepRecord;
    use crate::store::QuerySpec;

    #[test]
    fn series_examples() {
        let (s, f) = series_stats(&[25.0; 10], 24.0, 30.0);
        assert_eq!((s.mean, s.std, f), (25.0, 0.0, 1.0));
        let (_, f) = series_stats(&[23.0, 25.0], 24.0, 30.0);
        assert_eq!(f, 0.5);
    }

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 50.0), 50.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
    }

    #[test]
    fn report_samples_one_step_after_decision() {
        let slo = SloSpec {
            id: "FPS".into(),
            description: String::new(),
            query: QuerySpec::parse("mean(fps.value,60s)").unwrap(),
            unit: String::new(),
            s_min: 24.0,
            s_max: 30.0,
        };
        let power = SloSpec {
            id: "Power".into(),
            query: QuerySpec::parse("mean(power.W,60s)").unwrap(),
            s_min: 0.0,
            s_max: 100.0,
            ..slo.clone()
        };
        let mut log = StepLog::new(vec![], vec!["p.set".into()]);
        let mut tel = Vec::new();
        for k in 0..4i64 {
            log.push(StepRecord {
                step: k as u64,
                ts: k * 60_000,
                state: vec![],
                action: vec![Some(k as f64)],
                reward: None,
            });
            let v = if k % 2 == 0 { 25.0 } else { 31.0 };
            tel.push(TelemetryPoint::new("fps", k * 60_000 + 30_000).field("value", v));
            tel.push(TelemetryPoint::new("power", k * 60_000 + 30_000).field("W", 60.0));
        }
        let intensity = |_t: i64| Some(60.0);
        let slos = [slo, power];
        let p = ReportParams {
            slos: &slos,
            tau_s: 60.0,
            warmup_steps: 1,
            power_slo: Some("Power"),
            intensity: &intensity,
        };
        let r = compute_report(&log, &tel, &p).unwrap();
        assert_eq!(r.steps, 4);
        let fps = r.metric("FPS").unwrap();
        assert_eq!(fps.samples, 3);
        assert!((fps.fulfilment - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.carbon_series.len(), 3);
        assert_eq!(r.carbon_mean, 60.0);
        assert_eq!(r.action_histogram, vec![(1.0, 1), (2.0, 1), (3.0, 1)]);

        let empty = StepLog::default();
        assert!(matches!(compute_report(&empty, &tel, &p), Err(ReportError::Empty(_))));
    }
}
