//! Continuous reporters: periodically serialize the service's readings and
//! publish them on the bus.

use super::service::MockService;
use crate::bus::{Broker, BusConnector, Envelope};
use crate::clock::{Clock, VirtualClock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::sync::Arc;
use std::time::Duration;
use tokio::task::JoinHandle;
use tracing::warn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReporterKind {
    /// `{"fps": <value>}`
    Fps,
    /// Tasmota-shaped `{"ENERGY":{"ApparentPower": <value>}}`
    Power,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReporterSpec {
    pub kind: ReporterKind,
    pub topic: String,
    pub period_s: f64,
}

pub fn sample_payload(kind: ReporterKind, service: &MockService, now_ms: i64) -> Value {
    match kind {
        ReporterKind::Fps => json!({ "fps": service.sample_fps(now_ms) }),
        ReporterKind::Power => json!({ "ENERGY": { "ApparentPower": service.sample_power() } }),
    }
}

/// Registers the reporter on a virtual clock; it publishes synchronously
/// into the in-process broker each time its tick fires.
pub fn attach_virtual(
    clock: &VirtualClock,
    service: MockService,
    broker: Broker,
    spec: &ReporterSpec,
) -> u64 {
    let kind = spec.kind;
    let topic = spec.topic.clone();
    clock.add_ticker(spec.period_s, move |t| {
        let env = Envelope::new(topic.clone(), sample_payload(kind, &service, t), t);
        if let Err(e) = broker.publish(env) {
            warn!("reporter on {topic}: {e}");
        }
    })
}

pub struct ReporterHandle {
    task: JoinHandle<()>,
}

impl ReporterHandle {
    pub async fn stop(self) {
        self.task.abort();
        let _ = self.task.await;
    }
}

const MAX_BACKOFF: Duration = Duration::from_secs(5);

/// Spawns a reporter that sleeps on `clock` between samples.
pub fn run_reporter(
    service: MockService,
    bus: Arc<dyn BusConnector>,
    clock: Arc<dyn Clock>,
    spec: ReporterSpec,
) -> ReporterHandle {
    let task = tokio::spawn(async move {
        let mut backoff = Duration::from_millis(50);
        loop {
            clock.sleep_s(spec.period_s).await;
            let now = clock.now_ms();
            let env = Envelope::new(spec.topic.clone(), sample_payload(spec.kind, &service, now), now);
            match bus.publish(env).await {
                Ok(()) => backoff = Duration::from_millis(50),
                Err(e) => {
                    warn!("reporter on {}: {e}; retrying in {backoff:?}", spec.topic);
                    tokio::time::sleep(backoff).await;
                    backoff = (backoff * 2).min(MAX_BACKOFF);
                }
            }
        }
    });
    ReporterHandle { task }
}

pub fn run_fps_reporter(
    service: MockService,
    bus: Arc<dyn BusConnector>,
    clock: Arc<dyn Clock>,
    topic: &str,
    period_s: f64,
) -> ReporterHandle {
    let spec = ReporterSpec {
        kind: ReporterKind::Fps,
        topic: topic.to_string(),
        period_s,
    };
    run_reporter(service, bus, clock, spec)
}

pub fn run_power_reporter(
    service: MockService,
    bus: Arc<dyn BusConnector>,
    clock: Arc<dyn Clock>,
    topic: &str,
    period_s: f64,
) -> ReporterHandle {
    let spec = ReporterSpec {
        kind: ReporterKind::Power,
        topic: topic.to_string(),
        period_s,
    };
    run_reporter(service, bus, clock, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::TopicPattern;
    use crate::workload::WorkloadModel;

    fn setup() -> (Arc<VirtualClock>, MockService, Broker) {
        let clock = Arc::new(VirtualClock::new(1_000_000));
        let svc = MockService::new(WorkloadModel::default(), clock.clone()).unwrap();
        (clock, svc, Broker::new())
    }

    fn drain(sub: &mut crate::bus::Subscription) -> Vec<Envelope> {
        std::iter::from_fn(|| sub.try_recv()).collect()
    }

    #[tokio::test]
    async fn fps_cadence_and_determinism() {
        let (clock, svc, broker) = setup();
        svc.set_threads(6.0).unwrap();
        let mut sub = broker.subscribe(&TopicPattern::parse("fps/#").unwrap()).unwrap();
        let spec = ReporterSpec {
            kind: ReporterKind::Fps,
            topic: "fps/c1".into(),
            period_s: 1.0,
        };
        attach_virtual(&clock, svc, broker, &spec);
        clock.sleep_s(10.0).await;
        let got = drain(&mut sub);
        assert_eq!(got.len(), 10);
        let first = &got[0].payload;
        assert!(got.iter().all(|e| &e.payload == first));
        assert_eq!(got[9].ts, 1_010_000);
    }

    #[tokio::test]
    async fn power_idle_and_shape() {
        let (clock, svc, broker) = setup();
        let mut sub = broker.subscribe(&TopicPattern::parse("power/+").unwrap()).unwrap();
        let spec = ReporterSpec {
            kind: ReporterKind::Power,
            topic: "power/plug1".into(),
            period_s: 10.0,
        };
        attach_virtual(&clock, svc, broker, &spec);
        clock.sleep_s(60.0).await;
        let got = drain(&mut sub);
        assert_eq!(got.len(), 6);
        for e in got {
            assert_eq!(e.payload, json!({"ENERGY": {"ApparentPower": 13.0}}));
        }
    }

    #[tokio::test]
    async fn task_reporter_publishes() {
        let clock: Arc<dyn Clock> = Arc::new(crate::clock::AcceleratedClock::new(0, 1000.0));
        let svc = MockService::new(WorkloadModel::default(), clock.clone()).unwrap();
        let broker = Broker::new();
        let mut sub = broker.subscribe(&TopicPattern::parse("fps/c1").unwrap()).unwrap();
        let h = run_fps_reporter(svc, Arc::new(broker.clone()), clock, "fps/c1", 1.0);
        let e = tokio::time::timeout(Duration::from_secs(2), sub.recv()).await.unwrap().unwrap();
        assert_eq!(e.payload, json!({"fps": 0.0}));
        h.stop().await;
    }
}
