//! Bus-to-store bridge driven entirely by a [`HookConfig`].

pub mod config;

use crate::bus::{BusConnector, Envelope};
use crate::clock::Settle;
use crate::store::{StoreConnector, TelemetryPoint};
use async_trait::async_trait;
use parking_lot::Mutex;
use serde_json::Value;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;
use tokio::sync::{watch, Notify};
use tokio::task::JoinHandle;
use tracing::{error, warn};

pub use config::{
    load_hook_config, FieldMapping, HookConfig, HookConfigError, Interpreter, TagMapping,
    TagSource, TimestampSource,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpretError {
    #[error("payload path {0} is missing")]
    Missing(String),
    #[error("payload path {path} holds non-numeric value {value}")]
    NonNumeric { path: String, value: String },
}

fn coerce(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64().filter(|x| x.is_finite()),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

/// Maps one envelope to a point. `Ok(None)` is a skip.
pub fn interpret(
    config: &HookConfig,
    envelope: &Envelope,
) -> Result<Option<TelemetryPoint>, InterpretError> {
    let payload = &envelope.payload;
    let numeric_at = |path: &str| -> Result<Option<f64>, InterpretError> {
        match payload.pointer(path) {
            None if config.drop_unmapped => Ok(None),
            None => Err(InterpretError::Missing(path.to_string())),
            Some(v) => match coerce(v) {
                Some(x) => Ok(Some(x)),
                None if config.drop_unmapped => Ok(None),
                None => Err(InterpretError::NonNumeric {
                    path: path.to_string(),
                    value: v.to_string(),
                }),
            },
        }
    };

    let ts = match &config.timestamp {
        TimestampSource::Envelope => envelope.ts,
        TimestampSource::PayloadPath(p) => match numeric_at(p)? {
            Some(t) => t as i64,
            None => return Ok(None),
        },
    };
    let mut point = TelemetryPoint::new(config.measurement.clone(), ts);
    for m in &config.fields {
        match numeric_at(&m.path)? {
            Some(v) => {
                point.fields.insert(m.field.clone(), v);
            }
            None => return Ok(None),
        }
    }
    for t in &config.tags {
        let value = match &t.source {
            TagSource::Constant { value } => Some(value.clone()),
            TagSource::TopicSegment { segment } => {
                envelope.topic.split('/').nth(*segment).map(str::to_string)
            }
            TagSource::PayloadPath { path } => match payload.pointer(path) {
                Some(Value::String(s)) => Some(s.clone()),
                Some(v @ (Value::Number(_) | Value::Bool(_))) => Some(v.to_string()),
                _ => None,
            },
        };
        if let Some(v) = value {
            point.tags.insert(t.tag.clone(), v);
        }
    }
    Ok(Some(point))
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct HookStats {
    pub received: u64,
    pub written: u64,
    pub skipped: u64,
    pub failed: u64,
}

#[derive(Default)]
struct Shared {
    delivered: Mutex<Option<Arc<AtomicU64>>>,
    processed_current: AtomicU64,
    received: AtomicU64,
    written: AtomicU64,
    skipped: AtomicU64,
    failed: AtomicU64,
    done: AtomicBool,
    progress: Notify,
}

/// Running hook. Stop it with [`HookHandle::stop`].
pub struct HookHandle {
    shared: Arc<Shared>,
    stop: watch::Sender<bool>,
    task: Mutex<Option<JoinHandle<()>>>,
}

impl HookHandle {
    pub fn stats(&self) -> HookStats {
        let s = &self.shared;
        HookStats {
            received: s.received.load(Ordering::Acquire),
            written: s.written.load(Ordering::Acquire),
            skipped: s.skipped.load(Ordering::Acquire),
            failed: s.failed.load(Ordering::Acquire),
        }
    }

    pub fn is_running(&self) -> bool {
        !self.shared.done.load(Ordering::Acquire)
    }

    pub async fn stop(&self) {
        let _ = self.stop.send(true);
        let task = self.task.lock().take();
        if let Some(t) = task {
            let _ = t.await;
        }
    }

    /// Waits until every envelope delivered so far has been processed.
    pub async fn wait_idle(&self) {
        let s = &self.shared;
        loop {
            let notified = s.progress.notified();
            let delivered = s
                .delivered
                .lock()
                .as_ref()
                .map_or(0, |d| d.load(Ordering::Acquire));
            if s.done.load(Ordering::Acquire)
                || s.processed_current.load(Ordering::Acquire) >= delivered
            {
                return;
            }
            let _ = tokio::time::timeout(Duration::from_millis(20), notified).await;
        }
    }
}

#[async_trait]
impl Settle for HookHandle {
    async fn settle(&self) {
        self.wait_idle().await;
    }
}

const SUBSCRIBE_ATTEMPTS: u32 = 6;

pub fn run_hook(
    config: HookConfig,
    bus: Arc<dyn BusConnector>,
    store: Arc<dyn StoreConnector>,
) -> HookHandle {
    let shared = Arc::new(Shared::default());
    let (stop, mut stop_rx) = watch::channel(false);
    let s = shared.clone();
    let task = tokio::spawn(async move {
        'outer: loop {
            let mut backoff = Duration::from_millis(50);
            let mut sub = None;
            for attempt in 1..=SUBSCRIBE_ATTEMPTS {
                match bus.subscribe(&config.topic).await {
                    Ok(x) => {
                        sub = Some(x);
                        break;
                    }
                    Err(e) => {
                        warn!("hook {}: subscribe attempt {attempt} failed: {e}", config.measurement);
                        tokio::select! {
                            _ = tokio::time::sleep(backoff) => {}
                            _ = stop_rx.changed() => break 'outer,
                        }
                        backoff *= 2;
                    }
                }
            }
            let Some(mut sub) = sub else {
                error!("hook {}: giving up on bus", config.measurement);
                break;
            };
            s.processed_current.store(0, Ordering::Release);
            *s.delivered.lock() = Some(sub.delivered_counter());
            loop {
                tokio::select! {
                    biased;
                    _ = stop_rx.changed() => break 'outer,
                    env = sub.recv() => {
                        let Some(env) = env else {
                            warn!("hook {}: bus stream closed, resubscribing", config.measurement);
                            *s.delivered.lock() = None;
                            continue 'outer;
                        };
                        s.received.fetch_add(1, Ordering::AcqRel);
                        match interpret(&config, &env) {
                            Ok(Some(point)) => match store.write(point).await {
                                Ok(()) => { s.written.fetch_add(1, Ordering::AcqRel); }
                                Err(e) => {
                                    s.failed.fetch_add(1, Ordering::AcqRel);
                                    warn!("hook {}: store write failed: {e}", config.measurement);
                                }
                            },
                            Ok(None) => { s.skipped.fetch_add(1, Ordering::AcqRel); }
                            Err(e) => {
                                s.failed.fetch_add(1, Ordering::AcqRel);
                                warn!("hook {}: dropped envelope on {}: {e}", config.measurement, env.topic);
                            }
                        }
                        s.processed_current.fetch_add(1, Ordering::AcqRel);
                        s.progress.notify_waiters();
                    }
                }
            }
        }
        s.done.store(true, Ordering::Release);
        s.progress.notify_waiters();
    });
    HookHandle {
        shared,
        stop,
        task: Mutex::new(Some(task)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn cfg(fields: &[(&str, &str)], drop_unmapped: bool) -> HookConfig {
        HookConfig {
            bus: "inproc".into(),
            topic: "x/#".parse().unwrap(),
            interpreter: Interpreter::Json,
            measurement: "m".into(),
            fields: fields
                .iter()
                .map(|(p, f)| FieldMapping {
                    path: p.to_string(),
                    field: f.to_string(),
                })
                .collect(),
            tags: vec![],
            timestamp: TimestampSource::Envelope,
            drop_unmapped,
        }
    }

    #[test]
    fn maps_and_discards_unmapped_keys() {
        let mut c = cfg(&[("/fps", "value")], false);
        c.measurement = "fps".into();
        let e = Envelope::new("x/c1", json!({"fps": 25.3, "codec": "h264"}), 7);
        let p = interpret(&c, &e).unwrap().unwrap();
        assert_eq!(p.measurement, "fps");
        assert_eq!(p.fields.len(), 1);
        assert_eq!(p.fields["value"], 25.3);
        assert_eq!(p.ts, 7);
    }

    fn hand_extract(payload: &Value) -> Option<f64> {
        match payload {
            Value::Object(m) => match m.get("ENERGY") {
                Some(Value::Object(e)) => e.get("ApparentPower").and_then(Value::as_f64),
                _ => None,
            },
            _ => None,
        }
    }

    #[test]
    fn nested_path_matches_hand_extractor() {
        let c = cfg(&[("/ENERGY/ApparentPower", "apparent_w")], true);
        for payload in [
            json!({"ENERGY": {"ApparentPower": 17.4}}),
            json!({"ENERGY": {"ApparentPower": 13, "Voltage": 230}}),
            json!({"ENERGY": {}}),
            json!({"OTHER": {"ApparentPower": 1.0}}),
            json!([1, 2]),
        ] {
            let got = interpret(&c, &Envelope::new("x/p", payload.clone(), 0))
                .unwrap()
                .map(|p| p.fields["apparent_w"]);
            assert_eq!(got, hand_extract(&payload), "{payload}");
        }
    }

    #[test]
    fn non_numeric_skip_or_error() {
        let e = Envelope::new("x/a", json!({"fps": "fast"}), 0);
        assert_eq!(interpret(&cfg(&[("/fps", "v")], true), &e), Ok(None));
        assert!(matches!(
            interpret(&cfg(&[("/fps", "v")], false), &e),
            Err(InterpretError::NonNumeric { .. })
        ));
        let missing = Envelope::new("x/a", json!({}), 0);
        assert!(matches!(
            interpret(&cfg(&[("/fps", "v")], false), &missing),
            Err(InterpretError::Missing(_))
        ));
    }

    #[test]
    fn coercion_and_tags() {
        let mut c = cfg(&[("/on", "on"), ("/n", "n")], false);
        c.tags = vec![
            TagMapping {
                source: TagSource::TopicSegment { segment: 1 },
                tag: "client".into(),
            },
            TagMapping {
                source: TagSource::PayloadPath { path: "/host".into() },
                tag: "host".into(),
            },
            TagMapping {
                source: TagSource::Constant { value: "lab".into() },
                tag: "site".into(),
            },
            TagMapping {
                source: TagSource::TopicSegment { segment: 9 },
                tag: "absent".into(),
            },
        ];
        let e = Envelope::new("x/c2", json!({"on": true, "n": 3, "host": "anemone"}), 0);
        let p = interpret(&c, &e).unwrap().unwrap();
        assert_eq!(p.fields["on"], 1.0);
        assert_eq!(p.fields["n"], 3.0);
        assert_eq!(p.tags["client"], "c2");
        assert_eq!(p.tags["host"], "anemone");
        assert_eq!(p.tags["site"], "lab");
        assert!(!p.tags.contains_key("absent"));
    }

    #[test]
    fn payload_timestamp() {
        let mut c = cfg(&[("/v", "v")], true);
        c.timestamp = TimestampSource::PayloadPath("/ts".into());
        let p = interpret(&c, &Envelope::new("x", json!({"v": 1, "ts": 1234}), 9))
            .unwrap()
            .unwrap();
        assert_eq!(p.ts, 1234);
        assert_eq!(interpret(&c, &Envelope::new("x", json!({"v": 1}), 9)), Ok(None));
    }

    fn arb_json() -> impl proptest::strategy::Strategy<Value = Value> {
        use proptest::prelude::*;
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(|i| json!(i)),
            (-1e6f64..1e6).prop_map(|f| json!(f)),
            "[a-z]{0,4}".prop_map(Value::String),
        ];
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::Array),
                prop::collection::btree_map("[a-z/~]{1,3}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    proptest::proptest! {
        #[test]
        fn interpret_is_total_and_deterministic(payload in arb_json(), drop in proptest::bool::ANY) {
            let c = cfg(&[("/a", "a"), ("/a/b", "ab")], drop);
            let e = Envelope::new("x/y", payload, 1);
            let first = interpret(&c, &e);
            proptest::prop_assert_eq!(first, interpret(&c, &e));
        }
    }
}
