use super::{BusConnector, BusError, Envelope, TopicPattern};
use async_trait::async_trait;
use parking_lot::RwLock;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use tokio::sync::mpsc;

struct SubEntry {
    id: u64,
    pattern: TopicPattern,
    tx: mpsc::UnboundedSender<Envelope>,
    delivered: Arc<AtomicU64>,
}

#[derive(Default)]
struct Inner {
    subs: RwLock<Vec<SubEntry>>,
    next_id: AtomicU64,
    stopped: AtomicBool,
}

/// In-process broker. Cloning yields another handle to the same broker.
#[derive(Clone, Default)]
pub struct Broker {
    inner: Arc<Inner>,
}

impl Broker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Delivers to every live matching subscriber before returning, so a
    /// single publisher's order is preserved per subscriber.
    pub fn publish(&self, envelope: Envelope) -> Result<(), BusError> {
        envelope.validate()?;
        if self.inner.stopped.load(Ordering::Acquire) {
            return Err(BusError::NotRunning);
        }
        let subs = self.inner.subs.read();
        for sub in subs.iter().filter(|s| s.pattern.matches(&envelope.topic)) {
            if sub.tx.send(envelope.clone()).is_ok() {
                sub.delivered.fetch_add(1, Ordering::AcqRel);
            }
        }
        Ok(())
    }

    pub fn subscribe(&self, pattern: &TopicPattern) -> Result<Subscription, BusError> {
        if self.inner.stopped.load(Ordering::Acquire) {
            return Err(BusError::NotRunning);
        }
        let (tx, rx) = mpsc::unbounded_channel();
        let id = self.inner.next_id.fetch_add(1, Ordering::Relaxed);
        let delivered = Arc::new(AtomicU64::new(0));
        self.inner.subs.write().push(SubEntry {
            id,
            pattern: pattern.clone(),
            tx,
            delivered: delivered.clone(),
        });
        let guard = Unsubscribe {
            broker: Arc::downgrade(&self.inner),
            id,
        };
        Ok(Subscription::new(rx, delivered, Box::new(guard)))
    }

    pub fn subscriber_count(&self) -> usize {
        self.inner.subs.read().len()
    }

    /// Stops accepting traffic and closes every open subscription stream.
    pub fn shutdown(&self) {
        self.inner.stopped.store(true, Ordering::Release);
        self.inner.subs.write().clear();
    }

    pub fn is_running(&self) -> bool {
        !self.inner.stopped.load(Ordering::Acquire)
    }
}

#[async_trait]
impl BusConnector for Broker {
    async fn publish(&self, envelope: Envelope) -> Result<(), BusError> {
        Broker::publish(self, envelope)
    }

    async fn subscribe(&self, pattern: &TopicPattern) -> Result<Subscription, BusError> {
        Broker::subscribe(self, pattern)
    }
}

struct Unsubscribe {
    broker: Weak<Inner>,
    id: u64,
}

impl Drop for Unsubscribe {
    fn drop(&mut self) {
        if let Some(inner) = self.broker.upgrade() {
            inner.subs.write().retain(|s| s.id != self.id);
        }
    }
}

/// Ordered stream of envelopes. Dropping it releases the subscription.
pub struct Subscription {
    rx: mpsc::UnboundedReceiver<Envelope>,
    delivered: Arc<AtomicU64>,
    consumed: u64,
    _guard: Box<dyn Send + Sync>,
}

impl Subscription {
    pub(crate) fn new(
        rx: mpsc::UnboundedReceiver<Envelope>,
        delivered: Arc<AtomicU64>,
        guard: Box<dyn Send + Sync>,
    ) -> Self {
        Self {
            rx,
            delivered,
            consumed: 0,
            _guard: guard,
        }
    }

    /// Next envelope, or `None` once the stream is closed.
    pub async fn recv(&mut self) -> Option<Envelope> {
        let e = self.rx.recv().await;
        if e.is_some() {
            self.consumed += 1;
        }
        e
    }

    pub fn try_recv(&mut self) -> Option<Envelope> {
        let e = self.rx.try_recv().ok();
        if e.is_some() {
            self.consumed += 1;
        }
        e
    }

    /// Shared counter of envelopes handed to this subscription so far.
    pub fn delivered_counter(&self) -> Arc<AtomicU64> {
        self.delivered.clone()
    }

    pub fn consumed(&self) -> u64 {
        self.consumed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn pat(s: &str) -> TopicPattern {
        TopicPattern::parse(s).unwrap()
    }

    #[tokio::test]
    async fn single_subscriber_receives_identical_envelope() {
        let b = Broker::new();
        let mut sub = b.subscribe(&pat("power/#")).unwrap();
        let e = Envelope::new("power/plug1", json!({"W": 17.2}), 1000);
        b.publish(e.clone()).unwrap();
        assert_eq!(sub.recv().await.unwrap(), e);
    }

    #[tokio::test]
    async fn non_matching_is_not_delivered() {
        let b = Broker::new();
        let mut sub = b.subscribe(&pat("power/#")).unwrap();
        b.publish(Envelope::new("fps/client1", json!({"fps": 1}), 1)).unwrap();
        assert!(sub.try_recv().is_none());
    }

    #[tokio::test]
    async fn hundred_in_order() {
        let b = Broker::new();
        let mut sub = b.subscribe(&pat("seq/x")).unwrap();
        for i in 0..100 {
            b.publish(Envelope::new("seq/x", json!({"seq": i}), i)).unwrap();
        }
        for i in 0..100 {
            let e = sub.recv().await.unwrap();
            assert_eq!(e.payload["seq"], json!(i));
        }
    }

    #[tokio::test]
    async fn late_subscriber_gets_nothing_retained() {
        let b = Broker::new();
        b.publish(Envelope::new("a/b", json!(1), 0)).unwrap();
        let mut sub = b.subscribe(&pat("a/#")).unwrap();
        assert!(sub.try_recv().is_none());
    }

    #[tokio::test]
    async fn drop_releases_subscription() {
        let b = Broker::new();
        let sub = b.subscribe(&pat("a/#")).unwrap();
        assert_eq!(b.subscriber_count(), 1);
        drop(sub);
        assert_eq!(b.subscriber_count(), 0);
    }

    #[tokio::test]
    async fn malformed_and_stopped() {
        let b = Broker::new();
        assert!(matches!(
            b.publish(Envelope::new("a//b", json!(1), 0)),
            Err(BusError::MalformedTopic { .. })
        ));
        let mut sub = b.subscribe(&pat("a")).unwrap();
        b.shutdown();
        assert!(sub.recv().await.is_none());
        assert!(matches!(
            b.publish(Envelope::new("a", json!(1), 0)),
            Err(BusError::NotRunning)
        ));
    }
}
