//! Simulation time.
//!
//! Every component reads time through [`Clock`]. [`AcceleratedClock`] maps
//! wall time onto simulated time with a fixed multiplier; [`VirtualClock`]
//! only moves when a control loop sleeps, firing periodic tickers in time
//! order and then waiting for registered consumers to drain.

use async_trait::async_trait;
use parking_lot::Mutex;
use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

#[async_trait]
pub trait Clock: Send + Sync {
    /// Current simulated time, milliseconds since the Unix epoch.
    fn now_ms(&self) -> i64;

    /// Lets `secs` of simulated time pass.
    async fn sleep_s(&self, secs: f64);
}

pub fn wall_ms() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as i64)
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct AcceleratedClock {
    start: Instant,
    origin_ms: i64,
    multiplier: f64,
}

impl AcceleratedClock {
    pub fn new(origin_ms: i64, multiplier: f64) -> Self {
        assert!(multiplier > 0.0, "clock multiplier must be positive");
        Self {
            start: Instant::now(),
            origin_ms,
            multiplier,
        }
    }

    /// Wall-clock time.
    pub fn realtime() -> Self {
        Self::new(wall_ms(), 1.0)
    }

    pub fn multiplier(&self) -> f64 {
        self.multiplier
    }
}

#[async_trait]
impl Clock for AcceleratedClock {
    fn now_ms(&self) -> i64 {
        let wall = self.start.elapsed().as_secs_f64() * 1000.0;
        self.origin_ms + (wall * self.multiplier) as i64
    }

    async fn sleep_s(&self, secs: f64) {
        if secs > 0.0 {
            tokio::time::sleep(Duration::from_secs_f64(secs / self.multiplier)).await;
        }
    }
}

/// Something that must catch up before simulated time moves on.
#[async_trait]
pub trait Settle: Send + Sync {
    async fn settle(&self);
}

type TickFn = Box<dyn FnMut(i64) + Send>;

struct Ticker {
    id: u64,
    period_ms: i64,
    next_ms: i64,
    f: TickFn,
}

/// Discrete-event clock. Tickers due at the same instant fire in
/// registration order.
pub struct VirtualClock {
    now: AtomicI64,
    next_id: AtomicU64,
    tickers: Mutex<Vec<Ticker>>,
    settlers: Mutex<Vec<Arc<dyn Settle>>>,
    advancing: tokio::sync::Mutex<()>,
}

impl VirtualClock {
    pub fn new(origin_ms: i64) -> Self {
        Self {
            now: AtomicI64::new(origin_ms),
            next_id: AtomicU64::new(0),
            tickers: Mutex::new(Vec::new()),
            settlers: Mutex::new(Vec::new()),
            advancing: tokio::sync::Mutex::new(()),
        }
    }

    /// Calls `f(t)` at `now + period, now + 2·period, ...`.
    pub fn add_ticker(&self, period_s: f64, f: impl FnMut(i64) + Send + 'static) -> u64 {
        let period_ms = ((period_s * 1000.0).round() as i64).max(1);
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.tickers.lock().push(Ticker {
            id,
            period_ms,
            next_ms: self.now_ms() + period_ms,
            f: Box::new(f),
        });
        id
    }

    pub fn remove_ticker(&self, id: u64) {
        self.tickers.lock().retain(|t| t.id != id);
    }

    pub fn add_settler(&self, s: Arc<dyn Settle>) {
        self.settlers.lock().push(s);
    }

    pub fn clear_settlers(&self) {
        self.settlers.lock().clear();
    }

    pub async fn advance_ms(&self, delta_ms: i64) {
        let _guard = self.advancing.lock().await;
        let target = self.now_ms() + delta_ms.max(0);
        {
            let mut tickers = self.tickers.lock();
            loop {
                let due = tickers
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.next_ms <= target)
                    .min_by_key(|(i, t)| (t.next_ms, *i))
                    .map(|(i, _)| i);
                let Some(i) = due else { break };
                let t = &mut tickers[i];
                self.now.store(t.next_ms, Ordering::Release);
                (t.f)(t.next_ms);
                t.next_ms += t.period_ms;
            }
        }
        self.now.store(target, Ordering::Release);
        let settlers: Vec<_> = self.settlers.lock().clone();
        for s in settlers {
            s.settle().await;
        }
    }
}

#[async_trait]
impl Clock for VirtualClock {
    fn now_ms(&self) -> i64 {
        self.now.load(Ordering::Acquire)
    }

    async fn sleep_s(&self, secs: f64) {
        self.advance_ms((secs * 1000.0).round() as i64).await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn tickers_fire_in_time_order() {
        let clock = VirtualClock::new(0);
        let log = Arc::new(Mutex::new(Vec::new()));
        let (a, b) = (log.clone(), log.clone());
        clock.add_ticker(1.0, move |t| a.lock().push(("fast", t)));
        clock.add_ticker(2.0, move |t| b.lock().push(("slow", t)));
        clock.sleep_s(4.0).await;
        assert_eq!(clock.now_ms(), 4000);
        let got = log.lock().clone();
        assert_eq!(
            got,
            vec![
                ("fast", 1000),
                ("fast", 2000),
                ("slow", 2000),
                ("fast", 3000),
                ("fast", 4000),
                ("slow", 4000)
            ]
        );
    }

    #[tokio::test]
    async fn ten_sim_seconds_ten_ticks() {
        let clock = VirtualClock::new(500);
        let n = Arc::new(AtomicU64::new(0));
        let c = n.clone();
        let id = clock.add_ticker(1.0, move |_| {
            c.fetch_add(1, Ordering::Relaxed);
        });
        clock.sleep_s(10.0).await;
        assert_eq!(n.load(Ordering::Relaxed), 10);
        clock.remove_ticker(id);
        clock.sleep_s(10.0).await;
        assert_eq!(n.load(Ordering::Relaxed), 10);
    }

    #[tokio::test]
    async fn accelerated_clock_contract() {
        let clock = AcceleratedClock::new(0, 60.0);
        let t0 = Instant::now();
        clock.sleep_s(6.0).await;
        let wall = t0.elapsed().as_secs_f64();
        assert!((0.09..0.5).contains(&wall), "wall {wall}");
        // 60 sim-seconds per wall second
        let sim = clock.now_ms() as f64 / 1000.0;
        assert!((sim / clock.start.elapsed().as_secs_f64() - 60.0).abs() < 1.0);
    }
}
