//! Random decision system: a uniformly drawn value every time-step.

use super::{aborted, ApiClient, ControlLoopConfig, DsError, DsOutcome, StepLog, StepRecord, Stopwatch};
use crate::clock::Clock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdsConfig {
    #[serde(flatten)]
    pub control: ControlLoopConfig,
    pub param_id: String,
}

/// Uniform integer in `[min, max]`.
pub fn rds_draw<R: Rng + ?Sized>(min: f64, max: f64, rng: &mut R) -> f64 {
    let lo = min.ceil() as i64;
    let hi = max.floor() as i64;
    if hi <= lo {
        return lo as f64;
    }
    rng.random_range(lo..=hi) as f64
}

pub async fn run_rds(cfg: &RdsConfig, client: &ApiClient, clock: &dyn Clock) -> Result<DsOutcome, DsError> {
    cfg.control.validate()?;
    let p = &cfg.param_id;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.control.seed);
    let mut out = DsOutcome {
        log: StepLog::new(vec![format!("{p}.min"), format!("{p}.max")], vec![format!("{p}.set")]),
        ..Default::default()
    };
    for step in 0..cfg.control.max_steps {
        let sw = Stopwatch::start();
        let ts = clock.now_ms();
        let res = async {
            let range = client.param_range(p).await?;
            let n = rds_draw(range.min, range.max, &mut rng);
            client.set_param(p, n).await?;
            Ok::<_, DsError>((range, n))
        }
        .await;
        match res {
            Ok((range, n)) => {
                out.decision_ms.push(sw.ms());
                out.log.push(StepRecord {
                    step,
                    ts,
                    state: vec![Some(range.min), Some(range.max)],
                    action: vec![Some(n)],
                    reward: None,
                });
            }
            Err(e) => {
                out.failure = Some(aborted(step, e));
                break;
            }
        }
        clock.sleep_s(cfg.control.tau_s).await;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_replay() {
        let a: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            (0..50).map(|_| rds_draw(0.0, 16.0, &mut r)).collect()
        };
        let b: Vec<f64> = {
            let mut r = ChaCha8Rng::seed_from_u64(7);
            (0..50).map(|_| rds_draw(0.0, 16.0, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_frequencies() {
        let mut r = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0u32; 17];
        let n = 17_000;
        for _ in 0..n {
            let v = rds_draw(0.0, 16.0, &mut r);
            assert!((0.0..=16.0).contains(&v) && v.fract() == 0.0);
            counts[v as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 1.0 / 17.0).abs() <= 0.01, "{f}");
        }
    }

    #[test]
    fn degenerate_range() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert!((0..20).all(|_| rds_draw(5.0, 5.0, &mut r) == 5.0));
    }
}
