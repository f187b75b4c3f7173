//! Greedy decision system: nudge one parameter by a fixed step whenever its
//! SLO leaves the target range.

use super::{aborted, ApiClient, ControlLoopConfig, DsError, DsOutcome, StepLog, StepRecord, Stopwatch};
use crate::clock::Clock;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdsConfig {
    pub slo_id: String,
    pub param_id: String,
    pub delta: f64,
    /// +1 when raising the parameter raises the SLO value, -1 otherwise.
    pub lambda: i32,
    #[serde(default)]
    pub is_carbon: bool,
}

impl GdsConfig {
    pub fn validate(&self) -> Result<(), DsError> {
        if self.lambda != 1 && self.lambda != -1 {
            return Err(DsError::Invalid(format!("lambda must be 1 or -1, got {}", self.lambda)));
        }
        if !(self.delta > 0.0) {
            return Err(DsError::Invalid("delta must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdsRunConfig {
    #[serde(flatten)]
    pub control: ControlLoopConfig,
    #[serde(flatten)]
    pub gds: GdsConfig,
}

/// Inputs of one greedy step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdsInput {
    pub s: f64,
    pub s_min: f64,
    pub s_max: f64,
    pub p: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Multiplies `s` when the SLO is a carbon footprint.
    pub intensity: Option<f64>,
}

/// Next parameter value.
pub fn gds_decide(cfg: &GdsConfig, x: &GdsInput) -> f64 {
    let s = match (cfg.is_carbon, x.intensity) {
        (true, Some(i)) => x.s * i,
        _ => x.s,
    };
    let step = cfg.lambda as f64 * cfg.delta;
    let mut next = x.p;
    if s > x.s_max {
        next = x.p - step;
    } else if s < x.s_min {
        next = x.p + step;
    }
    if next > x.p_max {
        next = x.p_max;
    }
    if next < x.p_min {
        next = x.p_min;
    }
    next
}

pub async fn run_gds(cfg: &GdsRunConfig, client: &ApiClient, clock: &dyn Clock) -> Result<DsOutcome, DsError> {
    cfg.control.validate()?;
    cfg.gds.validate()?;
    let (p, s) = (&cfg.gds.param_id, &cfg.gds.slo_id);
    let mut state_cols = vec![
        format!("{p}.min"),
        format!("{p}.max"),
        format!("{p}.value"),
        format!("{s}.min"),
        format!("{s}.max"),
        format!("{s}.value"),
    ];
    if cfg.gds.is_carbon {
        state_cols.push("intensity".into());
    }
    let mut out = DsOutcome {
        log: StepLog::new(state_cols, vec![format!("{p}.set")]),
        ..Default::default()
    };
    for step in 0..cfg.control.max_steps {
        let sw = Stopwatch::start();
        let ts = clock.now_ms();
        let res = async {
            let pr = client.param_range(p).await?;
            let sr = client.slo_range(s).await?;
            let pv = client.param_value(p).await?;
            let sv = client.slo_value(s).await?;
            let intensity = match (cfg.gds.is_carbon, sv) {
                (true, Some(_)) => Some(
                    client
                        .intensity(&cfg.control.country, ts, cfg.control.granularity)
                        .await?,
                ),
                _ => None,
            };
            let mut state = vec![Some(pr.min), Some(pr.max), Some(pv), Some(sr.min), Some(sr.max), sv];
            if cfg.gds.is_carbon {
                state.push(intensity);
            }
            let Some(sv) = sv else {
                return Ok::<_, DsError>((state, None));
            };
            let input = GdsInput {
                s: sv,
                s_min: sr.min,
                s_max: sr.max,
                p: pv,
                p_min: pr.min,
                p_max: pr.max,
                intensity,
            };
            let next = gds_decide(&cfg.gds, &input);
            client.set_param(p, next).await?;
            Ok((state, Some(next)))
        }
        .await;
        match res {
            Ok((state, action)) => {
                out.decision_ms.push(sw.ms());
                out.log.push(StepRecord {
                    step,
                    ts,
                    state,
                    action: vec![action],
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

    fn cfg(lambda: i32, delta: f64, is_carbon: bool) -> GdsConfig {
        GdsConfig {
            slo_id: "s".into(),
            param_id: "p".into(),
            delta,
            lambda,
            is_carbon,
        }
    }

    fn input(s: f64, p: f64) -> GdsInput {
        GdsInput {
            s,
            s_min: 24.0,
            s_max: 30.0,
            p,
            p_min: 0.0,
            p_max: 16.0,
            intensity: None,
        }
    }

    #[test]
    fn worked_examples() {
        assert_eq!(gds_decide(&cfg(1, 1.0, false), &input(23.0, 5.0)), 6.0);
        assert_eq!(gds_decide(&cfg(1, 1.0, false), &input(31.0, 0.0)), 0.0);
        assert_eq!(gds_decide(&cfg(1, 1.0, false), &input(25.0, 9.0)), 9.0);
        assert_eq!(gds_decide(&cfg(1, 1.0, false), &input(24.0, 9.0)), 9.0);
        assert_eq!(gds_decide(&cfg(-1, 2.0, false), &input(23.0, 16.0)), 14.0);
        assert_eq!(gds_decide(&cfg(1, 1.0, false), &input(10.0, 16.0)), 16.0);
    }

    #[test]
    fn carbon_multiplies_reading() {
        let mut x = input(0.1, 8.0);
        x.intensity = Some(250.0);
        // 0.1 * 250 = 25, inside the range
        assert_eq!(gds_decide(&cfg(-1, 1.0, true), &x), 8.0);
        x.intensity = Some(400.0);
        assert_eq!(gds_decide(&cfg(-1, 1.0, true), &x), 9.0);
        assert_eq!(gds_decide(&cfg(-1, 1.0, false), &x), 7.0);
    }

    #[test]
    fn validation() {
        assert!(cfg(0, 1.0, false).validate().is_err());
        assert!(cfg(1, 0.0, false).validate().is_err());
        assert!(cfg(-1, 0.5, false).validate().is_ok());
    }
}
