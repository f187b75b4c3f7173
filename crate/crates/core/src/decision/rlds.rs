//! Reinforcement-learning decision system: observe, act, wait, reward, and
//! a PPO update every batch.

use super::mdp::{build_state, default_bins, reward, MdpState};
use super::policy::{Policy, PolicyConfig, Transition};
use super::{aborted, ApiClient, ControlLoopConfig, DsError, DsOutcome, StepLog, StepRecord, Stopwatch};
use crate::clock::Clock;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use tracing::warn;

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RldsConfig {
    #[serde(flatten)]
    pub control: ControlLoopConfig,
    /// Parameters the agent controls, in state order.
    pub params: Vec<String>,
    /// SLOs in the state and reward, excluding the power SLO.
    pub slos: Vec<String>,
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Where to write the trained policy as JSON.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    /// Sample actions while training; off means always the mode.
    #[serde(default = "yes")]
    pub explore: bool,
    /// Update the policy while running; off replays a fixed policy.
    #[serde(default = "yes")]
    pub train: bool,
}

impl RldsConfig {
    pub fn validate(&self) -> Result<(), DsError> {
        self.control.validate()?;
        self.policy.validate()?;
        if self.params.is_empty() || self.slos.is_empty() {
            return Err(DsError::Invalid("at least one parameter and one SLO are required".into()));
        }
        if self.slos.contains(&self.control.power_slo) {
            return Err(DsError::Invalid("the power SLO cannot be part of the reward SLOs".into()));
        }
        Ok(())
    }
}

const MAX_CONSECUTIVE_FAILURES: u32 = 5;

/// Runs the training loop for `max_steps` time-steps. `initial` resumes
/// from an existing policy.
pub async fn rlds_train(
    cfg: &RldsConfig,
    client: &ApiClient,
    clock: &dyn Clock,
    initial: Option<Policy>,
) -> Result<(Policy, DsOutcome), DsError> {
    cfg.validate()?;
    let ctl = &cfg.control;
    let mut heads = Vec::with_capacity(cfg.params.len());
    for p in &cfg.params {
        let range = client.param_range(p).await?;
        heads.push(cfg.policy.bins.unwrap_or_else(|| default_bins(&range)));
    }
    let dim = MdpState::dim(cfg.params.len(), cfg.slos.len());
    let mut policy = match initial {
        Some(p) if p.input_dim() == dim && p.heads() == heads.as_slice() => p,
        Some(_) => return Err(DsError::Invalid("checkpoint does not match the configured state".into())),
        None => Policy::new(cfg.policy.clone(), dim, heads, ctl.seed)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctl.seed.wrapping_add(1));
    let batch_size = policy.config().batch;
    let train = cfg.train;

    let state_cols = MdpState::columns(&cfg.params, &cfg.slos);
    let n_state = state_cols.len();
    let action_cols = cfg.params.iter().map(|p| format!("{p}.set")).collect();
    let mut out = DsOutcome {
        log: StepLog::new(state_cols, action_cols),
        ..Default::default()
    };
    let mut buffer: Vec<Transition> = Vec::with_capacity(batch_size);
    let mut current: Option<MdpState> = None;
    let mut failures = 0u32;

    for step in 0..ctl.max_steps {
        let sw = Stopwatch::start();
        let ts = clock.now_ms();
        if current.is_none() {
            match build_state(client, ctl, clock.now_ms(), &cfg.params, &cfg.slos).await {
                Ok(Some(s)) => {
                    policy.observe(&s.to_vec());
                    current = Some(s);
                    failures = 0;
                }
                Ok(None) => {}
                Err(e) => {
                    failures += 1;
                    if failures >= MAX_CONSECUTIVE_FAILURES {
                        out.failure = Some(aborted(step, e));
                        break;
                    }
                    warn!("step {step}: state unavailable: {e}");
                }
            }
        }
        let Some(state) = current.take() else {
            out.log.push(StepRecord {
                step,
                ts,
                state: vec![None; n_state],
                action: vec![None; cfg.params.len()],
                reward: None,
            });
            clock.sleep_s(ctl.tau_s).await;
            continue;
        };

        let obs = policy.normalize(&state.to_vec());
        let (bins, logp) = policy.choose(&obs, cfg.explore, &mut rng);
        let value = policy.value(&obs);
        let action = policy.to_action(&state, bins);
        let mut applied = Ok(());
        for (id, &v) in cfg.params.iter().zip(&action.values) {
            if let Err(e) = client.set_param(id, v).await {
                applied = Err(e);
                break;
            }
        }
        out.decision_ms.push(sw.ms());
        let state_cells = state.to_vec().into_iter().map(Some).collect();
        let action_cells = action.values.iter().map(|&v| Some(v)).collect();
        if let Err(e) = applied {
            warn!("step {step}: action not applied, episode truncated: {e}");
            if let Some(last) = buffer.last_mut() {
                last.done = true;
            }
            out.log.push(StepRecord {
                step,
                ts,
                state: state_cells,
                action: action_cells,
                reward: None,
            });
            failures += 1;
            if failures >= MAX_CONSECUTIVE_FAILURES {
                out.failure = Some(aborted(step, e));
                break;
            }
            clock.sleep_s(ctl.tau_s).await;
            continue;
        }

        clock.sleep_s(ctl.tau_s).await;

        let next = match build_state(client, ctl, clock.now_ms(), &cfg.params, &cfg.slos).await {
            Ok(next) => next,
            Err(e) => {
                warn!("step {step}: next state unavailable, episode truncated: {e}");
                None
            }
        };
        let r = match &next {
            Some(n) => Some(reward(n)?),
            None => None,
        };
        out.log.push(StepRecord {
            step,
            ts,
            state: state_cells,
            action: action_cells,
            reward: r,
        });
        match (next, r) {
            (Some(n), Some(r)) => {
                failures = 0;
                buffer.push(Transition {
                    obs,
                    bins: action.bins,
                    logp,
                    value,
                    reward: r,
                    done: false,
                });
                policy.observe(&n.to_vec());
                current = Some(n);
            }
            _ => {
                if let Some(last) = buffer.last_mut() {
                    last.done = true;
                }
            }
        }
        if train && buffer.len() >= batch_size {
            let last_value = match &current {
                Some(s) => policy.value(&policy.normalize(&s.to_vec())),
                None => 0.0,
            };
            policy.update(&buffer, last_value, &mut rng);
            buffer.clear();
        }
    }

    if let Some(path) = &cfg.checkpoint {
        save_policy(&policy, path)?;
    }
    Ok((policy, out))
}

pub fn save_policy(policy: &Policy, path: &std::path::Path) -> Result<(), DsError> {
    let text = serde_json::to_string(policy).map_err(|e| DsError::Invalid(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_policy(path: &std::path::Path) -> Result<Policy, DsError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| DsError::Invalid(format!("bad checkpoint: {e}")))
}
