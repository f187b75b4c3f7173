//! States, actions and the reward signal of the reinforcement-learning
//! formulation.

use super::client::{ApiClient, ParamRange, Range};
use super::{ControlLoopConfig, DsError};
use tracing::warn;

/// Lower bound applied to the carbon footprint before dividing by it.
pub const MIN_CARBON: f64 = 1e-6;

/// Emissions in mg CO2eq per minute of drawing `power_w` watts at
/// `intensity` gCO2eq/kWh.
pub fn carbon_footprint(power_w: f64, intensity_gco2eq_kwh: f64) -> Result<f64, DsError> {
    if !(power_w >= 0.0) || !(intensity_gco2eq_kwh >= 0.0) {
        return Err(DsError::Invalid(format!(
            "carbon footprint needs non-negative inputs, got {power_w} W and {intensity_gco2eq_kwh} g/kWh"
        )));
    }
    // W * 60 s = W/60000 kWh; g -> mg is * 1000
    Ok(power_w * intensity_gco2eq_kwh / 60.0)
}

/// 1 when `x` lies in the closed interval `[a, b]`, `-2c` otherwise.
pub fn in_fn(x: f64, a: f64, b: f64, c: f64) -> Result<f64, DsError> {
    if a > b {
        return Err(DsError::Invalid(format!("empty interval [{a}, {b}]")));
    }
    Ok(if a <= x && x <= b { 1.0 } else { -2.0 * c })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamObs {
    pub id: String,
    pub range: ParamRange,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SloObs {
    pub id: String,
    pub range: Range,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    pub params: Vec<ParamObs>,
    pub slos: Vec<SloObs>,
    pub carbon: f64,
}

impl MdpState {
    pub fn dim(n_params: usize, n_slos: usize) -> usize {
        3 * n_params + 3 * n_slos + 1
    }

    /// `(p_min, p_max, p)` per parameter, `(s_min, s_max, s)` per SLO, then C.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.params.len(), self.slos.len()));
        for p in &self.params {
            v.extend([p.range.min, p.range.max, p.value]);
        }
        for s in &self.slos {
            v.extend([s.range.min, s.range.max, s.value]);
        }
        v.push(self.carbon);
        v
    }

    pub fn columns(params: &[String], slos: &[String]) -> Vec<String> {
        let mut c = Vec::new();
        for p in params {
            c.extend([format!("{p}.min"), format!("{p}.max"), format!("{p}.value")]);
        }
        for s in slos {
            c.extend([format!("{s}.min"), format!("{s}.max"), format!("{s}.value")]);
        }
        c.push("C".into());
        c
    }
}

/// One new value per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpAction {
    pub values: Vec<f64>,
    /// Chosen bin per parameter.
    pub bins: Vec<usize>,
}

/// Mean over SLOs of `IN(s, s_min, s_max, C) / C`.
pub fn reward(next: &MdpState) -> Result<f64, DsError> {
    if next.slos.is_empty() {
        return Err(DsError::Invalid("reward needs at least one SLO".into()));
    }
    let mut c = next.carbon;
    if !(c > 0.0) {
        warn!("carbon footprint {c} clamped to {MIN_CARBON} for the reward");
        c = MIN_CARBON;
    }
    let mut sum = 0.0;
    for s in &next.slos {
        sum += in_fn(s.value, s.range.min, s.range.max, c)? / c;
    }
    Ok(sum / next.slos.len() as f64)
}

/// `bins` equally spaced values over the range, both endpoints included,
/// rounded for integer parameters.
pub fn bin_values(range: &ParamRange, bins: usize) -> Vec<f64> {
    if bins < 2 {
        return vec![range.min];
    }
    (0..bins)
        .map(|k| {
            let v = range.min + (range.max - range.min) * k as f64 / (bins - 1) as f64;
            let v = if range.integer { v.round() } else { v };
            v.clamp(range.min, range.max)
        })
        .collect()
}

pub fn default_bins(range: &ParamRange) -> usize {
    if range.integer {
        ((range.max - range.min).round() as usize + 1).max(2)
    } else {
        17
    }
}

/// Reads every selected parameter and SLO plus the carbon footprint through
/// the APIs. `Ok(None)` when some SLO window is empty.
pub async fn build_state(
    client: &ApiClient,
    cfg: &ControlLoopConfig,
    now_ms: i64,
    params: &[String],
    slos: &[String],
) -> Result<Option<MdpState>, DsError> {
    let mut p_obs = Vec::with_capacity(params.len());
    for id in params {
        let range = client.param_range(id).await?;
        let value = client.param_value(id).await?;
        p_obs.push(ParamObs {
            id: id.clone(),
            range,
            value,
        });
    }
    let mut s_obs = Vec::with_capacity(slos.len());
    for id in slos {
        let range = client.slo_range(id).await?;
        let Some(value) = client.slo_value(id).await? else {
            return Ok(None);
        };
        s_obs.push(SloObs {
            id: id.clone(),
            range,
            value,
        });
    }
    let Some(power) = client.slo_value(&cfg.power_slo).await? else {
        return Ok(None);
    };
    let intensity = client.intensity(&cfg.country, now_ms, cfg.granularity).await?;
    Ok(Some(MdpState {
        params: p_obs,
        slos: s_obs,
        carbon: carbon_footprint(power, intensity)?,
    }))
}
