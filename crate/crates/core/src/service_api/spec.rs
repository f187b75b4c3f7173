use super::alias::AliasMap;
use crate::store::QuerySpec;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Json(#[from] serde_json::Error),
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("{kind} {id:?}: min {min} exceeds max {max}")]
    InvertedRange {
        kind: &'static str,
        id: String,
        min: f64,
        max: f64,
    },
    #[error("SLO {id:?}: unparseable query: {reason}")]
    BadQuery { id: String, reason: String },
    #[error("alias error: {0}")]
    Alias(String),
}

/// A declared SLO: `fulfilled` when its query value lies in `[min, max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SloSpec {
    pub id: String,
    pub description: String,
    pub query: QuerySpec,
    pub unit: String,
    pub s_min: f64,
    pub s_max: f64,
}

impl SloSpec {
    pub fn fulfilled(&self, value: f64) -> bool {
        self.s_min <= value && value <= self.s_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueType {
    Integer,
    Float,
}

/// A configurable service parameter with its admissible range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "type")]
    pub value_type: ValueType,
    #[serde(rename = "min")]
    pub p_min: f64,
    #[serde(rename = "max")]
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SettingValueError {
    #[error("value {value} outside [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
    #[error("setting is integer-valued, got {0}")]
    NotInteger(f64),
}

impl SettingSpec {
    pub fn check(&self, value: f64) -> Result<(), SettingValueError> {
        if self.value_type == ValueType::Integer && value.fract() != 0.0 {
            return Err(SettingValueError::NotInteger(value));
        }
        if !(self.p_min <= value && value <= self.p_max) {
            return Err(SettingValueError::OutOfRange {
                value,
                min: self.p_min,
                max: self.p_max,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlo {
    id: String,
    #[serde(default)]
    description: String,
    query: String,
    #[serde(default)]
    unit: String,
    min: f64,
    max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    slos: Vec<RawSlo>,
    #[serde(default)]
    settings: Vec<SettingSpec>,
    #[serde(default)]
    aliases: AliasMap,
}

/// Parsed contents of an SLO configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct SloConfig {
    pub slos: Vec<SloSpec>,
    pub settings: Vec<SettingSpec>,
    pub aliases: AliasMap,
}

impl SloConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = serde_json::from_str(text)?;
        let mut seen = HashSet::new();
        let mut slos = Vec::with_capacity(raw.slos.len());
        for r in raw.slos {
            if !seen.insert(r.id.clone()) {
                return Err(ConfigError::DuplicateId { kind: "SLO", id: r.id });
            }
            if r.min > r.max {
                return Err(ConfigError::InvertedRange {
                    kind: "SLO",
                    id: r.id,
                    min: r.min,
                    max: r.max,
                });
            }
            let query = QuerySpec::parse(&r.query).map_err(|e| ConfigError::BadQuery {
                id: r.id.clone(),
                reason: e.to_string(),
            })?;
            slos.push(SloSpec {
                id: r.id,
                description: r.description,
                query,
                unit: r.unit,
                s_min: r.min,
                s_max: r.max,
            });
        }
        validate_settings(&raw.settings)?;
        raw.aliases.validate()?;
        Ok(Self {
            slos,
            settings: raw.settings,
            aliases: raw.aliases,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

pub fn validate_settings(settings: &[SettingSpec]) -> Result<(), ConfigError> {
    let mut seen = HashSet::new();
    for s in settings {
        if !seen.insert(s.id.as_str()) {
            return Err(ConfigError::DuplicateId {
                kind: "setting",
                id: s.id.clone(),
            });
        }
        if s.p_min > s.p_max {
            return Err(ConfigError::InvertedRange {
                kind: "setting",
                id: s.id.clone(),
                min: s.p_min,
                max: s.p_max,
            });
        }
    }
    Ok(())
}

/// Reads the `slos` array of a configuration file.
pub fn parse_slos(path: impl AsRef<Path>) -> Result<Vec<SloSpec>, ConfigError> {
    SloConfig::load(path).map(|c| c.slos)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FPS: &str = r#"{"slos":[{"id":"FPS","description":"Frames per second delivered to clients","query":"mean(fps.value,300s)","unit":"fps","min":24,"max":30}]}"#;

    #[test]
    fn fps_fixture() {
        let c = SloConfig::from_json(FPS).unwrap();
        assert_eq!(c.slos.len(), 1);
        let s = &c.slos[0];
        assert_eq!((s.s_min, s.s_max), (24.0, 30.0));
        assert_eq!(s.query.window_s, 300);
        assert!(s.fulfilled(24.0) && s.fulfilled(30.0) && s.fulfilled(25.0));
        assert!(!s.fulfilled(23.9) && !s.fulfilled(30.000001));
    }

    #[test]
    fn inverted_range() {
        let t = FPS.replace(r#""min":24,"max":30"#, r#""min":30,"max":24"#);
        assert!(matches!(SloConfig::from_json(&t), Err(ConfigError::InvertedRange { .. })));
    }

    #[test]
    fn duplicate_id() {
        let t = r#"{"slos":[
            {"id":"A","query":"mean(a.v,1s)","min":0,"max":1},
            {"id":"A","query":"mean(b.v,1s)","min":0,"max":1}]}"#;
        assert!(matches!(SloConfig::from_json(t), Err(ConfigError::DuplicateId { .. })));
    }

    #[test]
    fn bad_query_names_slo() {
        let t = FPS.replace("mean(fps.value,300s)", "mean(fps.value)");
        match SloConfig::from_json(&t) {
            Err(ConfigError::BadQuery { id, .. }) => assert_eq!(id, "FPS"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn setting_checks() {
        let s = SettingSpec {
            id: "EncodingThreadCount".into(),
            description: String::new(),
            value_type: ValueType::Integer,
            p_min: 0.0,
            p_max: 16.0,
        };
        assert!(s.check(7.0).is_ok());
        assert!(s.check(0.0).is_ok() && s.check(16.0).is_ok());
        assert!(matches!(s.check(3.5), Err(SettingValueError::NotInteger(_))));
        assert!(matches!(s.check(17.0), Err(SettingValueError::OutOfRange { .. })));
    }
}
