use crate::bus::TopicPattern;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum HookConfigError {
    #[error("cannot read hook config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("hook config schema violation in `{field}`: {reason}")]
    Schema { field: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpreter {
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMapping {
    pub path: String,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum TagSource {
    PayloadPath { path: String },
    TopicSegment { segment: usize },
    Constant { value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagMapping {
    #[serde(flatten)]
    pub source: TagSource,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampSource {
    Envelope,
    PayloadPath(String),
}

/// Declarative description of one hook: where to listen and how payloads
/// map onto store points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HookConfig {
    pub bus: String,
    pub topic: TopicPattern,
    pub interpreter: Interpreter,
    pub measurement: String,
    pub fields: Vec<FieldMapping>,
    #[serde(default)]
    pub tags: Vec<TagMapping>,
    #[serde(default = "default_timestamp")]
    pub timestamp: TimestampSource,
    #[serde(default)]
    pub drop_unmapped: bool,
}

fn default_timestamp() -> TimestampSource {
    TimestampSource::Envelope
}

/// JSON-pointer syntax: empty, or `/`-prefixed with `~` only as `~0`/`~1`.
pub fn valid_pointer(path: &str) -> bool {
    if path.is_empty() {
        return true;
    }
    if !path.starts_with('/') {
        return false;
    }
    let mut chars = path.chars();
    while let Some(c) = chars.next() {
        if c == '~' && !matches!(chars.next(), Some('0' | '1')) {
            return false;
        }
    }
    true
}

fn schema<T>(field: impl Into<String>, reason: impl Into<String>) -> Result<T, HookConfigError> {
    Err(HookConfigError::Schema {
        field: field.into(),
        reason: reason.into(),
    })
}

impl HookConfig {
    pub fn from_json(text: &str) -> Result<Self, HookConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: HookConfig = match deserialize_reporting_key(de) {
            Ok(c) => c,
            Err((field, reason)) => return schema(field, reason),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HookConfigError> {
        if self.measurement.is_empty() {
            return schema("measurement", "must not be empty");
        }
        if self.fields.is_empty() {
            return schema("fields", "must map at least one payload path");
        }
        for (i, f) in self.fields.iter().enumerate() {
            if !valid_pointer(&f.path) {
                return schema(format!("fields[{i}].path"), format!("invalid path {:?}", f.path));
            }
            if f.field.is_empty() {
                return schema(format!("fields[{i}].field"), "must not be empty");
            }
        }
        for (i, t) in self.tags.iter().enumerate() {
            if let TagSource::PayloadPath { path } = &t.source {
                if !valid_pointer(path) {
                    return schema(format!("tags[{i}].path"), format!("invalid path {path:?}"));
                }
            }
            if t.tag.is_empty() {
                return schema(format!("tags[{i}].tag"), "must not be empty");
            }
        }
        if let TimestampSource::PayloadPath(p) = &self.timestamp {
            if !valid_pointer(p) {
                return schema("timestamp", format!("invalid path {p:?}"));
            }
        }
        Ok(())
    }
}

/// Deserializes and reports the failing top-level key when serde names one.
fn deserialize_reporting_key<'de, R: serde_json::de::Read<'de>>(
    de: &mut serde_json::Deserializer<R>,
) -> Result<HookConfig, (String, String)> {
    HookConfig::deserialize(&mut *de)
        .and_then(|c| de.end().map(|_| c))
        .map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("field"))
                .unwrap_or("<document>")
                .to_string();
            (field, msg)
        })
}

pub fn load_hook_config(path: impl AsRef<Path>) -> Result<HookConfig, HookConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| HookConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    HookConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FPS: &str = r#"{
        "bus": "127.0.0.1:7811",
        "topic": "fps/+",
        "interpreter": "json",
        "measurement": "fps",
        "fields": [{"path": "/fps", "field": "value"}],
        "tags": [{"from": "topic_segment", "segment": 1, "tag": "client"}],
        "timestamp": "envelope",
        "drop_unmapped": true
    }"#;

    #[test]
    fn fps_fixture_parses() {
        let c = HookConfig::from_json(FPS).unwrap();
        assert_eq!(c.measurement, "fps");
        assert_eq!(
            c.fields,
            vec![FieldMapping {
                path: "/fps".into(),
                field: "value".into()
            }]
        );
        assert_eq!(c.tags[0].source, TagSource::TopicSegment { segment: 1 });
        assert_eq!(c.tags[0].tag, "client");
        assert_eq!(c.timestamp, TimestampSource::Envelope);
    }

    #[test]
    fn empty_fields_is_schema_violation() {
        let text = FPS.replace(r#"[{"path": "/fps", "field": "value"}]"#, "[]");
        match HookConfig::from_json(&text) {
            Err(HookConfigError::Schema { field, .. }) => assert_eq!(field, "fields"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_paths_and_keys() {
        let text = FPS.replace(r#""/fps""#, r#""fps""#);
        assert!(matches!(
            HookConfig::from_json(&text),
            Err(HookConfigError::Schema { field, .. }) if field == "fields[0].path"
        ));
        let text = FPS.replace(r#""drop_unmapped""#, r#""drop""#);
        assert!(matches!(
            HookConfig::from_json(&text),
            Err(HookConfigError::Schema { field, .. }) if field == "drop"
        ));
        let text = FPS.replace(r#""fps/+""#, r#""fps/#/x""#);
        assert!(HookConfig::from_json(&text).is_err());
    }

    #[test]
    fn payload_timestamp_and_pointer_syntax() {
        let text = FPS.replace(r#""envelope""#, r#"{"payload_path": "/ts"}"#);
        let c = HookConfig::from_json(&text).unwrap();
        assert_eq!(c.timestamp, TimestampSource::PayloadPath("/ts".into()));
        assert!(valid_pointer("/a~1b/~0"));
        assert!(!valid_pointer("/a~2"));
    }
}
