//! Topic-based publish/subscribe middleware.
//!
//! The [`Broker`] is the in-process core. [`tcp::BusServer`] exposes it over
//! newline-delimited JSON and [`tcp::TcpBusClient`] talks to any such server,
//! so hooks and reporters only depend on the [`BusConnector`] seam.

pub mod broker;
pub mod tcp;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::str::FromStr;

pub use broker::{Broker, Subscription};

#[derive(Debug, thiserror::Error)]
pub enum BusError {
    #[error("malformed topic {topic:?}: {reason}")]
    MalformedTopic { topic: String, reason: &'static str },
    #[error("invalid pattern {pattern:?}: {reason}")]
    InvalidPattern { pattern: String, reason: &'static str },
    #[error("negative envelope timestamp {0}")]
    NegativeTimestamp(i64),
    #[error("broker is not running")]
    NotRunning,
    #[error("connection error: {0}")]
    Connection(#[from] std::io::Error),
    #[error("encoding error: {0}")]
    Encoding(#[from] serde_json::Error),
}

/// One message on the bus. Serialized on the wire as `{"t":..,"p":..,"ts":..}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "t")]
    pub topic: String,
    #[serde(rename = "p")]
    pub payload: Value,
    pub ts: i64,
}

impl Envelope {
    pub fn new(topic: impl Into<String>, payload: Value, ts: i64) -> Self {
        Self {
            topic: topic.into(),
            payload,
            ts,
        }
    }

    pub fn validate(&self) -> Result<(), BusError> {
        validate_topic(&self.topic)?;
        if self.ts < 0 {
            return Err(BusError::NegativeTimestamp(self.ts));
        }
        Ok(())
    }
}

pub fn validate_topic(topic: &str) -> Result<(), BusError> {
    let bad = |reason| {
        Err(BusError::MalformedTopic {
            topic: topic.to_string(),
            reason,
        })
    };
    if topic.is_empty() {
        return bad("empty topic");
    }
    if topic.chars().any(char::is_whitespace) {
        return bad("contains whitespace");
    }
    if topic.split('/').any(str::is_empty) {
        return bad("empty segment");
    }
    if topic.contains(['+', '#']) {
        return bad("wildcards are not allowed in topics");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Exact(String),
    One,
    Rest,
}

/// A subscription pattern. `+` matches exactly one segment, a trailing `#`
/// matches any suffix (including the empty one).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicPattern {
    raw: String,
    segments: Vec<Segment>,
}

impl TopicPattern {
    pub fn parse(pattern: &str) -> Result<Self, BusError> {
        let bad = |reason| {
            Err(BusError::InvalidPattern {
                pattern: pattern.to_string(),
                reason,
            })
        };
        if pattern.is_empty() {
            return bad("empty pattern");
        }
        if pattern.chars().any(char::is_whitespace) {
            return bad("contains whitespace");
        }
        let parts: Vec<&str> = pattern.split('/').collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let seg = match *part {
                "" => return bad("empty segment"),
                "+" => Segment::One,
                "#" if i + 1 == parts.len() => Segment::Rest,
                "#" => return bad("'#' may only be the final segment"),
                s if s.contains(['+', '#']) => return bad("wildcard must fill a whole segment"),
                s => Segment::Exact(s.to_string()),
            };
            segments.push(seg);
        }
        Ok(Self {
            raw: pattern.to_string(),
            segments,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn matches(&self, topic: &str) -> bool {
        let mut levels = topic.split('/');
        for seg in &self.segments {
            match seg {
                Segment::Rest => return true,
                Segment::One => {
                    if levels.next().is_none() {
                        return false;
                    }
                }
                Segment::Exact(s) => match levels.next() {
                    Some(level) if level == s => {}
                    _ => return false,
                },
            }
        }
        levels.next().is_none()
    }
}

impl FromStr for TopicPattern {
    type Err = BusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for TopicPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for TopicPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Self::parse(&raw).map_err(serde::de::Error::custom)
    }
}

/// Anything hooks and reporters can publish to and subscribe on.
#[async_trait]
pub trait BusConnector: Send + Sync {
    async fn publish(&self, envelope: Envelope) -> Result<(), BusError>;
    async fn subscribe(&self, pattern: &TopicPattern) -> Result<Subscription, BusError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topic_validation() {
        assert!(validate_topic("power/plug1").is_ok());
        assert!(validate_topic("").is_err());
        assert!(validate_topic("a//b").is_err());
        assert!(validate_topic("/a").is_err());
        assert!(validate_topic("a b").is_err());
        assert!(validate_topic("a/#").is_err());
    }

    #[test]
    fn pattern_rules() {
        assert!(TopicPattern::parse("a/#").is_ok());
        assert!(TopicPattern::parse("#").is_ok());
        assert!(TopicPattern::parse("a/#/b").is_err());
        assert!(TopicPattern::parse("a/b+").is_err());
        assert!(TopicPattern::parse("a//b").is_err());
        assert!(TopicPattern::parse("").is_err());
    }

    #[test]
    fn wildcard_examples() {
        let p = TopicPattern::parse("a/+/c").unwrap();
        assert!(p.matches("a/b/c"));
        assert!(!p.matches("a/b/d"));
        assert!(TopicPattern::parse("a/#").unwrap().matches("a/b/c/d"));
        assert!(TopicPattern::parse("a/#").unwrap().matches("a"));
        assert!(!TopicPattern::parse("a/+").unwrap().matches("a/b/c"));
        assert!(!TopicPattern::parse("a/+").unwrap().matches("a"));
        assert!(!TopicPattern::parse("power/#").unwrap().matches("fps/client1"));
    }

    #[test]
    fn hand_enumerated_single_level() {
        // every 2- and 3-segment topic over {a,b,c}; "a/+" matches exactly a/a, a/b, a/c
        let p = TopicPattern::parse("a/+").unwrap();
        let syms = ["a", "b", "c"];
        let mut hits = Vec::new();
        for x in syms {
            for y in syms {
                let t = format!("{x}/{y}");
                if p.matches(&t) {
                    hits.push(t);
                }
                for z in syms {
                    assert!(!p.matches(&format!("{x}/{y}/{z}")));
                }
            }
        }
        assert_eq!(hits, vec!["a/a", "a/b", "a/c"]);
    }

    #[test]
    fn envelope_wire_keys() {
        let e = Envelope::new("power/plug1", serde_json::json!({"W": 17.2}), 1000);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, r#"{"t":"power/plug1","p":{"W":17.2},"ts":1000}"#);
        let back: Envelope = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }
}
