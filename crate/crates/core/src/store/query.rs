//! Store-neutral query DSL:
//!
//! ```text
//! <agg>(<measurement>.<field>, <int>s) [where k=v[, k=v...]]
//! ```

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Last,
    Mean,
    Min,
    Max,
    Count,
}

impl Aggregation {
    pub const ALL: [Aggregation; 5] = [Self::Last, Self::Mean, Self::Min, Self::Max, Self::Count];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Last => "last",
            Self::Mean => "mean",
            Self::Min => "min",
            Self::Max => "max",
            Self::Count => "count",
        }
    }
}

impl FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown aggregation {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub measurement: String,
    pub field: String,
    pub aggregation: Aggregation,
    /// Window length in seconds; the query covers `(now - window, now]`.
    pub window_s: u64,
    pub tag_filter: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("query parse error at {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

impl QuerySpec {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Parser { src: text, pos: 0 }.query()
    }

    pub fn window_ms(&self) -> i64 {
        self.window_s as i64 * 1000
    }
}

impl FromStr for QuerySpec {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

/// Canonical form; `parse(to_string(q)) == q`.
impl fmt::Display for QuerySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}.{}, {}s)",
            self.aggregation.as_str(),
            self.measurement,
            self.field,
            self.window_s
        )?;
        for (i, (k, v)) in self.tag_filter.iter().enumerate() {
            f.write_str(if i == 0 { " where " } else { ", " })?;
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn is_tag_char(c: char) -> bool {
    is_ident_char(c) || c == '.' || c == ':'
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> &str {
        let start = self.pos;
        let len = self
            .rest()
            .char_indices()
            .find(|&(_, c)| !pred(c))
            .map_or(self.rest().len(), |(i, _)| i);
        self.pos += len;
        &self.src[start..self.pos]
    }

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        self.skip_ws();
        let s = self.take_while(is_ident_char);
        if s.is_empty() {
            return self.err(format!("expected {what}"));
        }
        Ok(s.to_string())
    }

    fn query(mut self) -> Result<QuerySpec, ParseError> {
        self.skip_ws();
        let agg_pos = self.pos;
        let agg = self.ident("aggregation")?;
        let aggregation = agg.parse::<Aggregation>().map_err(|msg| ParseError {
            pos: agg_pos,
            msg,
        })?;
        self.expect('(')?;
        let measurement = self.ident("measurement")?;
        self.expect('.')?;
        let field = self.ident("field")?;
        self.skip_ws();
        if !self.rest().starts_with(',') {
            return self.err("expected ',' followed by a window such as 300s");
        }
        self.pos += 1;
        self.skip_ws();
        let digits = self.take_while(|c| c.is_ascii_digit());
        if digits.is_empty() {
            return self.err("expected window in seconds");
        }
        let window_s: u64 = match digits.parse() {
            Ok(w) => w,
            Err(_) => return self.err("window out of range"),
        };
        if window_s == 0 {
            return self.err("window must be positive");
        }
        if !self.rest().starts_with('s') {
            return self.err("expected 's' unit after window");
        }
        self.pos += 1;
        self.expect(')')?;
        self.skip_ws();
        let mut tag_filter = BTreeMap::new();
        if !self.rest().is_empty() {
            let kw = self.take_while(|c| c.is_ascii_alphabetic());
            if kw != "where" {
                self.pos -= kw.len();
                return self.err("expected 'where' or end of query");
            }
            loop {
                let key = self.ident("tag key")?;
                self.expect('=')?;
                self.skip_ws();
                let value = self.take_while(is_tag_char).to_string();
                if value.is_empty() {
                    return self.err("expected tag value");
                }
                if tag_filter.insert(key, value).is_some() {
                    return self.err("duplicate tag key");
                }
                self.skip_ws();
                if self.rest().starts_with(',') {
                    self.pos += 1;
                    continue;
                }
                break;
            }
            if !self.rest().is_empty() {
                return self.err("unexpected trailing input");
            }
        }
        Ok(QuerySpec {
            measurement,
            field,
            aggregation,
            window_s,
            tag_filter,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grammar_examples() {
        let q = QuerySpec::parse("mean(fps.value, 300s)").unwrap();
        assert_eq!(q.measurement, "fps");
        assert_eq!(q.field, "value");
        assert_eq!(q.aggregation, Aggregation::Mean);
        assert_eq!(q.window_s, 300);
        assert!(q.tag_filter.is_empty());

        let q = QuerySpec::parse("last(power.apparent_w, 60s) where host=anemone").unwrap();
        assert_eq!(q.aggregation, Aggregation::Last);
        assert_eq!(q.tag_filter.get("host").map(String::as_str), Some("anemone"));

        let compact = QuerySpec::parse("mean(fps.value,300s)").unwrap();
        assert_eq!(compact.window_s, 300);
    }

    #[test]
    fn missing_window_is_rejected_with_position() {
        let e = QuerySpec::parse("mean(fps.value)").unwrap_err();
        assert_eq!(e.pos, 14);
    }

    #[test]
    fn other_errors() {
        assert!(QuerySpec::parse("median(fps.value, 3s)").is_err());
        assert!(QuerySpec::parse("mean(fps.value, 0s)").is_err());
        assert!(QuerySpec::parse("mean(fps.value, 10m)").is_err());
        assert!(QuerySpec::parse("mean(fps, 10s)").is_err());
        assert!(QuerySpec::parse("mean(fps.value, 10s) when a=b").is_err());
        assert!(QuerySpec::parse("mean(fps.value, 10s) where a=b, a=c").is_err());
        assert!(QuerySpec::parse("mean(fps.value, 10s) junk").is_err());
    }

    #[test]
    fn canonical_form() {
        let q = QuerySpec::parse("  max( power.w ,10s )  where z=1,a=x.y ").unwrap();
        assert_eq!(q.to_string(), "max(power.w, 10s) where a=x.y, z=1");
    }

    fn ident() -> impl Strategy<Value = String> {
        "[A-Za-z0-9_-]{1,8}"
    }

    proptest! {
        #[test]
        fn parse_serialize_parse_is_identity(
            m in ident(),
            f in ident(),
            agg in prop::sample::select(Aggregation::ALL.to_vec()),
            w in 1u64..100_000,
            tags in prop::collection::btree_map(ident(), "[A-Za-z0-9_.:-]{1,8}", 0..4),
        ) {
            let q = QuerySpec { measurement: m, field: f, aggregation: agg, window_s: w, tag_filter: tags };
            let once = QuerySpec::parse(&q.to_string()).unwrap();
            prop_assert_eq!(&once, &q);
            let twice = QuerySpec::parse(&once.to_string()).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
