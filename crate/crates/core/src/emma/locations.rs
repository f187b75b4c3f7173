use super::EmmaError;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Hourly,
    Daily,
    Monthly,
    Yearly,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hourly => "hourly",
            Self::Daily => "daily",
            Self::Monthly => "monthly",
            Self::Yearly => "yearly",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hourly" => Ok(Self::Hourly),
            "daily" => Ok(Self::Daily),
            "monthly" => Ok(Self::Monthly),
            "yearly" => Ok(Self::Yearly),
            other => Err(format!("unknown granularity {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonIntensityRecord {
    pub country: String,
    pub ts: i64,
    pub granularity: Granularity,
    pub intensity: f64,
}

/// Records indexed by (country, granularity), each list sorted by ts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocationIndex {
    series: HashMap<(String, Granularity), Vec<(i64, f64)>>,
}

fn valid_country(c: &str) -> bool {
    c.len() == 2 && c.chars().all(|ch| ch.is_ascii_uppercase())
}

impl LocationIndex {
    pub fn from_records(
        records: impl IntoIterator<Item = CarbonIntensityRecord>,
    ) -> Result<Self, EmmaError> {
        let mut series: HashMap<(String, Granularity), Vec<(i64, f64)>> = HashMap::new();
        for r in records {
            if !valid_country(&r.country) {
                return Err(EmmaError::Validation(format!("bad country code {:?}", r.country)));
            }
            if !(r.intensity >= 0.0 && r.intensity.is_finite()) {
                return Err(EmmaError::Validation(format!("negative intensity {}", r.intensity)));
            }
            series
                .entry((r.country, r.granularity))
                .or_default()
                .push((r.ts, r.intensity));
        }
        for ((country, g), rows) in series.iter_mut() {
            rows.sort_by_key(|r| r.0);
            if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(EmmaError::DuplicateKey(format!("({country}, {}, {g})", w[0].0)));
            }
        }
        Ok(Self { series })
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn count(&self, country: &str, g: Granularity) -> usize {
        self.series.get(&(country.to_string(), g)).map_or(0, Vec::len)
    }

    pub fn countries(&self) -> Vec<String> {
        let mut c: Vec<String> = self.series.keys().map(|k| k.0.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Intensity of the latest record at or before `ts`.
    pub fn location_intensity(
        &self,
        country: &str,
        ts: i64,
        g: Granularity,
    ) -> Result<f64, EmmaError> {
        let rows = self
            .series
            .get(&(country.to_string(), g))
            .ok_or_else(|| EmmaError::UnknownCountry(format!("{country} ({g})")))?;
        let idx = rows.partition_point(|r| r.0 <= ts);
        if idx == 0 {
            return Err(EmmaError::OutOfRange {
                ts,
                earliest: rows[0].0,
            });
        }
        Ok(rows[idx - 1].1)
    }
}

pub fn parse_location_dataset<R: std::io::Read>(reader: R) -> Result<LocationIndex, EmmaError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| EmmaError::Malformed { line: 1, reason: e.to_string() })?;
    if header != vec!["country", "timestamp_ms", "granularity", "intensity_gco2eq_kwh"] {
        return Err(EmmaError::Malformed {
            line: 1,
            reason: format!(
                "expected header country,timestamp_ms,granularity,intensity_gco2eq_kwh, got {header:?}"
            ),
        });
    }
    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let bad = |reason: String| EmmaError::Malformed { line, reason };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let country = rec[0].to_string();
        if !valid_country(&country) {
            return Err(bad(format!("country {country:?} is not ISO-3166 alpha-2")));
        }
        let ts: i64 = rec[1].parse().map_err(|_| bad(format!("bad timestamp {:?}", &rec[1])))?;
        let granularity: Granularity = rec[2].parse().map_err(bad)?;
        let intensity: f64 = rec[3]
            .parse()
            .map_err(|_| bad(format!("bad intensity {:?}", &rec[3])))?;
        if !(intensity >= 0.0 && intensity.is_finite()) {
            return Err(bad(format!("intensity {intensity} must be non-negative")));
        }
        if !seen.insert((country.clone(), ts, granularity)) {
            return Err(EmmaError::DuplicateKey(format!(
                "({country}, {ts}, {granularity}) at line {line}"
            )));
        }
        records.push(CarbonIntensityRecord {
            country,
            ts,
            granularity,
            intensity,
        });
    }
    LocationIndex::from_records(records)
}

pub fn load_location_dataset(path: impl AsRef<Path>) -> Result<LocationIndex, EmmaError> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_location_dataset(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: i64 = 1_700_000_000_000;
    const HOUR: i64 = 3_600_000;

    fn hourly_at() -> String {
        let mut s = String::from("country,timestamp_ms,granularity,intensity_gco2eq_kwh\n");
        for h in 0..24 {
            s.push_str(&format!("AT,{},hourly,{}\n", T0 + h * HOUR, 100 + h));
        }
        s
    }

    #[test]
    fn twenty_four_rows() {
        let idx = parse_location_dataset(hourly_at().as_bytes()).unwrap();
        assert_eq!(idx.count("AT", Granularity::Hourly), 24);
    }

    #[test]
    fn duplicate_key() {
        let mut s = hourly_at();
        s.push_str(&format!("AT,{T0},hourly,5\n"));
        assert!(matches!(
            parse_location_dataset(s.as_bytes()),
            Err(EmmaError::DuplicateKey(_))
        ));
    }

    #[test]
    fn weekly_is_malformed_with_line() {
        let mut s = hourly_at();
        s.push_str(&format!("AT,{T0},weekly,5\n"));
        match parse_location_dataset(s.as_bytes()) {
            Err(EmmaError::Malformed { line, .. }) => assert_eq!(line, 26),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nearest_earlier() {
        let idx = parse_location_dataset(hourly_at().as_bytes()).unwrap();
        let g = Granularity::Hourly;
        assert_eq!(idx.location_intensity("AT", T0 + 3 * HOUR, g).unwrap(), 103.0);
        assert_eq!(idx.location_intensity("AT", T0 + 3 * HOUR + 1, g).unwrap(), 103.0);
        assert_eq!(idx.location_intensity("AT", T0 + 4 * HOUR - 1, g).unwrap(), 103.0);
        assert_eq!(idx.location_intensity("AT", T0 + 100 * HOUR, g).unwrap(), 123.0);
        assert!(matches!(
            idx.location_intensity("AT", T0 - 1, g),
            Err(EmmaError::OutOfRange { .. })
        ));
        assert!(matches!(
            idx.location_intensity("XX", T0, g),
            Err(EmmaError::UnknownCountry(_))
        ));
        assert!(matches!(
            idx.location_intensity("AT", T0, Granularity::Daily),
            Err(EmmaError::UnknownCountry(_))
        ));
    }
}
