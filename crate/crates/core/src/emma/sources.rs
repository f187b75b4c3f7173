use super::EmmaError;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergySource {
    Coal,
    Gas,
    Oil,
    Nuclear,
    Hydro,
    Wind,
    Solar,
    Biomass,
    Geothermal,
}

impl EnergySource {
    pub const ALL: [EnergySource; 9] = [
        Self::Coal,
        Self::Gas,
        Self::Oil,
        Self::Nuclear,
        Self::Hydro,
        Self::Wind,
        Self::Solar,
        Self::Biomass,
        Self::Geothermal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Coal => "coal",
            Self::Gas => "gas",
            Self::Oil => "oil",
            Self::Nuclear => "nuclear",
            Self::Hydro => "hydro",
            Self::Wind => "wind",
            Self::Solar => "solar",
            Self::Biomass => "biomass",
            Self::Geothermal => "geothermal",
        }
    }
}

impl fmt::Display for EnergySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnergySource {
    type Err = EmmaError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| EmmaError::UnknownSource(s.to_string()))
    }
}

/// Lifecycle carbon intensity per energy source, gCO2eq/kWh.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceTable {
    intensities: BTreeMap<EnergySource, f64>,
}

impl SourceTable {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (EnergySource, f64)>,
    ) -> Result<Self, EmmaError> {
        let mut intensities = BTreeMap::new();
        for (source, v) in entries {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EmmaError::Validation(format!(
                    "intensity for {source} must be a non-negative number, got {v}"
                )));
            }
            if intensities.insert(source, v).is_some() {
                return Err(EmmaError::Validation(format!("duplicate source {source}")));
            }
        }
        Ok(Self { intensities })
    }

    pub fn get(&self, source: EnergySource) -> Option<f64> {
        self.intensities.get(&source).copied()
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (EnergySource, f64)> + '_ {
        self.intensities.iter().map(|(k, v)| (*k, *v))
    }
}

pub fn parse_source_table<R: std::io::Read>(reader: R) -> Result<SourceTable, EmmaError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| EmmaError::Malformed { line: 1, reason: e.to_string() })?;
    if header != vec!["source", "intensity_gco2eq_kwh"] {
        return Err(EmmaError::Malformed {
            line: 1,
            reason: format!("expected header source,intensity_gco2eq_kwh, got {header:?}"),
        });
    }
    let mut entries = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| EmmaError::Malformed { line, reason: e.to_string() })?;
        let source: EnergySource = rec[0].parse()?;
        let v: f64 = rec[1].parse().map_err(|_| EmmaError::Malformed {
            line,
            reason: format!("intensity {:?} is not a number", &rec[1]),
        })?;
        entries.push((source, v));
    }
    let table = SourceTable::from_entries(entries)?;
    let missing: Vec<&str> = EnergySource::ALL
        .into_iter()
        .filter(|s| table.get(*s).is_none())
        .map(EnergySource::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(EmmaError::MissingSources(missing.join(",")));
    }
    Ok(table)
}

pub fn load_source_table(path: impl AsRef<Path>) -> Result<SourceTable, EmmaError> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_source_table(file)
}

pub const SHARE_TOLERANCE: f64 = 1e-6;

/// Fractions of energy drawn from each source.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyMix {
    pub shares: BTreeMap<String, f64>,
}

impl EnergyMix {
    pub fn new(shares: impl IntoIterator<Item = (EnergySource, f64)>) -> Self {
        Self {
            shares: shares
                .into_iter()
                .map(|(s, v)| (s.as_str().to_string(), v))
                .collect(),
        }
    }

    pub fn validated(&self) -> Result<Vec<(EnergySource, f64)>, EmmaError> {
        let mut out = Vec::with_capacity(self.shares.len());
        let mut sum = 0.0;
        for (name, &share) in &self.shares {
            let source: EnergySource = name.parse()?;
            if !(0.0..=1.0).contains(&share) {
                return Err(EmmaError::Validation(format!(
                    "share for {name} must be within [0,1], got {share}"
                )));
            }
            sum += share;
            out.push((source, share));
        }
        if (sum - 1.0).abs() > SHARE_TOLERANCE {
            return Err(EmmaError::Validation(format!("shares sum to {sum}, expected 1")));
        }
        Ok(out)
    }
}

/// Weighted mean of the per-source intensities.
pub fn mix_intensity(mix: &EnergyMix, table: &SourceTable) -> Result<f64, EmmaError> {
    let mut total = 0.0;
    for (source, share) in mix.validated()? {
        let v = table
            .get(source)
            .ok_or_else(|| EmmaError::UnknownSource(source.to_string()))?;
        total += share * v;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "source,intensity_gco2eq_kwh\ncoal,820\ngas,490\noil,650\nnuclear,12\nhydro,24\nwind,11\nsolar,45\nbiomass,230\ngeothermal,38\n";

    #[test]
    fn nine_rows() {
        let t = parse_source_table(FIXTURE.as_bytes()).unwrap();
        assert_eq!(t.len(), 9);
        assert_eq!(t.get(EnergySource::Coal), Some(820.0));
    }

    #[test]
    fn negative_rejected() {
        let bad = FIXTURE.replace("coal,820", "coal,-5");
        assert!(matches!(parse_source_table(bad.as_bytes()), Err(EmmaError::Validation(_))));
    }

    #[test]
    fn missing_wind_is_named() {
        let bad = FIXTURE.replace("wind,11\n", "");
        match parse_source_table(bad.as_bytes()) {
            Err(EmmaError::MissingSources(s)) => assert_eq!(s, "wind"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_source_and_header() {
        let bad = FIXTURE.replace("coal,820", "peat,1000");
        assert!(matches!(parse_source_table(bad.as_bytes()), Err(EmmaError::UnknownSource(_))));
        assert!(parse_source_table("src,val\ncoal,1\n".as_bytes()).is_err());
    }

    #[test]
    fn mix_examples() {
        let t = parse_source_table(FIXTURE.as_bytes()).unwrap();
        let m = EnergyMix::new([(EnergySource::Coal, 1.0)]);
        assert_eq!(mix_intensity(&m, &t).unwrap(), 820.0);
        let m = EnergyMix::new([(EnergySource::Coal, 0.5), (EnergySource::Wind, 0.5)]);
        assert_eq!(mix_intensity(&m, &t).unwrap(), 415.5);
        let m = EnergyMix::new([(EnergySource::Coal, 0.6)]);
        match mix_intensity(&m, &t) {
            Err(EmmaError::Validation(msg)) => assert!(msg.contains("0.6"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let mut m = EnergyMix::default();
        m.shares.insert("peat".into(), 1.0);
        assert!(matches!(mix_intensity(&m, &t), Err(EmmaError::UnknownSource(_))));
    }
}
