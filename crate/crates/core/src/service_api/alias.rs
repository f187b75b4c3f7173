//! Renaming and description redaction for everything exposed to decision
//! systems. Values, ranges, units and queries pass through untouched.

use super::spec::{ConfigError, SettingSpec, SloSpec};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasEntry {
    pub id: String,
    #[serde(default)]
    pub description: String,
}

/// internal name → public id and redacted description.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AliasMap {
    pub entries: BTreeMap<String, AliasEntry>,
}

impl AliasMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, internal: &str, public: &str, description: &str) -> Self {
        self.entries.insert(
            internal.to_string(),
            AliasEntry {
                id: public.to_string(),
                description: description.to_string(),
            },
        );
        self
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        for (internal, e) in &self.entries {
            if e.id.is_empty() {
                return Err(ConfigError::Alias(format!("empty public id for {internal:?}")));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(ConfigError::Alias(format!("public id {:?} used twice", e.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let map: AliasMap = serde_json::from_str(&text)?;
        map.validate()?;
        Ok(map)
    }
}

pub trait Aliasable {
    fn id(&self) -> &str;
    fn rename(&mut self, id: &str, description: &str);
}

impl Aliasable for SloSpec {
    fn id(&self) -> &str {
        &self.id
    }
    fn rename(&mut self, id: &str, description: &str) {
        self.id = id.to_string();
        self.description = description.to_string();
    }
}

impl Aliasable for SettingSpec {
    fn id(&self) -> &str {
        &self.id
    }
    fn rename(&mut self, id: &str, description: &str) {
        self.id = id.to_string();
        self.description = description.to_string();
    }
}

/// Renames every mapped spec; unmapped specs pass through. A public id that
/// collides with an unmapped spec's id is rejected.
pub fn apply_alias<T: Aliasable + Clone>(specs: &[T], map: &AliasMap) -> Result<Vec<T>, ConfigError> {
    map.validate()?;
    let unmapped: HashSet<&str> = specs
        .iter()
        .map(Aliasable::id)
        .filter(|id| !map.entries.contains_key(*id))
        .collect();
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut s = spec.clone();
        if let Some(e) = map.entries.get(spec.id()) {
            if unmapped.contains(e.id.as_str()) {
                return Err(ConfigError::Alias(format!(
                    "alias {:?} for {:?} collides with an existing id",
                    e.id,
                    spec.id()
                )));
            }
            s.rename(&e.id, &e.description);
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::QuerySpec;

    fn slo(id: &str) -> SloSpec {
        SloSpec {
            id: id.into(),
            description: format!("{id} description"),
            query: QuerySpec::parse("mean(fps.value, 300s)").unwrap(),
            unit: "fps".into(),
            s_min: 24.0,
            s_max: 30.0,
        }
    }

    #[test]
    fn fps_becomes_service_slo() {
        let map = AliasMap::new().with("FPS", "ServiceSLO", "A service level objective");
        let out = apply_alias(&[slo("FPS")], &map).unwrap();
        assert_eq!(out[0].id, "ServiceSLO");
        assert_eq!(out[0].description, "A service level objective");
        assert_eq!((out[0].s_min, out[0].s_max), (24.0, 30.0));
        assert_eq!(out[0].query, slo("FPS").query);
        assert_eq!(out[0].unit, "fps");
    }

    #[test]
    fn empty_map_is_identity() {
        let specs = vec![slo("FPS"), slo("Power")];
        assert_eq!(apply_alias(&specs, &AliasMap::new()).unwrap(), specs);
    }

    #[test]
    fn collision_with_unmapped() {
        let map = AliasMap::new().with("FPS", "A", "");
        assert!(matches!(
            apply_alias(&[slo("FPS"), slo("A")], &map),
            Err(ConfigError::Alias(_))
        ));
        // swapping two names is a bijection and allowed
        let swap = AliasMap::new().with("FPS", "A", "").with("A", "FPS", "");
        let out = apply_alias(&[slo("FPS"), slo("A")], &swap).unwrap();
        assert_eq!(out[0].id, "A");
        assert_eq!(out[1].id, "FPS");
    }

    #[test]
    fn non_injective_map_rejected() {
        let map = AliasMap::new().with("FPS", "X", "").with("Power", "X", "");
        assert!(map.validate().is_err());
    }
}
