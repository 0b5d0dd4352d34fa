//! Versioned JSON document holding a hand description and its coupling.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hand::{CouplingTopology, Hand, HandError, HandParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed hand document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {0}")]
    Version(u32),
    #[error(transparent)]
    Hand(#[from] HandError),
}

impl ConfigError {
    pub fn is_io(&self) -> bool {
        matches!(self, ConfigError::Io { .. })
    }
}

/// Topology as stored in a document: a named preset ("12", "9", "5", ...) or an explicit map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    Preset(String),
    Explicit(CouplingTopology),
}

impl TopologySpec {
    pub fn resolve(&self, n_fingers: usize) -> Result<CouplingTopology, HandError> {
        match self {
            TopologySpec::Explicit(t) => Ok(t.clone()),
            TopologySpec::Preset(name) => CouplingTopology::preset(name, n_fingers).ok_or_else(|| {
                HandError::InvalidTopology(format!("unknown preset {name:?} for {n_fingers} fingers"))
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandConfig {
    pub schema_version: u32,
    pub params: HandParams,
    pub topology: TopologySpec,
}

impl Default for HandConfig {
    fn default() -> Self {
        let params = HandParams::reference();
        let topology = TopologySpec::Explicit(CouplingTopology::center_coupled(params.n_fingers));
        Self { schema_version: SCHEMA_VERSION, params, topology }
    }
}

impl HandConfig {
    pub fn new(params: HandParams, topology: CouplingTopology) -> Self {
        Self { schema_version: SCHEMA_VERSION, params, topology: TopologySpec::Explicit(topology) }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: HandConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Version(cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn topology(&self) -> Result<CouplingTopology, HandError> {
        self.topology.resolve(self.params.n_fingers)
    }

    /// Validates everything and builds the hand.
    pub fn build(&self) -> Result<Hand, ConfigError> {
        Ok(Hand::new(self.params.clone(), self.topology()?)?)
    }

    /// Same document with the topology written out explicitly.
    pub fn resolved(&self) -> Result<Self, HandError> {
        Ok(Self::new(self.params.clone(), self.topology()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_presets() {
        let cfg = HandConfig::default();
        let back = HandConfig::from_json(&cfg.to_json_pretty()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.build().unwrap().n_reduced(), 9);

        let mut v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        v["topology"] = serde_json::json!("5");
        let preset: HandConfig = serde_json::from_value(v.clone()).unwrap();
        assert_eq!(preset.build().unwrap().n_reduced(), 5);
        assert_eq!(preset.resolved().unwrap().topology().unwrap().n_reduced, 5);

        v["schema_version"] = serde_json::json!(99);
        assert!(matches!(
            HandConfig::from_json(&v.to_string()),
            Err(ConfigError::Version(99))
        ));
    }

    #[test]
    fn field_names_are_stable() {
        let v = serde_json::to_value(HandConfig::default()).unwrap();
        for key in [
            "n_fingers",
            "coupling_link_length",
            "fingertip_angle",
            "actuation_height",
            "fingers",
            "fingertip_offset",
        ] {
            assert!(v["params"].get(key).is_some(), "{key}");
        }
        for key in ["base_radius", "ee_radius", "link_length", "stroke", "rail_angles"] {
            assert!(v["params"]["fingers"][0].get(key).is_some(), "{key}");
        }
        for key in ["n_reduced", "link_to_actuator", "actuator_to_links"] {
            assert!(v["topology"].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(HandConfig::load("/nonexistent/hand.json").unwrap_err().is_io());
    }
}
