//! Run configuration: a TOML document with one table per stage, plus
//! command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::construct::ConstructionConfig;
use crate::verify::VerifyConfig;
use crate::wave::DEFAULT_CUTOFF;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryOptions {
    pub samples: usize,
    pub seed: u64,
    /// Build T4 corners with the literal radii `1∓ρ`, which must be caught.
    pub inject_radius_bug: bool,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self { samples: 1000, seed: 7, inject_radius_bug: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveOptions {
    pub direction: [f64; 5],
    pub lambda: f64,
    pub epsilon: f64,
    pub frequency: u32,
    pub cutoff: f64,
    /// Lattice points per axis for the sampled segment deviation.
    pub lattice: usize,
}

impl Default for WaveOptions {
    fn default() -> Self {
        Self { direction: [1.0, 0.0, -1.0, 0.2, 0.1], lambda: 1.0 / 3.0, epsilon: 0.1, frequency: 64, cutoff: DEFAULT_CUTOFF, lattice: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub out: PathBuf,
    pub geometry: GeometryOptions,
    pub wave: WaveOptions,
    pub construction: ConstructionConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            geometry: GeometryOptions::default(),
            wave: WaveOptions::default(),
            construction: ConstructionConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("bad override: {0}")]
    Override(String),
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configs serialize")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&s)
    }

    /// Applies `--grid n,m`.
    pub fn set_grid(&mut self, spec: &str) -> Result<(), ConfigError> {
        let [n, m] = parse_pair::<usize>(spec)?;
        if n < 2 || m < 2 || m % 2 == 1 {
            return Err(ConfigError::Override(format!("grid needs n ≥ 2 and an even m ≥ 2, got {spec}")));
        }
        self.verify.n = n;
        self.verify.m = m;
        Ok(())
    }

    /// Applies `--z a,b`.
    pub fn set_z(&mut self, spec: &str) -> Result<(), ConfigError> {
        self.construction.z = parse_pair::<f64>(spec)?;
        Ok(())
    }

    /// Applies `--tolerance NAME=VALUE`.
    pub fn set_tolerance(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (name, value) = spec.split_once('=').ok_or_else(|| ConfigError::Override(format!("expected NAME=VALUE, got {spec}")))?;
        let value: f64 = value.trim().parse().map_err(|_| ConfigError::Override(format!("bad number in {spec}")))?;
        self.verify.tolerances.set(name.trim(), value).map_err(|e| ConfigError::Override(e.to_string()))
    }
}

fn parse_pair<T: std::str::FromStr>(spec: &str) -> Result<[T; 2], ConfigError> {
    let bad = || ConfigError::Override(format!("expected two comma-separated values, got {spec}"));
    let (a, b) = spec.split_once(',').ok_or_else(bad)?;
    Ok([a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_documents_and_overrides() {
        let mut c = RunConfig::from_toml("[construction]\nseed = 9\nrounds = 2\n").unwrap();
        assert_eq!(c.construction.seed, 9);
        assert_eq!(c.construction.epsilon, ConstructionConfig::default().epsilon);
        c.set_grid("32,16").unwrap();
        c.set_z("0.1,-0.3").unwrap();
        c.set_tolerance("weak_residual=1e-5").unwrap();
        assert_eq!((c.verify.n, c.verify.m), (32, 16));
        assert_eq!(c.construction.z, [0.1, -0.3]);
        assert_eq!(c.verify.tolerances.weak_residual, 1e-5);
        assert!(c.set_grid("32,15").is_err());
        assert!(c.set_tolerance("bogus=1").is_err());
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
