//! Experiment configuration: a TOML file with `[run]`, `[fed]`, `[fullmeas]`
//! and `[newclient]` sections, overridable key by key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedrep::FedConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "fedrep")]
    FedRep,
    /// One head gradient step per round.
    #[serde(rename = "gdgd")]
    GdGd,
    /// Ten head gradient steps per round.
    #[serde(rename = "10gd")]
    TenGdGd,
    /// Per-client full-dimensional regression.
    #[serde(rename = "local")]
    Local,
    /// Single shared model.
    #[serde(rename = "global")]
    Global,
}

impl Algo {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algo::FedRep => "fedrep",
            Algo::GdGd => "gdgd",
            Algo::TenGdGd => "10gd",
            Algo::Local => "local",
            Algo::Global => "global",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub replicates: usize,
    /// Replicate `i` uses seed `seed + i * seed_stride`.
    pub seed_stride: u64,
    /// CSV path; the manifest goes next to it with a `.manifest.json` suffix.
    pub out: String,
    pub algo: Algo,
    /// Evaluate the convergence checks and fail the run if any fails.
    pub check_theorem: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 1,
            seed_stride: 1,
            out: "fedrep_lab.csv".into(),
            algo: Algo::FedRep,
            check_theorem: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FullMeasTarget {
    /// Product of Gaussian factors of rank `k`.
    Random,
    /// `M = I_n`, with `d = k = n`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FullMeasSection {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub rounds: usize,
    pub target: FullMeasTarget,
    /// Fixed step size; `None` uses the guaranteed step size times `eta_scale`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub eta_scale: f64,
}

impl Default for FullMeasSection {
    fn default() -> Self {
        Self {
            n: 30,
            d: 20,
            k: 3,
            rounds: 100,
            target: FullMeasTarget::Random,
            eta: None,
            eta_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewClientSection {
    pub m_new: usize,
    /// New clients evaluated per replicate.
    pub clients: usize,
    pub test_size: usize,
    pub noise_var: f64,
}

impl Default for NewClientSection {
    fn default() -> Self {
        Self {
            m_new: 2,
            clients: 50,
            test_size: crate::baselines::DEFAULT_TEST_SIZE,
            noise_var: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub fed: FedConfig,
    pub fullmeas: FullMeasSection,
    pub newclient: NewClientSection,
}

fn parse_value(raw: &str) -> toml::Value {
    // accept any TOML literal, otherwise treat the text as a bare string
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn leaf_paths(table: &toml::Table, prefix: &str, out: &mut Vec<(String, toml::Value)>) {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => leaf_paths(t, &path, out),
            other => out.push((path, other.clone())),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text; an empty string gives the defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        // apply leaves one at a time so errors name the offending key
        let mut leaves = Vec::new();
        leaf_paths(&raw, "", &mut leaves);
        let mut cfg = Self::default();
        for (path, value) in leaves {
            cfg.set_value(&path, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Overrides one dotted key, e.g. `fed.eta` = `"0.01"`.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        self.set_value(key, parse_value(raw))
    }

    fn set_value(&mut self, key: &str, value: toml::Value) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        let (section, field) = match parts.as_slice() {
            [s, f] => (*s, *f),
            _ => return Err(Error::config(key, "expected `section.field`")),
        };
        let mut doc = toml::Table::try_from(&*self).expect("config serializes");
        let Some(toml::Value::Table(sec)) = doc.get_mut(section) else {
            return Err(Error::config(key, format!("unknown section `{section}`")));
        };
        sec.insert(field.to_string(), value);
        *self = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.replicates == 0 {
            return Err(Error::config("run.replicates", "must be >= 1"));
        }
        self.fed.validate().map_err(|e| match e {
            Error::Config { key, reason } => Error::config(format!("fed.{key}"), reason),
            other => other,
        })?;
        let f = &self.fullmeas;
        if f.target == FullMeasTarget::Random && (f.k == 0 || f.k > f.n.min(f.d)) {
            return Err(Error::config("fullmeas.k", "need 1 <= k <= min(n, d)"));
        }
        if !(f.eta_scale > 0.0) {
            return Err(Error::config("fullmeas.eta_scale", "must be positive"));
        }
        if self.newclient.m_new == 0 {
            return Err(Error::config("newclient.m_new", "must be >= 1"));
        }
        if self.newclient.test_size == 0 {
            return Err(Error::config("newclient.test_size", "must be >= 1"));
        }
        Ok(())
    }

    /// Seed of replicate `i`.
    pub fn replicate_seed(&self, i: usize) -> u64 {
        self.run
            .seed
            .wrapping_add((i as u64).wrapping_mul(self.run.seed_stride))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_defaults() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.fed.n, c.fed.d, c.fed.k, c.fed.m), (100, 10, 2, 5));
        assert_eq!(c.fed.r, 0.1);
    }

    #[test]
    fn round_trip() {
        let mut c = ExperimentConfig::default();
        c.fed.eta = Some(0.125);
        c.run.algo = Algo::TenGdGd;
        c.fullmeas.target = FullMeasTarget::Identity;
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let d = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn flag_overrides_file() {
        let mut c = ExperimentConfig::from_toml("[fed]\neta = 0.5\nn = 40\n").unwrap();
        assert_eq!(c.fed.eta, Some(0.5));
        c.set("fed.eta", "0.01").unwrap();
        assert_eq!(c.fed.eta, Some(0.01));
        assert_eq!(c.fed.n, 40);
        c.set("fed.r", "1").unwrap();
        assert_eq!(c.fed.r, 1.0);
        c.set("fed.data_mode", "fixed").unwrap();
        assert_eq!(c.fed.data_mode, crate::fedrep::DataMode::Fixed);
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = ExperimentConfig::default();
        match c.set("fed.n", "abc") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "fed.n"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_toml("[fed]\nm = \"five\"\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "fed.m"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_toml("[fed]\nbogus = 1\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "fed.bogus"),
            other => panic!("{other:?}"),
        }
        match ExperimentConfig::from_toml("[nope]\nx = 1\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "nope.x"),
            other => panic!("{other:?}"),
        }
        assert!(c.set("fed", "1").is_err());
        // failed overrides leave the config untouched
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn seed_is_not_a_fed_key() {
        assert!(ExperimentConfig::from_toml("[fed]\nseed = 3\n").is_err());
        let c = ExperimentConfig::from_toml("[run]\nseed = 3\nseed_stride = 10\n").unwrap();
        assert_eq!(c.replicate_seed(2), 23);
    }
}
