//! Flat key = value run configuration with command-line overrides.
//!
//! One assignment per line, `#` starts a comment, later assignments win.
//! Typed getters validate on access and name the offending key, so a bad
//! config fails before any computation starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fosr_core::kernels::Domain;
use fosr_core::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::invalid(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::invalid(format!(
                    "config line {}: expected key = value, got '{raw}'",
                    idx + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(Error::invalid(format!("config line {}: empty key", idx + 1)));
            }
            map.insert(key.to_string(), value.to_string());
        }
        Ok(Config { map })
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Config {
            map: pairs.iter().map(|&(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    /// Apply `key=value` strings from the command line, overriding the file.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(Error::invalid(format!(
                    "override '{item}' must look like key=value"
                )));
            };
            self.map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::invalid(format!("config key '{key}' is required")))
    }

    fn parse_one<T: FromStr>(&self, key: &str, raw: &str) -> Result<T> {
        raw.parse::<T>().map_err(|_| {
            Error::invalid(format!(
                "config key '{key}': cannot parse '{raw}' as {}",
                std::any::type_name::<T>()
            ))
        })
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => Ok(Some(self.parse_one(key, raw)?)),
        }
    }

    pub fn require_parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        self.parse_one(key, raw)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.get_parsed::<f64>(key)?.unwrap_or(default))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_parsed::<usize>(key)?.unwrap_or(default))
    }

    /// Comma-separated list of T.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => {
                let mut out = Vec::new();
                for part in raw.split(',') {
                    out.push(self.parse_one::<T>(key, part.trim())?);
                }
                Ok(Some(out))
            }
        }
    }

    pub fn require_list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.require(key)?;
        Ok(self.list(key)?.expect("key checked above"))
    }

    pub fn domain(&self) -> Result<Domain> {
        let raw = self.require("domain")?;
        Domain::from_str(raw)
            .map_err(|_| Error::invalid(format!("config key 'domain': unknown domain '{raw}'")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf> {
        Ok(PathBuf::from(self.require(key)?))
    }
}
