//! Flat `key = value` configuration files with `#` comments.

use crate::error::{Error, Result};
use crate::flows::{FlowKind, FlowSpec, VeVariant};
use crate::point::Point;
use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parses `key` if present.
    pub fn parse_opt<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("{key} = '{v}': {e}"))))
            .transpose()
    }

    pub fn parse_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    /// Comma-separated list of numbers.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|v| parse_list(key, v)).transpose()
    }

    /// Semicolon-separated points, each a comma-separated list.
    pub fn points(&self, key: &str) -> Result<Option<Vec<Point>>> {
        self.get(key)
            .map(|v| {
                v.split(';')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| Point::new(parse_list(key, s)?))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{key}: '{}' is not a number ({e})", s.trim())))
        })
        .collect()
}

impl FlowSpec {
    /// Reads `kind`, `D`, `T`, `s`, `d` and `ve_variant`.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let kind: FlowKind = cfg
            .get("kind")
            .ok_or_else(|| Error::Config("missing flow 'kind'".into()))?
            .parse()?;
        let dim = cfg.parse_or("D", 2usize)?;
        let mut spec = FlowSpec::new(kind, dim)?
            .with_horizon(cfg.parse_or("T", 1.0)?)?
            .with_scale(cfg.parse_or("s", 1.0)?)?
            .with_aug_dim(cfg.parse_or("d", 1u32)?)?;
        if let Some(v) = cfg.get("ve_variant") {
            spec = spec.with_ve_variant(v.parse::<VeVariant>()?);
        }
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut c = KvConfig::default();
        c.set("kind", self.kind().name());
        c.set("D", self.dim().to_string());
        c.set("T", self.horizon().to_string());
        c.set("s", self.scale().to_string());
        c.set("d", self.aug_dim().to_string());
        c.set("ve_variant", self.ve_variant().name());
        c
    }
}
