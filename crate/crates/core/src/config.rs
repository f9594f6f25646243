//! Flat `key=value` configuration files.
//!
//! Keys carry a section prefix (`model.`, `decode.`, `train.`). Blank lines
//! and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {k}", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Parsed value of `key`, or `default` when absent.
    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("{key}={v}: {e}"))),
        }
    }

    /// Comma separated list.
    pub fn get_list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) if v.is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| Error::Config(format!("{key}={v}: {e}")))
                })
                .collect(),
        }
    }

    /// Keys not in `known`; used to reject typos.
    pub fn unknown_keys<'a>(&'a self, known: &[&str]) -> Vec<&'a str> {
        self.entries
            .keys()
            .map(String::as_str)
            .filter(|k| !known.contains(k))
            .collect()
    }

    /// Entries whose key starts with `prefix`, prefix removed.
    pub fn section(&self, prefix: &str) -> KvConfig {
        let entries = self
            .entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
            .collect();
        Self { entries }
    }

    pub fn merge_prefixed(&mut self, prefix: &str, other: &KvConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(format!("{prefix}{k}"), v.clone());
        }
    }

    /// Sorted `key=value` lines; deterministic for equal configs.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_sections() {
        let c = KvConfig::parse("# hi\nmodel.d_model = 64\n\ntrain.lr_max=0.01\nmodel.pattern=0,1,2\n")
            .unwrap();
        assert_eq!(c.get_or("model.d_model", 0usize).unwrap(), 64);
        assert_eq!(c.get_or("missing", 3usize).unwrap(), 3);
        assert_eq!(
            c.get_list_or::<usize>("model.pattern", vec![]).unwrap(),
            vec![0, 1, 2]
        );
        let m = c.section("model.");
        assert_eq!(m.raw("d_model"), Some("64"));
        assert_eq!(KvConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_garbage() {
        assert!(KvConfig::parse("novalue").is_err());
        assert!(KvConfig::parse("a=1\na=2").is_err());
        let c = KvConfig::parse("a=x").unwrap();
        assert!(c.get_or("a", 1u32).is_err());
    }
}
