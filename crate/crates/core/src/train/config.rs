//! Plain-text `key = value` configuration files.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed `key = value` pairs; `#` starts a comment. Every key must be
/// consumed by the reader, so typos surface as errors.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", n + 1)))?;
            let key = k.trim().to_string();
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::invalid(format!("line {}: duplicate key {key}", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    /// Removes and parses `key`, leaving `default` in place when absent.
    pub fn take<V: FromStr>(&mut self, key: &str, default: V) -> Result<V> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::invalid(format!("{key}: cannot parse {v:?}"))),
        }
    }

    pub fn take_list<V: FromStr>(&mut self, key: &str, default: Vec<V>) -> Result<Vec<V>> {
        match self.entries.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::invalid(format!("{key}: cannot parse {s:?}"))))
                .collect(),
        }
    }

    /// A view that prepends `prefix` to every key it reads.
    pub fn section<'a>(&'a mut self, prefix: &'a str) -> Section<'a> {
        Section { kv: self, prefix }
    }

    /// Errors if any key was never taken.
    pub fn finish(self) -> Result<()> {
        match self.entries.keys().next() {
            Some(k) => Err(Error::invalid(format!("unknown configuration key {k}"))),
            None => Ok(()),
        }
    }
}

/// Keys read under a common `prefix.` namespace.
pub struct Section<'a> {
    kv: &'a mut KeyValues,
    prefix: &'a str,
}

impl Section<'_> {
    fn key(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    pub fn take<V: FromStr>(&mut self, key: &str, default: V) -> Result<V> {
        let k = self.key(key);
        self.kv.take(&k, default)
    }

    pub fn take_list<V: FromStr>(&mut self, key: &str, default: Vec<V>) -> Result<Vec<V>> {
        let k = self.key(key);
        self.kv.take_list(&k, default)
    }
}
