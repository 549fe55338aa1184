//! `key = value` text files with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed key-value pairs; later duplicates are rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let key = k.trim().to_string();
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {key:?}", n + 1)));
            }
        }
        Ok(Self { map })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.map.insert(key.into(), value.to_string());
    }

    /// Parses `key` when present.
    pub fn parse_opt<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| Error::config(format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    /// Fails on any key outside `allowed`.
    pub fn ensure_known(&self, allowed: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::config(format!("unknown config key {k:?}"))),
            None => Ok(()),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// One `key = value` line per entry, sorted by key.
    pub fn render(&self) -> String {
        self.map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let kv = KeyValues::parse("# top\nsteps = 10 # inline\n\nlr=0.5\n").unwrap();
        assert_eq!(kv.parse_opt::<u32>("steps").unwrap(), Some(10));
        assert_eq!(kv.parse_opt::<f64>("lr").unwrap(), Some(0.5));
        assert_eq!(kv.parse_opt::<f64>("missing").unwrap(), None);
        assert_eq!(kv.render(), "lr = 0.5\nsteps = 10\n");
        assert_eq!(KeyValues::parse(&kv.render()).unwrap(), kv);
    }

    #[test]
    fn malformed_inputs_are_config_errors() {
        assert!(matches!(KeyValues::parse("novalue"), Err(Error::Config(_))));
        assert!(matches!(KeyValues::parse("a=1\na=2"), Err(Error::Config(_))));
        let kv = KeyValues::parse("steps = x").unwrap();
        assert!(kv.parse_opt::<u32>("steps").is_err());
        assert!(kv.ensure_known(&["lr"]).is_err());
    }
}
