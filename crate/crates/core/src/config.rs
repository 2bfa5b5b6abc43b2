//! Flat `key = value` configuration files with dotted keys.
//!
//! ```text
//! # comment
//! model.variant = td
//! train.lr = 1e-4
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Config::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_pair(line).ok_or_else(|| Error::Parse {
                path: origin.into(),
                line: i + 1,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.entries.insert(k, v);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair).ok_or_else(|| Error::Invalid(format!("override {pair:?} is not key=value")))?;
        self.entries.insert(k, v);
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    /// Sets `key` only if it is not already present.
    pub fn set_default(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.entry(key.to_owned()).or_insert_with(|| value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::Invalid(format!("config key {key}: cannot parse {v:?}: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        let Some(v) = self.entries.get(key) else { return Ok(None) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| Error::Invalid(format!("config key {key}: cannot parse {s:?}: {e}"))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Errors on any key outside `known` (exact names, or prefixes ending in `.`).
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            let ok = known.iter().any(|p| if p.ends_with('.') { k.starts_with(p) } else { k == p });
            if !ok {
                return Err(Error::Invalid(format!("unknown config key {k:?}")));
            }
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }
}

fn split_pair(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    if k.is_empty() || k.contains(char::is_whitespace) {
        return None;
    }
    Some((k.to_owned(), v.trim().to_owned()))
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
