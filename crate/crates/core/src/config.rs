//! Plain-text `key = value` configuration files.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Default)]
pub struct KvConfig {
    entries: BTreeMap<String, (usize, String)>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config { line, msg: format!("expected `key = value`, got `{content}`") })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config { line, msg: "empty key".into() });
            }
            if entries.insert(key.to_string(), (line, value.trim().to_string())).is_some() {
                return Err(Error::Config { line, msg: format!("duplicate key `{key}`") });
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn count(&self, key: &str) -> Result<Option<usize>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| Error::Config {
                line: *line,
                msg: format!("`{key}` must be a non-negative integer, got `{v}`"),
            }),
        }
    }

    pub fn scalar<T: Scalar>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => T::parse_decimal(v).map(Some).ok_or_else(|| Error::Config {
                line: *line,
                msg: format!("`{key}` must be a decimal number, got `{v}`"),
            }),
        }
    }
}
