//! Flat key-value configuration files.
//!
//! The grammar is one `key = value` pair per line; `#` starts a comment and
//! blank lines are ignored. Keys are `snake_case` identifiers, values are
//! taken verbatim (trimmed). Duplicate and unknown keys are errors so typos
//! surface instead of silently applying defaults.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Parsed key-value file with consumption tracking for unknown-key checks.
#[derive(Debug, Clone)]
pub struct KeyValueFile {
    entries: BTreeMap<String, String>,
    consumed: std::cell::RefCell<Vec<String>>,
    source: String,
}

impl KeyValueFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "{source}:{}: expected `key = value`, got {line:?}",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!(
                    "{source}:{}: empty key",
                    lineno + 1
                )));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!(
                    "{source}:{}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(KeyValueFile {
            entries,
            consumed: std::cell::RefCell::new(Vec::new()),
            source: source.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.consumed.borrow_mut().push(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| {
            Error::Config(format!("{}: missing required key {key:?}", self.source))
        })
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "{}: key {key:?} has unparseable value {raw:?}",
                    self.source
                ))
            }),
        }
    }

    pub fn require_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse::<T>().map_err(|_| {
            Error::Config(format!(
                "{}: key {key:?} has unparseable value {raw:?}",
                self.source
            ))
        })
    }

    /// Error out if the file contains keys no consumer asked about.
    pub fn reject_unknown(&self) -> Result<()> {
        let consumed = self.consumed.borrow();
        let unknown: Vec<&String> = self
            .entries
            .keys()
            .filter(|k| !consumed.iter().any(|c| c == *k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{}: unknown key(s): {}",
                self.source,
                unknown
                    .iter()
                    .map(|k| format!("{k:?}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_comments_and_blanks() {
        let text = "# comment\n\nfoo = bar\n n = 42 \npath = a = b\n";
        let kv = KeyValueFile::parse(text, "test").unwrap();
        assert_eq!(kv.get("foo"), Some("bar"));
        assert_eq!(kv.require_parsed::<u32>("n").unwrap(), 42);
        // Only the first `=` splits; the rest is value.
        assert_eq!(kv.get("path"), Some("a = b"));
        kv.reject_unknown().unwrap();
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(KeyValueFile::parse("a = 1\na = 2\n", "t").is_err());
        assert!(KeyValueFile::parse("just some words\n", "t").is_err());
        assert!(KeyValueFile::parse("= value\n", "t").is_err());
    }

    #[test]
    fn flags_unknown_keys() {
        let kv = KeyValueFile::parse("known = 1\nmystery = 2\n", "t").unwrap();
        let _ = kv.get("known");
        let err = kv.reject_unknown().unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn missing_required_key_names_it() {
        let kv = KeyValueFile::parse("", "t").unwrap();
        let err = kv.require("base_cycle").unwrap_err();
        assert!(err.to_string().contains("base_cycle"));
    }
}
