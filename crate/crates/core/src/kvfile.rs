//! Flat `key = value` config files. `#` starts a comment; blank lines are ignored.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parsed entries plus the file name, used to report errors against a line.
#[derive(Debug, Clone)]
pub struct KvFile {
    path: PathBuf,
    entries: Vec<Entry>,
}

impl KvFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(path, i + 1, format!("expected key = value, found {line:?}")))?;
            let key = k.trim().to_string();
            if entries.iter().any(|e| e.key == key) {
                return Err(Error::format(path, i + 1, format!("duplicate key {key:?}")));
            }
            entries.push(Entry {
                key,
                value: v.trim().to_string(),
                line: i + 1,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Rejects any key not in `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        let known: BTreeSet<&str> = known.iter().copied().collect();
        for e in &self.entries {
            if !known.contains(e.key.as_str()) {
                return Err(Error::format(
                    &self.path,
                    e.line,
                    format!("unknown config key {:?}", e.key),
                ));
            }
        }
        Ok(())
    }

    /// Parses `key` into `slot` when present.
    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(e) = self.entries.iter().find(|e| e.key == key) {
            *slot = e
                .value
                .parse()
                .map_err(|err| Error::format(&self.path, e.line, format!("bad value for {key}: {err}")))?;
        }
        Ok(())
    }

    /// Parses a comma-separated list for `key` when present.
    pub fn set_list<T: FromStr>(&self, key: &str, slot: &mut Vec<T>) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(e) = self.entries.iter().find(|e| e.key == key) {
            *slot = e
                .value
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map_err(|err| Error::format(&self.path, e.line, format!("bad value for {key}: {err}")))?;
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown() {
        let kv = KvFile::parse("a = 1\n# c\nb=2.5 # trailing\n", Path::new("c.cfg")).unwrap();
        kv.check_keys(&["a", "b"]).unwrap();
        let mut a = 0u32;
        let mut b = 0.0f64;
        kv.set("a", &mut a).unwrap();
        kv.set("b", &mut b).unwrap();
        assert_eq!((a, b), (1, 2.5));
        let err = kv.check_keys(&["a"]).unwrap_err();
        assert!(err.to_string().contains("c.cfg:3"));
    }

    #[test]
    fn duplicate_and_malformed() {
        assert!(KvFile::parse("a=1\na=2\n", Path::new("x")).is_err());
        assert!(KvFile::parse("just words\n", Path::new("x")).is_err());
        let kv = KvFile::parse("a=zz\n", Path::new("x")).unwrap();
        let mut a = 0u32;
        assert!(kv.set("a", &mut a).is_err());
    }
}
