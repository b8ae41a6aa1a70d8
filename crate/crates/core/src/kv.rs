//! Line-based `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed `key = value` pairs. Typed getters mark keys as used so that
/// [`KvFile::finish`] can reject unknown ones.
#[derive(Clone, Debug, Default)]
pub struct KvFile {
    entries: BTreeMap<String, (String, usize)>,
    used: std::collections::BTreeSet<String>,
    origin: String,
}

impl KvFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            let k = k.trim().to_string();
            if k.is_empty() {
                return Err(Error::Config(format!("{origin}:{}: empty key", n + 1)));
            }
            if entries.insert(k.clone(), (v.trim().to_string(), n + 1)).is_some() {
                return Err(Error::Config(format!("{origin}:{}: duplicate key `{k}`", n + 1)));
            }
        }
        Ok(KvFile { entries, used: Default::default(), origin: origin.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        KvFile::parse(&text, &path.display().to_string())
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).map(|(v, _)| v.clone());
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                let line = self.entries[key].1;
                Error::Config(format!("{}:{line}: cannot parse `{key} = {v}`", self.origin))
            }),
        }
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{}: cannot parse list `{key} = {v}`", self.origin))),
        }
    }

    /// `a-b` or a single value `a` (meaning `a-a`).
    pub fn range(&mut self, key: &str, default: (usize, usize)) -> Result<(usize, usize)> {
        let Some(v) = self.raw(key) else { return Ok(default) };
        let bad = || Error::Config(format!("{}: `{key} = {v}` is not a range like 1-4", self.origin));
        let (a, b) = match v.split_once('-') {
            Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => {
                let x = v.parse().map_err(|_| bad())?;
                (x, x)
            }
        };
        if a > b {
            return Err(bad());
        }
        Ok((a, b))
    }

    /// Error listing every key no getter asked for.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<String> = self
            .entries
            .iter()
            .filter(|(k, _)| !self.used.contains(*k))
            .map(|(k, (_, line))| format!("`{k}` (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("{}: unknown keys {}", self.origin, unknown.join(", "))))
        }
    }
}
