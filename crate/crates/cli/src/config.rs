//! Flat `key = value` configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{LabError, LabResult};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> LabResult<Config> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                LabError::Config(format!("line {}: expected `key = value`", i + 1))
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(LabError::Config(format!("line {}: empty key", i + 1)));
            }
            if values.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(LabError::Config(format!(
                    "line {}: duplicate key `{k}`",
                    i + 1
                )));
            }
        }
        Ok(Config { values })
    }

    pub fn read(path: &std::path::Path) -> LabResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Remove and parse `key`, or return the default.
    pub fn take<T: FromStr>(&mut self, key: &str, default: T) -> LabResult<T> {
        match self.values.remove(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| LabError::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn take_opt<T: FromStr>(&mut self, key: &str) -> LabResult<Option<T>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| LabError::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> LabResult<Vec<T>> {
        match self.values.remove(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        LabError::Config(format!("`{key}`: cannot parse `{}`", s.trim()))
                    })
                })
                .collect(),
        }
    }

    /// Fail on keys no experiment asked for.
    pub fn finish(self) -> LabResult<()> {
        if self.values.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.values.keys().map(|k| k.as_str()).collect();
            Err(LabError::Config(format!(
                "unknown keys: {}",
                keys.join(", ")
            )))
        }
    }
}

pub fn require(cond: bool, msg: impl Into<String>) -> LabResult<()> {
    if cond {
        Ok(())
    } else {
        Err(LabError::Config(msg.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let mut c = Config::parse("# header\nn = 64  # cells\nmesh = 4, 8,16\n\n").unwrap();
        assert_eq!(c.take::<usize>("n", 0).unwrap(), 64);
        assert_eq!(
            c.take_list::<usize>("mesh", vec![]).unwrap(),
            vec![4, 8, 16]
        );
        assert_eq!(c.take::<f64>("tol", 1e-10).unwrap(), 1e-10);
        c.finish().unwrap();
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Config::parse("n 64").is_err());
        assert!(Config::parse("n = 1\nn = 2").is_err());
        let mut c = Config::parse("n = x").unwrap();
        assert!(c.take::<usize>("n", 0).is_err());
        assert!(Config::parse("extra = 1").unwrap().finish().is_err());
    }
}
