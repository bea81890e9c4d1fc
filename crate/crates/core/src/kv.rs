//! Flat `key = value` text files used for configs and synthetic specs.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear
//! once, except where a consumer asks for a repeated key.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct KvFile {
    path: PathBuf,
    entries: BTreeMap<String, Vec<(usize, String)>>,
}

impl KvFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            entries
                .entry(key.trim().to_string())
                .or_default()
                .push((i + 1, value.trim().to_string()));
        }
        Ok(KvFile {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    fn parse_err(&self, line: usize, message: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message,
        }
    }

    /// Removes and parses a single-valued key.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(values) = self.entries.remove(key) else {
            return Ok(None);
        };
        if values.len() > 1 {
            return Err(self.parse_err(values[1].0, format!("key `{key}` repeated")));
        }
        let (line, raw) = &values[0];
        raw.parse::<T>()
            .map(Some)
            .map_err(|e| self.parse_err(*line, format!("bad value for `{key}`: {e}")))
    }

    /// Removes a key that may repeat, returning its raw values in file order.
    pub fn take_all(&mut self, key: &str) -> Vec<(usize, String)> {
        self.entries.remove(key).unwrap_or_default()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Fails if any key was never taken.
    pub fn finish(self) -> Result<()> {
        if let Some((key, values)) = self.entries.into_iter().next() {
            return Err(Error::Config(format!(
                "{}:{}: unknown key `{key}`",
                self.path.display(),
                values[0].0
            )));
        }
        Ok(())
    }
}
