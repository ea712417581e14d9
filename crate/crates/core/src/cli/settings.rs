use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Flat `key=value` settings. Blank lines and lines starting with `#` are
/// ignored; keys are long flag names such as `batch-size`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("config line {}: expected key=value, got '{line}'", n + 1)));
            };
            let key = key.trim().trim_start_matches("--").replace('_', "-");
            if file.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("config line {}: duplicate key '{key}'", n + 1)));
            }
        }
        Ok(Self {
            file,
            resolved: BTreeMap::new(),
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// The flag value if given, else the file entry, else `default`; the
    /// choice is recorded for the snapshot.
    pub fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = self.resolve_opt(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`resolve`](Self::resolve) without a default; records only a
    /// present value.
    pub fn resolve_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(text) => Some(
                    text.parse()
                        .map_err(|e| Error::Config(format!("config key '{key}': {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    /// Resolved settings as sorted `key=value` lines.
    pub fn snapshot(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn warn_unused(&self) {
        for key in self.file.keys().filter(|k| !self.resolved.contains_key(*k)) {
            log::warn!("config key '{key}' is not used by this command");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_default() {
        let mut s = Settings::parse("# run\nlr = 0.01\nbatch_size=8\n\n").unwrap();
        assert_eq!(s.resolve("lr", Some(0.5), 1e-3).unwrap(), 0.5);
        assert_eq!(s.resolve("batch-size", None, 16usize).unwrap(), 8);
        assert_eq!(s.resolve("iterations", None, 2000usize).unwrap(), 2000);
        assert_eq!(s.snapshot(), "batch-size=8\niterations=2000\nlr=0.5\n");
        let again = Settings::parse(&s.snapshot()).unwrap();
        assert_eq!(again.file.len(), 3);
    }

    #[test]
    fn malformed_files() {
        assert!(Settings::parse("lr 0.1").is_err());
        assert!(Settings::parse("lr=1\nlr=2").is_err());
        let mut s = Settings::parse("iterations=many").unwrap();
        assert!(matches!(s.resolve("iterations", None, 1usize), Err(Error::Config(_))));
    }
}
