//! `key = value` configuration files. Keys are long flag names; a value given
//! on the command line wins over the file, and the file wins over defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

/// Every key a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "action",
    "case",
    "dt",
    "f-nom",
    "fault",
    "fault-g",
    "fault-time",
    "fs",
    "hysteresis",
    "ilim",
    "l-load",
    "line-l",
    "line-r",
    "max-iterations",
    "min-confidence",
    "noise-i",
    "noise-v",
    "r-ground",
    "r-load",
    "reply-timeout",
    "seed",
    "sigma-i",
    "sigma-v",
    "source",
    "speed",
    "step",
    "t-end",
    "threshold",
    "v-ll",
    "window",
    "workers",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn normalise(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("config line {}: expected key = value, got '{}'", idx + 1, raw.trim());
            };
            let key = normalise(k);
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("config line {}: unknown key '{}'", idx + 1, k.trim());
            }
            let v = v.trim();
            match values.get_mut(&key) {
                // repeated action lines accumulate
                Some(prev) if key == "action" => *prev = format!("{prev};{v}"),
                _ => {
                    values.insert(key, v.to_string());
                }
            }
        }
        Ok(ConfigFile { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| anyhow::anyhow!("config key '{key}' = '{v}': {e}")),
        }
    }

    /// Flag value if given, else the file's value, else `default`.
    pub fn resolve<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Like `resolve` without a default.
    pub fn resolve_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.get(key)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_layers() {
        let c = ConfigFile::parse("# comment\nhysteresis = 3\nsigma_v=0.7  # inline\n\naction = AG=TripPhaseA\naction=BG=TripPhaseB\n").unwrap();
        assert_eq!(c.resolve::<usize>(None, "hysteresis", 5).unwrap(), 3);
        assert_eq!(c.resolve::<usize>(Some(9), "hysteresis", 5).unwrap(), 9);
        assert_eq!(c.resolve::<f64>(None, "sigma-v", 0.5).unwrap(), 0.7);
        assert_eq!(c.resolve::<f64>(None, "sigma-i", 0.05).unwrap(), 0.05);
        assert_eq!(c.raw("action"), Some("AG=TripPhaseA;BG=TripPhaseB"));
        assert_eq!(c.resolve_opt::<f64>(None, "ilim").unwrap(), None);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(ConfigFile::parse("nonsense\n").is_err());
        assert!(ConfigFile::parse("colour = red\n").is_err());
        let c = ConfigFile::parse("window = five\n").unwrap();
        assert!(c.resolve::<usize>(None, "window", 5).is_err());
    }
}
