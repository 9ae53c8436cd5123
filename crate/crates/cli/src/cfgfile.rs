use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use mmalign_core::{Error, Result};

/// Flat `key=value` config file. Lines starting with `#` and blank lines are
/// skipped. Keys use the same names as the long command-line flags; flags win
/// over file values.
#[derive(Debug, Default)]
pub struct FileCfg {
    values: HashMap<String, String>,
}

impl FileCfg {
    pub fn load(path: Option<&Path>) -> Result<FileCfg> {
        let Some(path) = path else {
            return Ok(FileCfg::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut values = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileCfg { values })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key {key}: cannot parse {raw:?}"))
            }),
        }
    }

    /// Flag value if present, else the file value, else the default.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Boolean switches: the flag can only turn the option on; the file can
    /// set it either way.
    pub fn pick_switch(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }

    /// Seed resolution order: flag, config file, MMALIGN_SEED, default.
    pub fn pick_seed(&self, flag: Option<u64>, default: u64) -> Result<u64> {
        if let Some(s) = flag {
            return Ok(s);
        }
        if let Some(s) = self.get::<u64>("seed")? {
            return Ok(s);
        }
        if let Ok(raw) = std::env::var("MMALIGN_SEED") {
            return raw
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("MMALIGN_SEED: cannot parse {raw:?}")));
        }
        Ok(default)
    }
}
