//! Layered settings: a flat `key=value` config file overridden by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

use crate::error::CliError;

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

/// `key=value` lines; blank lines and `#` comments are ignored.
pub fn parse_config(text: &str, context: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{context}:{}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    /// Merge `--config` (if any) with flags given on the command line. Config
    /// keys must name a flag of `cmd`.
    pub fn resolve(cmd: &Command, matches: &ArgMatches) -> Result<Self, CliError> {
        let known: Vec<String> = cmd
            .get_arguments()
            .filter_map(|a| a.get_long().map(str::to_string))
            .collect();
        let mut values = BTreeMap::new();
        if let Some(path) = matches.get_one::<String>("config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
            for (k, v) in parse_config(&text, path)? {
                if k == "config" || !known.contains(&k) {
                    return Err(CliError::Usage(format!(
                        "{path}: unknown key `{k}` for `{}`",
                        cmd.get_name()
                    )));
                }
                values.insert(k, v);
            }
        }
        for arg in cmd.get_arguments() {
            let id = arg.get_id().as_str();
            if matches.value_source(id) != Some(ValueSource::CommandLine) {
                continue;
            }
            let key = arg.get_long().unwrap_or(id).to_string();
            let raw: Vec<String> = matches
                .get_raw(id)
                .map(|vals| vals.map(|v| v.to_string_lossy().into_owned()).collect())
                .unwrap_or_default();
            let value = if raw.is_empty() { "true".to_string() } else { raw.join(",") };
            values.insert(key, value);
        }
        Ok(Settings { values })
    }

    #[cfg(test)]
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        Settings {
            values: pairs.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Usage(format!("invalid value `{v}` for `{key}`: {e}")))
            })
            .transpose()
    }

    pub fn or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::Usage(format!("missing required setting `{key}`")))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.require::<String>(key).map(PathBuf::from)
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        self.or(key, false)
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse()
                        .map_err(|e| CliError::Usage(format!("invalid item `{s}` in `{key}`: {e}")))
                })
                .collect(),
        }
    }
}
