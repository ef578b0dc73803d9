//! Flat `key = value` configuration files.
//!
//! One entry per line. Blank lines and lines whose first non-blank
//! character is `#` are skipped. Keys are the long flag names without the
//! leading dashes (`obs`, `two-sided`, `N`); the value is the rest of the
//! line with surrounding whitespace and one pair of enclosing double quotes
//! removed. Flags given on the command line take precedence.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::CliError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    source: String,
    values: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

fn valid_key(key: &str) -> bool {
    let mut chars = key.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl ConfigFile {
    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!(
                    "{source}:{line_no}: expected `key = value`, got {line:?}"
                )));
            };
            let key = key.trim();
            if !valid_key(key) {
                return Err(CliError::Config(format!("{source}:{line_no}: invalid key {key:?}")));
            }
            let mut value = value.trim();
            if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
                value = &value[1..value.len() - 1];
            }
            if value.is_empty() {
                return Err(CliError::Config(format!("{source}:{line_no}: key {key:?} has no value")));
            }
            if let Some((first, _)) = values.insert(key.to_string(), (line_no, value.to_string())) {
                return Err(CliError::Config(format!(
                    "{source}:{line_no}: key {key:?} already set on line {first}"
                )));
            }
        }
        Ok(Self {
            source: source.to_string(),
            values,
            used: RefCell::default(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.used.borrow_mut().insert(key.to_string());
        self.values.get(key)
    }

    /// The flag value when present, otherwise the file's value for `key`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let file = self.raw(key);
        if flag.is_some() {
            return Ok(flag);
        }
        match file {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|e| {
                CliError::Config(format!("{}:{line}: bad value {v:?} for {key}: {e}", self.source))
            }),
        }
    }

    /// A switch is on when the flag is given or the file sets it to `true`.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }

    /// Fails on keys no command option asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        let unknown: Vec<String> = self
            .values
            .iter()
            .filter(|(k, _)| !used.contains(*k))
            .map(|(k, (line, _))| format!("{k} (line {line})"))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "{}: unknown keys for this command: {}",
                self.source,
                unknown.join(", ")
            )))
        }
    }
}

/// Comma-separated list, blanks around items allowed.
pub fn parse_list<T>(text: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| CliError::Config(format!("bad {what} entry {s:?}: {e}")))
        })
        .collect()
}
