//! Flat `key = value` configuration files layered under command-line flags.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! key = value
//! ```
//!
//! Keys are the long option names of the subcommand (`samples`, `fine-depth`,
//! `full-scale`, ...). Unknown and repeated keys are rejected. A flag given on
//! the command line wins over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Environment variable holding the default master seed.
pub const SEED_ENV: &str = "ADAPTIVE_SDE_SEED";

/// Keys every subcommand accepts.
pub const COMMON_KEYS: [&str; 6] = ["seed", "samples", "out", "check", "threads", "full-scale"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected 'key = value'", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Usage(format!("config line {}: key '{k}' repeated", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Rejects keys outside the common set and `extra`.
    pub fn validate(&self, command: &str, extra: &[&str]) -> Result<(), CliError> {
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .map(String::as_str)
            .filter(|k| !COMMON_KEYS.contains(k) && !extra.contains(k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let mut accepted: Vec<&str> = COMMON_KEYS.iter().chain(extra).copied().collect();
            accepted.sort_unstable();
            Err(CliError::Usage(format!(
                "unknown config key(s) for '{command}': {} (accepted: {})",
                unknown.join(", "),
                accepted.join(", ")
            )))
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// The command-line value if present, else the parsed file value.
    pub fn pick<T: FromStr>(&self, cli: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if cli.is_some() {
            return Ok(cli);
        }
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|_| CliError::Usage(format!("config key '{key}': cannot parse '{v}'"))))
            .transpose()
    }

    /// A switch set on the command line or to `true` in the file.
    pub fn flag(&self, cli: bool, key: &str) -> Result<bool, CliError> {
        if cli {
            return Ok(true);
        }
        match self.raw(key) {
            None | Some("false") => Ok(false),
            Some("true") => Ok(true),
            Some(v) => Err(CliError::Usage(format!("config key '{key}': expected true or false, got '{v}'"))),
        }
    }
}

/// Decimal or `0x`-prefixed hexadecimal.
pub fn parse_seed(s: &str) -> Result<u64, CliError> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| CliError::Usage(format!("invalid seed '{s}'")))
}

/// A number, `a/b`, or `inf`.
pub fn parse_number(s: &str) -> Result<f64, CliError> {
    let s = s.trim();
    let bad = || CliError::Usage(format!("invalid number '{s}'"));
    let v = match s {
        "inf" | "infinity" => f64::INFINITY,
        _ => match s.split_once('/') {
            Some((a, b)) => a.trim().parse::<f64>().map_err(|_| bad())? / b.trim().parse::<f64>().map_err(|_| bad())?,
            None => s.parse().map_err(|_| bad())?,
        },
    };
    if v.is_nan() {
        return Err(bad());
    }
    Ok(v)
}

/// Comma-separated numbers.
pub fn parse_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(parse_number).collect()
}

/// `a..b` (inclusive) or a comma-separated list of integers.
pub fn parse_depths(s: &str) -> Result<Vec<u32>, CliError> {
    let bad = || CliError::Usage(format!("invalid depth list '{s}'"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| bad())?;
        let b: u32 = b.trim().parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect()
}

/// `key=value` pairs separated by commas.
pub fn parse_params(s: &str) -> Result<Vec<(String, f64)>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("expected key=value in model parameters, got '{item}'")))?;
            Ok((k.trim().to_string(), parse_number(v)?))
        })
        .collect()
}
