//! Flat `key = value` experiment files. `#` starts a comment; keys are unique.
//!
//! ```text
//! kind = certify
//! model = triad
//! kernel = e3
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::LabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    Check,
    Spectrum,
    Certify,
    Simulate,
    Coercivity,
    ExitTimes,
    Lyapunov,
    Stationary,
}

impl Kind {
    pub const ALL: [Kind; 8] = [Kind::Check, Kind::Spectrum, Kind::Certify, Kind::Simulate, Kind::Coercivity, Kind::ExitTimes, Kind::Lyapunov, Kind::Stationary];

    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Check => "check",
            Kind::Spectrum => "spectrum",
            Kind::Certify => "certify",
            Kind::Simulate => "simulate",
            Kind::Coercivity => "coercivity",
            Kind::ExitTimes => "exit-times",
            Kind::Lyapunov => "lyapunov",
            Kind::Stationary => "stationary",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown experiment kind `{s}`"))
    }
}

/// Keys every experiment understands; model parameters go under `model.`.
const KNOWN_KEYS: &[&str] = &[
    "kind",
    "model",
    "system",
    "kernel",
    "seed",
    "out_dir",
    "x0",
    "samples",
    "j_max",
    "dt",
    "t_max",
    "paths",
    "scheme",
    "stride",
    "observables",
    "K_grid",
    "K",
    "r",
    "delta",
    "delta1",
    "tag",
    "eta_rule",
    "points",
    "steps_per_eta",
    "dt_scale",
    "censor_scale",
    "quantile",
    "burn_in",
    "p",
    "certified",
    "lyapunov",
    "T",
    "K_max",
    "states",
    "steps",
    "nested_inner",
    "nested_outer",
    "budget",
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

/// A parsed experiment file. Equality ignores the line numbers kept for error
/// messages.
#[derive(Debug, Clone, Default)]
pub struct ExperimentConfig {
    entries: BTreeMap<String, Entry>,
}

impl PartialEq for ExperimentConfig {
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len() && self.entries.iter().zip(&other.entries).all(|((a, x), (b, y))| a == b && x.value == y.value)
    }
}

fn key_ok(key: &str) -> bool {
    KNOWN_KEYS.contains(&key) || key.strip_prefix("model.").is_some_and(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        let mut c = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(LabError::config(line, None, "expected `key = value`"));
            };
            let (k, v) = (k.trim(), v.trim());
            if !key_ok(k) {
                return Err(LabError::config(line, Some(k), "unknown key"));
            }
            if v.is_empty() {
                return Err(LabError::config(line, Some(k), "empty value"));
            }
            if let Some(prev) = c.entries.get(k) {
                return Err(LabError::config(line, Some(k), format!("duplicate key (first set on line {})", prev.line)));
            }
            c.entries.insert(k.to_string(), Entry { value: v.to_string(), line });
        }
        if c.entries.contains_key("kernel") && c.entries.contains_key("model.kernel") {
            let line = c.entries["kernel"].line;
            return Err(LabError::config(line, Some("kernel"), "both `kernel` and `model.kernel` are set"));
        }
        Ok(c)
    }

    /// Canonical text: one `key = value` line per entry, keys sorted.
    pub fn serialize(&self) -> String {
        self.entries.iter().map(|(k, e)| format!("{k} = {}\n", e.value)).collect()
    }

    /// Sets or replaces a value, as from `--set key=value`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), LabError> {
        if !key_ok(key) {
            return Err(LabError::config(0, Some(key), "unknown key"));
        }
        if value.trim().is_empty() || value.contains('\n') || value.contains('#') {
            return Err(LabError::config(0, Some(key), "value must be a non-empty single line without `#`"));
        }
        let line = self.entries.get(key).map_or(0, |e| e.line);
        self.entries.insert(key.to_string(), Entry { value: value.trim().to_string(), line });
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.entries.get(key).map_or(0, |e| e.line)
    }

    pub fn bad(&self, key: &str, msg: impl Into<String>) -> LabError {
        LabError::config(self.line(key), Some(key), msg)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, LabError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| self.bad(key, format!("cannot parse `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, LabError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Comma-separated numbers.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>, LabError> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        v.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| self.bad(key, format!("bad number `{}` in list", t.trim())))).collect::<Result<Vec<_>, _>>().map(Some)
    }

    pub fn kind(&self) -> Result<Option<Kind>, LabError> {
        match self.raw("kind") {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e: String| self.bad("kind", e)),
        }
    }

    /// The master seed; there is no default.
    pub fn seed(&self) -> Result<u64, LabError> {
        self.get("seed")?.ok_or_else(|| LabError::config(0, Some("seed"), "missing; every run needs an explicit seed"))
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.raw("out_dir").map(PathBuf::from)
    }

    /// `model.<name>` entries with the prefix stripped, plus the `kernel`
    /// shorthand.
    pub fn model_params(&self) -> BTreeMap<String, String> {
        let mut out: BTreeMap<String, String> = self.entries.iter().filter_map(|(k, e)| k.strip_prefix("model.").map(|p| (p.to_string(), e.value.clone()))).collect();
        if let Some(k) = self.raw("kernel") {
            out.insert("kernel".into(), k.to_string());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_errors_name_the_line() {
        let c = ExperimentConfig::parse("# header\nkind = certify  # trailing\n\nmodel = triad\nseed = 3\n").unwrap();
        assert_eq!(c.kind().unwrap(), Some(Kind::Certify));
        assert_eq!(c.seed().unwrap(), 3);
        let e = ExperimentConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert_eq!(e.to_string(), "config line 2, key `bogus`: unknown key");
        let e = ExperimentConfig::parse("seed = 1\nseed = 2\n").unwrap_err();
        assert!(e.to_string().contains("line 2"));
        let c = ExperimentConfig::parse("paths = many\n").unwrap();
        assert_eq!(c.get::<usize>("paths").unwrap_err().to_string(), "config line 1, key `paths`: cannot parse `many`");
    }

    #[test]
    fn missing_seed_is_an_error() {
        let c = ExperimentConfig::parse("kind = check\n").unwrap();
        assert!(c.seed().is_err());
    }

    #[test]
    fn kinds_round_trip() {
        for k in Kind::ALL {
            assert_eq!(k.as_str().parse::<Kind>().unwrap(), k);
        }
    }
}
