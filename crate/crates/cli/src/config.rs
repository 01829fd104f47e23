//! Flat key-value configuration files.
//!
//! Grammar, one entry per line:
//!
//! ```text
//! # comment
//! key = value        # trailing comments are allowed
//! tau = 0.5pi        # numbers may carry a `pi` factor
//! tau = 2.04pi       # repeating a key builds a list
//! ```
//!
//! Dashes and underscores in keys are interchangeable.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::Path;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: Vec<(String, String, usize)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl KvConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("config line {}: expected `key = value`", i + 1))
            })?;
            let key = normalize(k);
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(CliError::usage(format!(
                    "config line {}: invalid key `{}`",
                    i + 1,
                    k.trim()
                )));
            }
            entries.push((key, v.trim().to_string(), i + 1));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Last value given for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        let key = normalize(key);
        self.entries
            .iter()
            .rev()
            .find(|e| e.0 == key)
            .map(|e| e.1.as_str())
    }

    /// Every value given for `key`, in file order.
    pub fn get_all(&self, key: &str) -> Vec<&str> {
        let key = normalize(key);
        self.entries
            .iter()
            .filter(|e| e.0 == key)
            .map(|e| e.1.as_str())
            .collect()
    }

    pub fn keys(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.0.as_str()).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|e| (e.0.as_str(), e.1.as_str()))
    }
}

/// Parses a number with an optional `pi` factor: `2`, `1e-3`, `pi`, `0.5pi`, `2.04*pi`.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let t = s.trim();
    let lower = t.to_ascii_lowercase();
    let value = if let Some(head) = lower.strip_suffix("pi") {
        let head = head.trim().trim_end_matches('*').trim();
        let k = if head.is_empty() {
            1.0
        } else if head == "-" {
            -1.0
        } else {
            head.parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))?
        };
        k * PI
    } else {
        lower
            .parse::<f64>()
            .map_err(|_| format!("`{t}` is not a number"))?
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("`{t}` is not finite"))
    }
}

/// Resolves settings from, in order of precedence, command-line flags, the
/// config file and built-in defaults, and remembers which config keys were
/// consumed so unknown keys can be reported.
pub struct Resolver<'a> {
    cfg: &'a KvConfig,
    used: RefCell<BTreeSet<String>>,
    /// Effective settings in resolution order, for output metadata.
    effective: RefCell<Vec<(String, String)>>,
}

impl<'a> Resolver<'a> {
    pub fn new(cfg: &'a KvConfig) -> Self {
        Self {
            cfg,
            used: RefCell::new(BTreeSet::new()),
            effective: RefCell::new(Vec::new()),
        }
    }

    fn raw(&self, key: &str) -> Option<&'a str> {
        self.used.borrow_mut().insert(normalize(key));
        self.cfg.get(key)
    }

    fn record(&self, key: &str, value: String) {
        self.effective.borrow_mut().push((normalize(key), value));
    }

    pub fn f64(&self, key: &str, flag: Option<f64>, default: f64) -> CliResult<f64> {
        let v = match (flag, self.raw(key)) {
            (Some(v), _) => v,
            (None, Some(s)) => {
                parse_number(s).map_err(|e| CliError::usage(format!("config `{key}`: {e}")))?
            }
            (None, None) => default,
        };
        self.record(key, fmt_setting(v));
        Ok(v)
    }

    pub fn opt_f64(&self, key: &str, flag: Option<f64>) -> CliResult<Option<f64>> {
        let v = match (flag, self.raw(key)) {
            (Some(v), _) => Some(v),
            (None, Some(s)) => {
                Some(parse_number(s).map_err(|e| CliError::usage(format!("config `{key}`: {e}")))?)
            }
            (None, None) => None,
        };
        if let Some(x) = v {
            self.record(key, fmt_setting(x));
        }
        Ok(v)
    }

    pub fn u64(&self, key: &str, flag: Option<u64>, default: u64) -> CliResult<u64> {
        let v = match (flag, self.raw(key)) {
            (Some(v), _) => v,
            (None, Some(s)) => s.trim().parse::<u64>().map_err(|_| {
                CliError::usage(format!(
                    "config `{key}`: `{s}` is not a non-negative integer"
                ))
            })?,
            (None, None) => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    pub fn usize(&self, key: &str, flag: Option<usize>, default: usize) -> CliResult<usize> {
        Ok(self.u64(key, flag.map(|v| v as u64), default as u64)? as usize)
    }

    pub fn string(&self, key: &str, flag: Option<String>, default: &str) -> CliResult<String> {
        let v = flag
            .or_else(|| self.raw(key).map(str::to_string))
            .unwrap_or_else(|| default.to_string());
        self.record(key, v.clone());
        Ok(v)
    }

    pub fn flag(&self, key: &str, flag: bool) -> CliResult<bool> {
        let v = if flag {
            true
        } else {
            match self.raw(key) {
                None => false,
                Some(s) => match s.trim() {
                    "true" | "yes" | "1" => true,
                    "false" | "no" | "0" => false,
                    other => {
                        return Err(CliError::usage(format!(
                            "config `{key}`: `{other}` is not a boolean"
                        )))
                    }
                },
            }
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    /// List from a comma-separated flag, or repeated / comma-separated config entries.
    pub fn f64_list(&self, key: &str, flag: Option<Vec<f64>>) -> CliResult<Option<Vec<f64>>> {
        let list = match flag {
            Some(v) => Some(v),
            None => {
                let raw: Vec<&str> = {
                    self.used.borrow_mut().insert(normalize(key));
                    self.cfg.get_all(key)
                };
                if raw.is_empty() {
                    None
                } else {
                    let mut out = Vec::new();
                    for item in raw.iter().flat_map(|s| s.split(',')) {
                        out.push(
                            parse_number(item)
                                .map_err(|e| CliError::usage(format!("config `{key}`: {e}")))?,
                        );
                    }
                    Some(out)
                }
            }
        };
        if let Some(l) = &list {
            self.record(
                key,
                l.iter()
                    .map(|x| fmt_setting(*x))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        Ok(list)
    }

    /// Fails on config keys no setting asked for.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .cfg
            .keys()
            .into_iter()
            .filter(|k| !used.contains(*k))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::usage(format!(
                "unknown config key(s): {}",
                unknown.join(", ")
            )))
        }
    }

    pub fn effective(&self) -> Vec<(String, String)> {
        self.effective.borrow().clone()
    }
}

fn fmt_setting(x: f64) -> String {
    crate::table::fmt_f64(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grammar() {
        let c = KvConfig::parse(
            "# header\n g = 0.36 \nq0=55 # trailing\n\ntau = 0.5pi\ntau = 2pi\nn-traj = 4\n",
        )
        .unwrap();
        assert_eq!(c.get("g"), Some("0.36"));
        assert_eq!(c.get_all("tau"), vec!["0.5pi", "2pi"]);
        assert_eq!(c.get("n_traj"), Some("4"));
        assert!(KvConfig::parse("just words").is_err());
        assert!(KvConfig::parse("a b = 1").is_err());
    }

    #[test]
    fn numbers_with_pi() {
        assert_eq!(parse_number("pi").unwrap(), PI);
        assert_eq!(parse_number("0.5pi").unwrap(), 0.5 * PI);
        assert_eq!(parse_number("2.04*pi").unwrap(), 2.04 * PI);
        assert_eq!(parse_number(" 1e-3 ").unwrap(), 1e-3);
        assert!(parse_number("abc").is_err());
        assert!(parse_number("inf").is_err());
    }

    #[test]
    fn precedence_and_unknown_keys() {
        let c = KvConfig::parse("g = 0.5\nq0 = 10\nbogus = 1\ntau = 1, 2\ntau = pi").unwrap();
        let r = Resolver::new(&c);
        assert_eq!(r.f64("g", Some(0.1), 0.0).unwrap(), 0.1);
        assert_eq!(r.f64("q0", None, 55.0).unwrap(), 10.0);
        assert_eq!(r.f64("missing", None, 3.0).unwrap(), 3.0);
        assert_eq!(
            r.f64_list("tau", None).unwrap().unwrap(),
            vec![1.0, 2.0, PI]
        );
        let err = r.finish().unwrap_err();
        assert!(err.to_string().contains("bogus"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn field_level_messages() {
        let c = KvConfig::parse("n_traj = many").unwrap();
        let r = Resolver::new(&c);
        let e = r.usize("n_traj", None, 16).unwrap_err();
        assert!(e.to_string().contains("n_traj"));
    }
}
