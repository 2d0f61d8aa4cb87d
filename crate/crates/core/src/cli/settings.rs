//! Flat `key = value` settings with defaults, a config file and flags.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Bad invocation: unknown subcommand, key or flag, or malformed syntax.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

/// Resolved settings for one subcommand.
#[derive(Clone, Debug)]
pub struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_config(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((normalize(key), value.trim().to_owned()));
    }
    Ok(out)
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

impl Settings {
    /// Applies defaults, then the file named by `--config`, then the other
    /// flags. Keys outside `defaults` are rejected. `switches` are flags that
    /// take no value and resolve to `true`.
    pub fn resolve(
        args: &[String],
        defaults: &[(&str, String)],
        switches: &[&str],
    ) -> std::result::Result<Result<Settings>, UsageError> {
        let mut values: BTreeMap<String, (String, Source)> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), (v.clone(), Source::Default)))
            .collect();
        let mut flags = Vec::new();
        let mut config_path = None;
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let Some(name) = arg.strip_prefix("--") else {
                return Err(UsageError(format!("unexpected argument `{arg}`")));
            };
            let (key, inline) = match name.split_once('=') {
                Some((k, v)) => (normalize(k), Some(v.to_owned())),
                None => (normalize(name), None),
            };
            let value = if switches.contains(&key.as_str()) && inline.is_none() {
                "true".to_owned()
            } else if let Some(v) = inline {
                v
            } else {
                it.next().cloned().ok_or_else(|| UsageError(format!("flag --{key} needs a value")))?
            };
            if key == "config" {
                config_path = Some(value);
            } else if values.contains_key(&key) {
                flags.push((key, value));
            } else {
                return Err(UsageError(format!("unknown flag --{key}")));
            }
        }
        if let Some(path) = config_path {
            let text = match fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) => return Ok(Err(Error::io(&path, e))),
            };
            let entries = parse_config(&text).map_err(|e| UsageError(format!("{path}: {e}")))?;
            for (key, value) in entries {
                let slot = values
                    .get_mut(&key)
                    .ok_or_else(|| UsageError(format!("{path}: unknown key `{key}`")))?;
                *slot = (value, Source::File);
            }
        }
        for (key, value) in flags {
            values.insert(key, (value, Source::Flag));
        }
        Ok(Ok(Settings { values }))
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(|(v, _)| v.as_str()).unwrap_or_else(|| panic!("setting `{key}` not declared"))
    }

    pub fn source(&self, key: &str) -> Source {
        self.values[key].1
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| Error::Config(format!("{key} = `{raw}`: {e}")))
    }

    /// Non-empty string value.
    pub fn required(&self, key: &str) -> Result<String> {
        match self.raw(key) {
            "" => Err(Error::Config(format!("{key} is required"))),
            v => Ok(v.to_owned()),
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|e| Error::Config(format!("{key} = `{raw}`: {e}")))
            })
            .collect()
    }

    /// One `key = value` line per setting, in key order.
    pub fn render(&self) -> String {
        self.values
            .iter()
            .map(|(k, (v, _))| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|a| a.to_string()).collect()
    }

    #[test]
    fn comments_and_blank_lines() {
        let parsed = parse_config("# header\n\nepochs = 3 # trailing\nlearning-rate=0.1\n").unwrap();
        assert_eq!(
            parsed,
            vec![("epochs".into(), "3".into()), ("learning_rate".into(), "0.1".into())]
        );
    }

    #[test]
    fn missing_equals() {
        assert!(parse_config("epochs 3").unwrap_err().contains("line 1"));
    }

    #[test]
    fn flags_override_defaults() {
        let defaults = [("epochs", "30".to_string()), ("verbose", "false".to_string())];
        let s = Settings::resolve(&args(&["--epochs", "4", "--verbose"]), &defaults, &["verbose"])
            .unwrap()
            .unwrap();
        assert_eq!(s.get::<usize>("epochs").unwrap(), 4);
        assert!(s.get::<bool>("verbose").unwrap());
        assert_eq!(s.source("epochs"), Source::Flag);
    }

    #[test]
    fn unknown_flag() {
        let defaults = [("epochs", "30".to_string())];
        assert!(Settings::resolve(&args(&["--epoch=3"]), &defaults, &[]).is_err());
    }
}
