//! `key = value` text files: one entry per line, dotted keys, `#` comments.

use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: idx + 1,
                text: raw.to_string(),
            });
        };
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax {
                line: idx + 1,
                text: raw.to_string(),
            });
        }
        out.push(Entry {
            key: key.to_string(),
            value: v.trim().to_string(),
            line: idx + 1,
        });
    }
    Ok(out)
}

/// Outcome of offering a key to a config section.
#[derive(Debug, Clone, PartialEq)]
pub enum KeyResult {
    Applied,
    Unknown,
    Bad(String),
}

impl KeyResult {
    pub fn into_error(self, entry: &Entry) -> Result<(), ConfigError> {
        match self {
            KeyResult::Applied => Ok(()),
            KeyResult::Unknown => Err(ConfigError::UnknownKey {
                line: entry.line,
                key: entry.key.clone(),
            }),
            KeyResult::Bad(msg) => Err(ConfigError::BadValue {
                line: entry.line,
                key: entry.key.clone(),
                msg,
            }),
        }
    }
}

/// Parses `value` into `slot`.
pub fn assign<T: FromStr>(slot: &mut T, value: &str) -> KeyResult
where
    T::Err: std::fmt::Display,
{
    match value.parse::<T>() {
        Ok(v) => {
            *slot = v;
            KeyResult::Applied
        }
        Err(e) => KeyResult::Bad(e.to_string()),
    }
}

/// Space- or comma-separated floats.
pub fn parse_floats(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

pub fn parse_fixed<const N: usize>(value: &str) -> Result<[f64; N], String> {
    let v = parse_floats(value)?;
    v.try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} numbers, got {}", v.len()))
}

pub fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(format!("expected a boolean, got `{other}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_with_comments() {
        let e = parse_entries("# top\n a.b = 1.5 # trailing\n\nc=x y\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].key, "a.b");
        assert_eq!(e[0].value, "1.5");
        assert_eq!(e[0].line, 2);
        assert_eq!(e[1].value, "x y");
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_entries("novalue"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_entries("a b = 1"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse_entries(" = 1"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn value_helpers() {
        assert_eq!(parse_fixed::<3>("1 2,3").unwrap(), [1.0, 2.0, 3.0]);
        assert!(parse_fixed::<3>("1 2").is_err());
        assert_eq!(parse_bool("on"), Ok(true));
        assert!(parse_bool("maybe").is_err());
        let mut x = 0.0f64;
        assert_eq!(assign(&mut x, "2.5"), KeyResult::Applied);
        assert_eq!(x, 2.5);
        assert!(matches!(assign(&mut x, "two"), KeyResult::Bad(_)));
    }
}
