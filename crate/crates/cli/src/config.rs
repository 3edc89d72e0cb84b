use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

/// A configurable key with its default value as written in a config file.
pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
}

pub const fn key(name: &'static str, default: &'static str) -> Key {
    Key { name, default }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: expected `key = value`, got `{text}`")]
    Syntax { path: String, line: usize, text: String },
    #[error("unknown key `{key}` for `{command}` (known: {known})")]
    UnknownKey { key: String, command: String, known: String },
    #[error("key `{key}` given twice in {path}")]
    Duplicate { key: String, path: String },
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    Value { key: String, value: String, expected: &'static str },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Fully resolved flat configuration of one run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    command: String,
    values: BTreeMap<String, String>,
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_flat(text: &str, path: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { path: path.into(), line: n + 1, text: raw.into() });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { path: path.into(), line: n + 1, text: raw.into() });
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(ConfigError::Duplicate { key: k.into(), path: path.into() });
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Layers defaults, the config file (unless `default`) and overrides, in
    /// that order. Every key must belong to `schema`.
    pub fn resolve(
        command: &str,
        schema: &[Key],
        config: &str,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut values: BTreeMap<String, String> =
            schema.iter().map(|k| (k.name.to_string(), k.default.to_string())).collect();
        let from_file = if config == "default" {
            Vec::new()
        } else {
            let text = std::fs::read_to_string(Path::new(config))
                .map_err(|source| ConfigError::Io { path: config.into(), source })?;
            parse_flat(&text, config)?
        };
        for (k, v) in from_file.into_iter().chain(overrides.iter().cloned()) {
            if !values.contains_key(&k) {
                return Err(ConfigError::UnknownKey {
                    key: k,
                    command: command.into(),
                    known: schema.iter().map(|k| k.name).collect::<Vec<_>>().join(", "),
                });
            }
            values.insert(k, v);
        }
        Ok(Self { command: command.into(), values })
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("`{key}` missing from schema"))
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.into(), value);
    }

    pub fn get<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<T, ConfigError> {
        let raw = self.str(key);
        raw.parse().map_err(|_| ConfigError::Value { key: key.into(), value: raw.into(), expected })
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.get(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.get(key, "a 64-bit unsigned integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.get(key, "a real number")
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn list<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Vec<T>, ConfigError> {
        let raw = self.str(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| s.trim().parse().map_err(|_| ConfigError::Value { key: key.into(), value: raw.into(), expected }))
            .collect()
    }

    pub fn choice<'a>(&self, key: &str, options: &[&'a str]) -> Result<&'a str, ConfigError> {
        let raw = self.str(key);
        options.iter().copied().find(|o| *o == raw).ok_or_else(|| ConfigError::Value {
            key: key.into(),
            value: raw.into(),
            expected: "one of the documented options",
        })
    }

    /// The resolved configuration in config-file syntax, keys sorted.
    pub fn echo(&self) -> String {
        let mut s = format!("# resolved configuration for `{}`\n", self.command);
        for (k, v) in &self.values {
            s += &format!("{k} = {v}\n");
        }
        s
    }

    /// Resolved values except `out_dir`, which does not affect results.
    pub fn to_json(&self) -> serde_json::Value {
        let values: BTreeMap<&String, &String> = self.values.iter().filter(|(k, _)| *k != "out_dir").collect();
        serde_json::to_value(values).expect("string map serializes")
    }
}
