//! Run configuration as a flat map of dotted keys.
//!
//! Precedence, lowest first: built-in defaults, the `--config` file,
//! `--set key=value` pairs, dedicated flags, then `HF_SEED` for the seed
//! when nothing else set it.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::Value;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path} is not valid: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{key}' expects {expected}, got {got}")]
    Type { key: String, expected: &'static str, got: String },
    #[error("malformed --set '{0}', expected key=value")]
    MalformedSet(String),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Keys accepted in files and `--set`. `app.*` is checked when the
/// application parameters are built.
pub const KEYS: &[&str] = &[
    "model.preset",
    "model.app",
    "model.file",
    "cost.file",
    "run.seed",
    "run.paths",
    "run.horizon",
    "run.step",
    "run.threads",
    "run.out",
    "run.x0",
    "grid.n",
    "grid.lo",
    "grid.hi",
    "stopping.method",
    "stopping.lsmc_step",
    "stopping.degree",
    "control.boundary",
    "control.candidates",
    "control.candidate_spacing",
    "control.candidate_count",
    "derivative.eps",
    "verify.suite",
    "verify.fine_step",
    "verify.null_cost_step",
    "verify.grid_spacing",
    "verify.method",
    "verify.lsmc_step",
    "refine.check",
    "refine.ladder",
];

/// Keys that change where or how fast a run goes but not what it computes.
const UNHASHED: &[&str] = &["run.threads", "run.out"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, Value>,
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) || key.strip_prefix("app.").is_some_and(|rest| !rest.is_empty() && !rest.contains('.')) {
        Ok(())
    } else {
        Err(ConfigError::UnknownKey(key.into()))
    }
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a
/// bare string.
fn parse_value(text: &str) -> Value {
    let doc = format!("v = {text}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| ConfigError::Parse { path: path.into(), message: e.message().into() })?;
        let mut values = BTreeMap::new();
        flatten("", &table, &mut values);
        for k in values.keys() {
            check_key(k)?;
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.into(), value);
        Ok(())
    }

    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::MalformedSet(pair.into()))?;
        self.set(k.trim(), parse_value(v.trim()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn remove(&mut self, key: &str) {
        self.values.remove(key);
    }

    fn type_error(key: &str, expected: &'static str, v: &Value) -> ConfigError {
        ConfigError::Type { key: key.into(), expected, got: v.to_string() }
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(v) => Err(Self::type_error(key, "a number", v)),
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            // seeds above i64::MAX arrive as strings
            Some(Value::String(s)) => s.parse().map(Some).map_err(|_| Self::type_error(key, "a nonnegative integer", &Value::String(s.clone()))),
            Some(v) => Err(Self::type_error(key, "a nonnegative integer", v)),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(Self::type_error(key, "a string", v)),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(i) => Ok(*i as f64),
                    other => Err(Self::type_error(key, "a list of numbers", other)),
                })
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(Value::String(s)) => s
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| Self::type_error(key, "a list of numbers", &Value::String(s.clone()))))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(v) => Err(Self::type_error(key, "a list of numbers", v)),
        }
    }

    /// `app.*` overrides with the prefix stripped.
    pub fn app_overrides(&self) -> toml::Table {
        self.values
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("app.").map(|f| (f.to_string(), v.clone())))
            .collect()
    }

    /// Nested TOML rendering of the hashed keys.
    pub fn to_toml(&self) -> String {
        let mut root = toml::Table::new();
        for (k, v) in self.values.iter().filter(|(k, _)| !UNHASHED.contains(&k.as_str())) {
            let mut parts: Vec<&str> = k.split('.').collect();
            let leaf = parts.pop().expect("nonempty key");
            let mut t = &mut root;
            for p in parts {
                t = t
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .expect("keys never shadow tables");
            }
            t.insert(leaf.into(), v.clone());
        }
        toml::to_string(&root).expect("plain values serialize")
    }

    /// SHA-256 over the canonical rendering of the hashed keys.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.values {
            if UNHASHED.contains(&k.as_str()) {
                continue;
            }
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.to_string().as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
