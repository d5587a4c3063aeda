//! Flat `key=value` configuration with a fixed schema.
//!
//! Keys are grouped by prefix (`data.`, `model.`, `train.`, `eval.`). Every
//! key has a type and a default; unknown keys, duplicates and type errors
//! are rejected with the offending line number.

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Int,
    Float,
    Str,
    IntList,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    IntList(Vec<i64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Float(v) => write!(f, "{v:?}"),
            Value::Str(s) => f.write_str(s),
            Value::IntList(v) => {
                let parts: Vec<String> = v.iter().map(i64::to_string).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// `(key, kind, default)` for every recognised key.
pub const SCHEMA: &[(&str, Kind, &str)] = &[
    ("data.glyphs", Kind::Str, "builtin"),
    ("data.glyph_scale", Kind::Int, "1"),
    ("data.clips", Kind::Int, "2000"),
    ("data.digits", Kind::Int, "2"),
    ("data.frames", Kind::Int, "8"),
    ("data.height", Kind::Int, "32"),
    ("data.width", Kind::Int, "32"),
    ("data.speed_min", Kind::Int, "1"),
    ("data.speed_max", Kind::Int, "3"),
    ("data.seed", Kind::Int, "0"),
    ("data.split_train", Kind::Float, "0.8"),
    ("data.split_val", Kind::Float, "0.1"),
    ("data.split_test", Kind::Float, "0.1"),
    ("data.projection_axis", Kind::Int, "1"),
    ("data.projection_weights", Kind::Str, "average"),
    ("data.noise_sigma", Kind::Float, "0.0"),
    ("data.translate_augment", Kind::Int, "0"),
    ("model.variant", Kind::Str, "cvae"),
    ("model.latent_dim", Kind::Int, "10"),
    ("model.enc_channels", Kind::IntList, "8,16,32"),
    ("model.dec_channels", Kind::IntList, "16,32,32"),
    ("model.z_channels", Kind::Int, "8"),
    ("model.expand_features", Kind::Int, "4"),
    ("model.refine_channels", Kind::IntList, "8"),
    ("model.slope", Kind::Float, "0.2"),
    ("model.beta", Kind::Float, "1.0"),
    ("train.batch_size", Kind::Int, "16"),
    ("train.epochs", Kind::Int, "30"),
    ("train.steps", Kind::Int, "0"),
    ("train.lr", Kind::Float, "1e-4"),
    ("train.adam_beta1", Kind::Float, "0.9"),
    ("train.adam_beta2", Kind::Float, "0.999"),
    ("train.adam_eps", Kind::Float, "1e-8"),
    ("train.seed", Kind::Int, "0"),
    ("train.threads", Kind::Int, "1"),
    ("train.output_bias", Kind::Str, "zero"),
    ("train.checkpoint_every", Kind::Int, "0"),
    ("train.probe_steps", Kind::Int, "200"),
    ("train.max_probes", Kind::Int, "12"),
    ("train.kl_band_low", Kind::Float, "5.0"),
    ("train.kl_band_high", Kind::Float, "15.0"),
    ("eval.method", Kind::Str, "cvae"),
    ("eval.k_list", Kind::IntList, "1,2,5,10"),
    ("eval.seed", Kind::Int, "0"),
    ("eval.test_examples", Kind::Int, "0"),
    ("eval.montage_examples", Kind::Int, "4"),
    ("eval.ridge", Kind::Float, "1e-6"),
];

fn parse_value(kind: Kind, raw: &str) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    match kind {
        Kind::Int => raw
            .parse()
            .map(Value::Int)
            .map_err(|_| format!("expected an integer, got `{raw}`")),
        Kind::Float => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Value::Float(v)),
            _ => Err(format!("expected a finite number, got `{raw}`")),
        },
        Kind::Str => {
            if raw.is_empty() {
                Err("expected a non-empty string".into())
            } else {
                Ok(Value::Str(raw.to_string()))
            }
        }
        Kind::IntList => raw
            .split(',')
            .map(|p| p.trim().parse::<i64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Value::IntList)
            .map_err(|_| format!("expected comma-separated integers, got `{raw}`")),
    }
}

fn kind_of(key: &str) -> Option<Kind> {
    SCHEMA.iter().find(|(k, _, _)| *k == key).map(|(_, kind, _)| *kind)
}

/// Validated configuration with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    values: BTreeMap<String, Value>,
}

impl Default for Config {
    fn default() -> Self {
        let values = SCHEMA
            .iter()
            .map(|(k, kind, d)| {
                let v = parse_value(*kind, d).expect("schema defaults parse");
                (k.to_string(), v)
            })
            .collect();
        Config { values }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let err = |key: &str, detail: String| Error::Config {
                line: line_no,
                key: key.to_string(),
                detail,
            };
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| err(line, "expected key=value".into()))?;
            let key = key.trim();
            let kind = kind_of(key).ok_or_else(|| err(key, "unknown key".into()))?;
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(err(key, format!("duplicate key (first set on line {prev})")));
            }
            let value = parse_value(kind, raw).map_err(|d| err(key, d))?;
            cfg.values.insert(key.to_string(), value);
        }
        Ok(cfg)
    }

    /// Overrides one key from text, e.g. a command-line flag.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let err = |detail: String| Error::Config {
            line: 0,
            key: key.to_string(),
            detail,
        };
        let kind = kind_of(key).ok_or_else(|| err("unknown key".into()))?;
        let value = parse_value(kind, raw).map_err(err)?;
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    pub fn get(&self, key: &str) -> &Value {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("`{key}` is not in the config schema"))
    }

    pub fn int(&self, key: &str) -> i64 {
        match self.get(key) {
            Value::Int(v) => *v,
            other => panic!("`{key}` is {other:?}, not an integer"),
        }
    }

    pub fn float(&self, key: &str) -> f64 {
        match self.get(key) {
            Value::Float(v) => *v,
            other => panic!("`{key}` is {other:?}, not a float"),
        }
    }

    pub fn string(&self, key: &str) -> &str {
        match self.get(key) {
            Value::Str(v) => v,
            other => panic!("`{key}` is {other:?}, not a string"),
        }
    }

    pub fn int_list(&self, key: &str) -> &[i64] {
        match self.get(key) {
            Value::IntList(v) => v,
            other => panic!("`{key}` is {other:?}, not an int list"),
        }
    }

    /// Integer that must be at least `min`, as `usize`.
    pub fn count(&self, key: &str, min: i64) -> Result<usize> {
        let v = self.int(key);
        if v < min {
            return Err(Error::Config {
                line: 0,
                key: key.into(),
                detail: format!("must be >= {min}, got {v}"),
            });
        }
        Ok(v as usize)
    }

    pub fn counts(&self, key: &str, min: i64) -> Result<Vec<usize>> {
        self.int_list(key)
            .iter()
            .map(|&v| {
                if v < min {
                    Err(Error::Config {
                        line: 0,
                        key: key.into(),
                        detail: format!("entries must be >= {min}, got {v}"),
                    })
                } else {
                    Ok(v as usize)
                }
            })
            .collect()
    }

    pub fn seed(&self, key: &str) -> u64 {
        self.int(key) as u64
    }

    /// Sorted `key=value` lines for every key.
    pub fn normalized(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        digest_hex(self.normalized().as_bytes())
    }
}

/// SHA-256 of `bytes` as lowercase hex.
pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
