//! Declarative run configuration and `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{config, Error, Result};
use crate::network::NetworkConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub count: usize,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Directory holding `images/` and `masks/`.
    pub root: Option<PathBuf>,
    pub split_ratio: f64,
    /// Generated disks instead of files on disk.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { name: "isic2018".into(), root: None, split_ratio: 0.7, synthetic: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| config(format!("{e}; valid keys: {}", Self::default().keys().join(", "))))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization is infallible")
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        if !(self.dataset.split_ratio > 0.0 && self.dataset.split_ratio < 1.0) {
            return Err(config("dataset.split_ratio must lie strictly between 0 and 1"));
        }
        if let Some(s) = &self.dataset.synthetic {
            if s.count < 2 || s.size == 0 {
                return Err(config("dataset.synthetic needs count >= 2 and a positive size"));
            }
        }
        Ok(())
    }

    /// Every settable dotted key.
    pub fn keys(&self) -> Vec<String> {
        let mut out = Vec::new();
        leaves(&serde_json::to_value(self).expect("config serialization is infallible"), "", &mut out);
        out
    }

    /// Apply `key=value`, where `key` is a full dotted path or a leaf name
    /// that is unique across the configuration. The value is read as JSON,
    /// falling back to a plain string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, raw) = spec.split_once('=').ok_or_else(|| config(format!("override {spec:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let keys = self.keys();
        let path = resolve(key, &keys)?;
        let pointer = format!("/{}", path.replace('.', "/"));
        let parsed: Option<Value> = serde_json::from_str(raw).ok();
        let candidates = parsed.into_iter().chain(std::iter::once(Value::String(raw.to_string())));
        let mut last_err = None;
        for candidate in candidates {
            let mut value = serde_json::to_value(&*self).expect("config serialization is infallible");
            *value.pointer_mut(&pointer).expect("resolved keys exist") = candidate;
            match serde_json::from_value::<RunConfig>(value) {
                Ok(updated) => {
                    *self = updated;
                    return Ok(());
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(config(format!("cannot set {path} to {raw:?}: {}", last_err.expect("at least one candidate"))))
    }
}

fn leaves(v: &Value, prefix: &str, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let p = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                leaves(child, &p, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn resolve(key: &str, keys: &[String]) -> Result<String> {
    if keys.iter().any(|k| k == key) {
        return Ok(key.to_string());
    }
    let matches: Vec<&String> = keys.iter().filter(|k| k.rsplit('.').next() == Some(key)).collect();
    match matches.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(config(format!("unknown key {key:?}; valid keys: {}", keys.join(", ")))),
        many => Err(config(format!(
            "key {key:?} is ambiguous: {}",
            many.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
        ))),
    }
}
