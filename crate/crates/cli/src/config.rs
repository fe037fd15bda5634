//! Run configuration: defaults, then a JSON config file, then `IMF_*`
//! environment variables, then command-line flags.
//!
//! Every key is addressable from the environment by its path with `__`
//! between levels, upper-cased: `IMF_MODEL__DIM=128`, `IMF_TRAIN__LR=5e-4`,
//! `IMF_DATASET=/data/fb`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use imf_core::data::MissingFill;
use imf_core::model::ModelConfig;
use imf_core::structural::GatConfig;
use imf_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Invalid;

pub const ENV_PREFIX: &str = "IMF_";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub features_struct: Option<PathBuf>,
    pub features_visual: Option<PathBuf>,
    pub features_text: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub missing_fill: MissingFill,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub gat: GatConfig,
}

impl RunConfig {
    /// Defaults overlaid with `file` (if any) and the process environment.
    pub fn resolve(file: Option<&Path>) -> Result<Self> {
        let mut value = serde_json::to_value(RunConfig::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let overlay: Value =
                serde_json::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())))?;
            merge(&mut value, overlay);
        }
        apply_env(&mut value, std::env::vars())?;
        let config = serde_json::from_value(value).map_err(|e| Invalid(format!("configuration: {e}")))?;
        Ok(config)
    }

    pub fn dataset(&self) -> Result<&Path> {
        match &self.dataset {
            Some(p) => Ok(p),
            None => bail!(Invalid("no dataset given (--dataset or IMF_DATASET)".into())),
        }
    }

    pub fn out(&self) -> Result<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => bail!(Invalid("no output location given (--out or IMF_OUT)".into())),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `IMF_A__B=value` overrides. Values parse as JSON when they can
/// (numbers, booleans), otherwise they are taken as strings.
pub fn apply_env(value: &mut Value, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    for (key, raw) in vars {
        let Some(path) = key.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let parts: Vec<String> = path.split("__").map(str::to_ascii_lowercase).collect();
        let mut node = &mut *value;
        for part in &parts {
            node = match node.get_mut(part.as_str()) {
                Some(n) => n,
                None => bail!(Invalid(format!("{key}: no configuration key {}", parts.join(".")))),
            };
        }
        *node = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
    }
    Ok(())
}
