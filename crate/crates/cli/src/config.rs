//! Configuration file loading and `--set` overrides.
//!
//! A config file (TOML or JSON, chosen by extension) is layered over the
//! defaults, then each `--set dotted.key=value` is applied. The value is
//! parsed as JSON when possible and used as a plain string otherwise. Unknown
//! keys are rejected at every stage.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use relabel_rl::corpus::{GeneratorConfig, NoiseSpec};
use relabel_rl::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Everything a run needs: corpus generation plus the training pipeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Seed for corpus generation and noise injection.
    pub seed: u64,
    /// Total instances generated, test split included.
    pub generator: GeneratorConfig,
    /// The last `test_instances` generated instances form the clean test split.
    pub test_instances: usize,
    pub noise: NoiseRates,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            generator: GeneratorConfig {
                num_instances: 5500,
                ..GeneratorConfig::default()
            },
            test_instances: 500,
            noise: NoiseRates::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseRates {
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub entity_noise_rate: f64,
}

impl Default for NoiseRates {
    fn default() -> Self {
        Self {
            fp_rate: 0.1,
            fn_rate: 0.3,
            entity_noise_rate: 0.0,
        }
    }
}

impl DataConfig {
    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            fp_rate: self.noise.fp_rate,
            fn_rate: self.noise.fn_rate,
            entity_noise_rate: self.noise.entity_noise_rate,
            seed: self.seed,
        }
    }
}

impl CliConfig {
    /// Defaults, then the optional file, then `--seed`, then each override.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<Self> {
        let mut tree = serde_json::to_value(CliConfig::default())?;
        if let Some(path) = path {
            let layer = read_layer(path)?;
            merge(&mut tree, layer, "").with_context(|| format!("in config file {}", path.display()))?;
        }
        if let Some(seed) = seed {
            tree["data"]["seed"] = seed.into();
            tree["train"]["seed"] = seed.into();
        }
        for kv in overrides {
            apply_override(&mut tree, kv)?;
        }
        let cfg: CliConfig = serde_json::from_value(tree).context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.generator.validate()?;
        if self.data.test_instances >= self.data.generator.num_instances {
            bail!(
                "data.test_instances ({}) must be smaller than data.generator.num_instances ({})",
                self.data.test_instances,
                self.data.generator.num_instances
            );
        }
        self.data.noise_spec().validate()?;
        self.train.validate()?;
        Ok(())
    }
}

fn read_layer(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).with_context(|| format!("malformed JSON in {}", path.display())),
        Some("toml") | None => {
            let v: toml::Value =
                toml::from_str(&text).with_context(|| format!("malformed TOML in {}", path.display()))?;
            Ok(serde_json::to_value(v)?)
        }
        Some(other) => bail!("unsupported config extension `.{other}` (use .toml or .json)"),
    }
}

/// Recursively overlays `layer` onto `base`; every key must already exist.
fn merge(base: &mut Value, layer: Value, prefix: &str) -> Result<()> {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                let slot = b.get_mut(&k).ok_or_else(|| anyhow!("unknown config key `{path}`"))?;
                merge(slot, v, &path)?;
            }
            Ok(())
        }
        (Value::Object(_), _) => bail!("config key `{prefix}` must be a table"),
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

/// Applies one `dotted.key=value` override.
pub fn apply_override(tree: &mut Value, kv: &str) -> Result<()> {
    let (key, raw) = kv
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{kv}` is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override `{kv}` has an empty key");
    }
    let mut node = &mut *tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
    }
    if node.is_object() {
        bail!("config key `{key}` is a table; set one of its fields instead");
    }
    *node = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok(())
}
