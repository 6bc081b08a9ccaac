use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augmentation::AugmentConfig;
use crate::data_io::{generate_synthetic, load_cifar10_binary, Dataset, Split, SyntheticSpec, CIFAR10_CLASSES};
use crate::model::BranchedNetConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Cifar10 {
        /// Directory holding `data_batch_*.bin` and `test_batch.bin`.
        directory: PathBuf,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Synthetic {
        num_classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        image_size: usize,
        noise_std: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DataConfig {
    pub fn num_classes(&self) -> usize {
        match self {
            DataConfig::Cifar10 { .. } => CIFAR10_CLASSES,
            DataConfig::Synthetic { num_classes, .. } => *num_classes,
        }
    }

    pub fn load(&self, split: Split) -> crate::Result<Dataset> {
        match self {
            DataConfig::Cifar10 {
                directory,
                train_limit,
                test_limit,
            } => {
                let d = load_cifar10_binary(directory, split)?;
                let limit = match split {
                    Split::Train => train_limit,
                    Split::Test => test_limit,
                };
                match limit {
                    Some(n) => d.take(*n),
                    None => Ok(d),
                }
            }
            DataConfig::Synthetic {
                num_classes,
                train_per_class,
                test_per_class,
                image_size,
                noise_std,
                seed,
            } => {
                let (per, stream) = match split {
                    Split::Train => (*train_per_class, 0),
                    Split::Test => (*test_per_class, 1),
                };
                let spec = SyntheticSpec {
                    num_classes: *num_classes,
                    samples_per_class: per,
                    image_size: *image_size,
                    noise_std: *noise_std,
                };
                let mut d = generate_synthetic(&spec, seed.wrapping_mul(2).wrapping_add(stream))?;
                d.meta.split = split.name().into();
                Ok(d)
            }
        }
    }
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

/// One experiment: model, optimization, augmentation, data and output root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: BranchedNetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.model.num_classes != self.train.num_classes {
            bail!(
                "invalid config: model.num_classes = {} but train.num_classes = {}",
                self.model.num_classes,
                self.train.num_classes
            );
        }
        if let Some(d) = &self.data {
            if d.num_classes() > self.model.num_classes {
                bail!(
                    "invalid config: data has {} classes but model.num_classes = {}",
                    d.num_classes(),
                    self.model.num_classes
                );
            }
        }
        Ok(())
    }

    pub fn data(&self) -> anyhow::Result<&DataConfig> {
        self.data.as_ref().context("config has no `data` section")
    }
}

/// Sets `section.key=value` in a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> anyhow::Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("--set expects KEY=VALUE, got `{assignment}`"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("--set: malformed key `{path}`");
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        if !node.is_object() {
            bail!("--set {path}: `{k}` is not inside an object");
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(keys[keys.len() - 1].to_string(), value);
            Ok(())
        }
        None => bail!("--set {path}: parent is not an object"),
    }
}

/// Reads, overrides and strictly validates a config file.
pub fn load_config(path: &Path, overrides: &[String]) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: ExperimentConfig = if overrides.is_empty() {
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
    } else {
        let mut tree: Value =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        serde_json::from_value(tree)
            .with_context(|| format!("invalid config {} after --set overrides", path.display()))?
    };
    config.validate()?;
    Ok(config)
}

/// First field where two model configs differ, as `model.<field>`.
pub fn model_mismatch(expected: &BranchedNetConfig, found: &BranchedNetConfig) -> Option<String> {
    let a = serde_json::to_value(expected).ok()?;
    let b = serde_json::to_value(found).ok()?;
    let (Value::Object(a), Value::Object(b)) = (a, b) else {
        return None;
    };
    a.iter().find(|(k, v)| b.get(*k) != Some(v)).map(|(k, v)| {
        format!(
            "model.{k}: checkpoint has {v}, config has {}",
            b.get(k).unwrap_or(&Value::Null)
        )
    })
}
