//! Layered options: built-in defaults, then a TOML file, then flags.
//!
//! Top-level file keys mirror flag names (kebab-case). Hyperparameters live
//! in tables: `[model]`, `[train]`, `[meta]`, `[prune]`, `[fewshot]` and
//! `[benchmark]`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use subparse::experiment::BenchmarkSpec;
use subparse::model::ModelConfig;
use subparse::trainers::{FewshotConfig, GroupLrs, MetaConfig, OptimizerKind, TrainConfig};
use subparse::{Error, Result};

const SECTIONS: [&str; 6] = ["model", "train", "meta", "prune", "fewshot", "benchmark"];

/// Pruning hyperparameters that have no flag of their own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub finetune_epochs: usize,
    pub finetune_batch: usize,
    pub finetune_lr_encoder: f64,
    pub finetune_lr_classifier: f64,
    pub importance_sample: Option<usize>,
}

impl Default for PruneSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        PruneSection {
            finetune_epochs: 1,
            finetune_batch: 32,
            finetune_lr_encoder: t.encoder_lr,
            finetune_lr_classifier: t.classifier_lr,
            importance_sample: None,
        }
    }
}

/// Few-shot hyperparameters; missing learning rates fall back to the
/// values stored with the checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewshotSection {
    pub lr_encoder: Option<f64>,
    pub lr_classifier: Option<f64>,
    pub optimizer: Option<OptimizerKind>,
}

#[derive(Clone, Debug, Default)]
pub struct Sections {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub meta: MetaConfig,
    pub prune: PruneSection,
    pub fewshot: FewshotSection,
    pub benchmark: BenchmarkSpec,
}

fn section<T: DeserializeOwned + Default>(file: &Map<String, Value>, name: &str) -> Result<T> {
    match file.get(name) {
        None => Ok(T::default()),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::usage(format!("config [{name}]: {e}"))),
    }
}

/// A parsed config file (empty when none was given).
#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    table: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| Error::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let value = serde_json::to_value(table).map_err(|e| Error::contract(e.to_string()))?;
        let Value::Object(table) = value else { unreachable!("a TOML table is an object") };
        Ok(ConfigFile { table })
    }

    pub fn sections(&self) -> Result<Sections> {
        Ok(Sections {
            model: section(&self.table, "model")?,
            train: section(&self.table, "train")?,
            meta: section(&self.table, "meta")?,
            prune: section(&self.table, "prune")?,
            fewshot: section(&self.table, "fewshot")?,
            benchmark: section(&self.table, "benchmark")?,
        })
    }

    /// Overlays explicitly given flags on the file's top-level keys and
    /// deserializes the result. Unknown file keys are rejected.
    pub fn merge<T: Serialize + DeserializeOwned>(&self, flags: &T) -> Result<T> {
        let Value::Object(given) = serde_json::to_value(flags).map_err(|e| Error::contract(e.to_string()))? else {
            return Err(Error::contract("flags must serialize to a map"));
        };
        let mut merged = Map::new();
        for (k, v) in &self.table {
            if SECTIONS.contains(&k.as_str()) || k == "config" {
                continue;
            }
            if !given.contains_key(k) {
                return Err(Error::usage(format!("unknown config key '{k}'")));
            }
            merged.insert(k.clone(), v.clone());
        }
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::usage(format!("config: {e}")))
    }
}

pub fn fewshot_config(base: GroupLrs, section: &FewshotSection, shots: usize, steps: usize, seeds: usize) -> FewshotConfig {
    FewshotConfig {
        shots,
        steps,
        lrs: GroupLrs::new(
            section.lr_encoder.unwrap_or(base.encoder),
            section.lr_classifier.unwrap_or(base.classifier),
        ),
        optimizer: section.optimizer.unwrap_or(OptimizerKind::Sgd),
        seeds: (0..seeds as u64).collect(),
    }
}
