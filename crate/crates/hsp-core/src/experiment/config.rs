//! Declarative experiment configuration (TOML).
//!
//! ```toml
//! datasets = ["capture_a.labeled.csv", "capture_b.labeled.csv"]
//! split_fraction = 0.8
//! trials = 5
//! base_seed = 7
//!
//! [scenario]
//! goal = "brute-force the lab ssh server without tripping the detector"
//! knowledge = "detector trained on the persistent variant"
//! capabilities = "shell on one compromised workstation, no root"
//! hosts = "10.9.0.0/24 workstation"
//! baseline_ops = "patator_p1"
//! perturbed_ops = "patator_p0"
//!
//! [[models]]
//! kind = "decision_tree"
//! max_depth = 12
//!
//! [[models]]
//! kind = "feedforward_net"
//! hidden_sizes = [64, 64]
//!
//! [retrain]
//! enabled = true
//! augment_fraction = 0.8
//! ```

//! Top-level keys come before the first section header, as usual in TOML.
//!
//! Each dataset path is a labeled flow CSV; rows carry their own labels
//! and variant tags, and the scenario names the two tags under test.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{ExperimentConfig, ExperimentError, ScenarioSpec};
use crate::dataset::{read_labeled_csv, DatasetError, LabeledDataset};
use crate::models::{ModelParams, ModelSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config lists no datasets")]
    NoDatasets,
    #[error("config lists no models")]
    NoModels,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

fn default_split_fraction() -> f64 {
    0.8
}

fn default_trials() -> usize {
    5
}

fn default_augment_fraction() -> f64 {
    0.8
}

#[derive(Debug, Deserialize)]
struct ModelEntry {
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(flatten)]
    params: ModelParams,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrainSection {
    #[serde(default)]
    enabled: bool,
    #[serde(default = "default_augment_fraction")]
    augment_fraction: f64,
}

impl Default for RetrainSection {
    fn default() -> Self {
        RetrainSection { enabled: false, augment_fraction: default_augment_fraction() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: ScenarioSpec,
    datasets: Vec<PathBuf>,
    models: Vec<ModelEntry>,
    #[serde(default = "default_split_fraction")]
    split_fraction: f64,
    #[serde(default = "default_trials")]
    trials: usize,
    #[serde(default)]
    base_seed: u64,
    #[serde(default)]
    retrain: Option<RetrainSection>,
}

/// A parsed experiment file: the runnable config, the dataset paths, and
/// whether the retraining pass is enabled.
#[derive(Debug)]
pub struct LoadedExperiment {
    pub config: ExperimentConfig,
    pub dataset_paths: Vec<PathBuf>,
    pub retrain_enabled: bool,
}

impl LoadedExperiment {
    /// Read and concatenate the labeled datasets (columns must agree).
    pub fn load_data(&self, base_dir: &Path) -> Result<LabeledDataset, ConfigError> {
        let mut parts = Vec::new();
        for path in &self.dataset_paths {
            let resolved = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            parts.push(read_labeled_csv(&resolved)?);
        }
        let refs: Vec<&LabeledDataset> = parts.iter().collect();
        Ok(LabeledDataset::concat(&refs)?)
    }
}

pub fn parse_experiment(text: &str) -> Result<LoadedExperiment, ConfigError> {
    let ConfigFile { scenario, datasets, models: entries, split_fraction, trials, base_seed, retrain } =
        toml::from_str(text)?;
    if datasets.is_empty() {
        return Err(ConfigError::NoDatasets);
    }
    if entries.is_empty() {
        return Err(ConfigError::NoModels);
    }
    scenario.validate()?;

    let mut models = Vec::new();
    let mut seen = std::collections::HashMap::new();
    for entry in entries {
        let base = entry.label.clone().unwrap_or_else(|| entry.params.kind_name().to_string());
        let n = seen.entry(base.clone()).and_modify(|n| *n += 1).or_insert(0usize);
        let label = if *n == 0 { base } else { format!("{base}#{n}") };
        models.push((label, ModelSpec::new(entry.params, entry.seed)));
    }

    let retrain = retrain.unwrap_or_default();
    Ok(LoadedExperiment {
        config: ExperimentConfig {
            scenario,
            models,
            split_fraction,
            trials,
            base_seed,
            augment_fraction: retrain.augment_fraction,
        },
        dataset_paths: datasets,
        retrain_enabled: retrain.enabled,
    })
}

/// Parse an experiment config file from disk.
pub fn load_experiment(path: &Path) -> Result<LoadedExperiment, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_experiment(&text)
}
