//! Deterministic classifier suite behind a name-keyed registry.
//!
//! Every model family implements [`ModelFamily`] and registers under a
//! stable name; experiment configs and the CLI select families by that
//! name. Trained models are [`Classifier`] trait objects that validate
//! their input columns and can be persisted as a versioned blob.
//!
//! All stochastic choices (bootstraps, shuffles, weight init) derive from
//! the spec seed, so training twice with the same spec and data yields
//! identical predictions everywhere.

pub mod forest;
pub mod linear;
pub mod net;
pub mod standardize;
pub mod tree;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, LabeledDataset};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("training set contains a single class")]
    SingleClassTrainingSet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("input columns do not match training columns")]
    ColumnMismatch,
    #[error("predictions and truth have different lengths")]
    LengthMismatch,
    #[error("unknown model kind {0:?}; registered: {1:?}")]
    UnknownModel(String, Vec<String>),
    #[error("row {0} has {1} values, expected {2}")]
    RaggedRow(usize, usize, usize),
    #[error("row {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("unsupported model blob version {0}")]
    BlobVersion(u32),
    #[error("model blob malformed: {0}")]
    BlobFormat(String),
}

/// Feature subsampling policy for forest splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubsample {
    /// floor(sqrt(d)) features per split (at least 1).
    Sqrt,
    /// All features at every split.
    All,
}

fn default_min_leaf() -> usize {
    1
}

fn default_n_trees() -> usize {
    50
}

fn default_subsample() -> FeatureSubsample {
    FeatureSubsample::Sqrt
}

fn default_bootstrap() -> bool {
    true
}

fn default_linear_epochs() -> usize {
    200
}

fn default_linear_lr() -> f64 {
    0.05
}

fn default_regularization() -> f64 {
    1e-4
}

fn default_hidden_sizes() -> Vec<usize> {
    vec![64, 64]
}

fn default_net_epochs() -> usize {
    50
}

fn default_net_lr() -> f64 {
    0.05
}

fn default_batch_size() -> usize {
    32
}

/// Hyperparameters, tagged by family name as used in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelParams {
    DecisionTree {
        #[serde(default)]
        max_depth: Option<usize>,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
    RandomForest {
        #[serde(default = "default_n_trees")]
        n_trees: usize,
        #[serde(default)]
        max_depth: Option<usize>,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
        #[serde(default = "default_subsample")]
        feature_subsample: FeatureSubsample,
        #[serde(default = "default_bootstrap")]
        bootstrap: bool,
    },
    LinearMargin {
        #[serde(default = "default_linear_epochs")]
        epochs: usize,
        #[serde(default = "default_linear_lr")]
        learning_rate: f64,
        #[serde(default = "default_regularization")]
        regularization: f64,
    },
    FeedforwardNet {
        #[serde(default = "default_hidden_sizes")]
        hidden_sizes: Vec<usize>,
        #[serde(default = "default_net_epochs")]
        epochs: usize,
        #[serde(default = "default_net_lr")]
        learning_rate: f64,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
    },
}

impl ModelParams {
    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelParams::DecisionTree { .. } => "decision_tree",
            ModelParams::RandomForest { .. } => "random_forest",
            ModelParams::LinearMargin { .. } => "linear_margin",
            ModelParams::FeedforwardNet { .. } => "feedforward_net",
        }
    }

    pub fn default_for(name: &str) -> Option<ModelParams> {
        let json = format!("{{\"kind\":\"{name}\"}}");
        serde_json::from_str(&json).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub params: ModelParams,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        ModelSpec { params, seed }
    }
}

/// A trained model. Prediction is a pure function and rejects matrices
/// whose column names differ from the training columns.
pub trait Classifier: Send + Sync {
    fn spec(&self) -> &ModelSpec;
    fn columns(&self) -> &[String];
    fn predict(&self, columns: &[String], rows: &[Vec<f64>]) -> Result<Vec<Label>, ModelError>;
    /// Serializable snapshot for persistence.
    fn saved(&self) -> SavedModel;
}

pub(crate) fn check_prediction_input(
    model_columns: &[String],
    columns: &[String],
    rows: &[Vec<f64>],
) -> Result<(), ModelError> {
    if model_columns != columns {
        return Err(ModelError::ColumnMismatch);
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(ModelError::RaggedRow(i, row.len(), columns.len()));
        }
    }
    Ok(())
}

/// One classifier family: a named training strategy.
pub trait ModelFamily: Send + Sync {
    fn name(&self) -> &'static str;
    fn train(
        &self,
        spec: &ModelSpec,
        data: &LabeledDataset,
    ) -> Result<Box<dyn Classifier>, ModelError>;
}

/// Name-keyed registry of model families.
pub struct ModelRegistry {
    families: BTreeMap<&'static str, Box<dyn ModelFamily>>,
}

impl ModelRegistry {
    /// Registry with the four built-in families.
    pub fn builtin() -> Self {
        let mut registry = ModelRegistry { families: BTreeMap::new() };
        registry.register(Box::new(tree::DecisionTreeFamily));
        registry.register(Box::new(forest::RandomForestFamily));
        registry.register(Box::new(linear::LinearMarginFamily));
        registry.register(Box::new(net::FeedforwardNetFamily));
        registry
    }

    pub fn register(&mut self, family: Box<dyn ModelFamily>) {
        self.families.insert(family.name(), family);
    }

    pub fn names(&self) -> Vec<String> {
        self.families.keys().map(|k| k.to_string()).collect()
    }

    pub fn train(
        &self,
        spec: &ModelSpec,
        data: &LabeledDataset,
    ) -> Result<Box<dyn Classifier>, ModelError> {
        let name = spec.params.kind_name();
        let family = self
            .families
            .get(name)
            .ok_or_else(|| ModelError::UnknownModel(name.to_string(), self.names()))?;
        validate_training_set(data)?;
        family.train(spec, data)
    }
}

fn validate_training_set(data: &LabeledDataset) -> Result<(), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let n_cols = data.columns.len();
    for (i, row) in data.rows.iter().enumerate() {
        if row.len() != n_cols {
            return Err(ModelError::RaggedRow(i, row.len(), n_cols));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
    }
    let has_benign = data.labels.contains(&Label::Benign);
    let has_malicious = data.labels.contains(&Label::Malicious);
    if !(has_benign && has_malicious) {
        return Err(ModelError::SingleClassTrainingSet);
    }
    Ok(())
}

pub const MODEL_BLOB_VERSION: u32 = 1;

/// Versioned, self-describing persisted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub spec: ModelSpec,
    pub columns: Vec<String>,
    pub state: ModelState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelState {
    DecisionTree(tree::TreeState),
    RandomForest(forest::ForestState),
    LinearMargin(linear::LinearState),
    FeedforwardNet(net::NetState),
}

impl SavedModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model state serializes")
    }

    pub fn from_json(text: &str) -> Result<SavedModel, ModelError> {
        let saved: SavedModel =
            serde_json::from_str(text).map_err(|e| ModelError::BlobFormat(e.to_string()))?;
        if saved.format_version != MODEL_BLOB_VERSION {
            return Err(ModelError::BlobVersion(saved.format_version));
        }
        Ok(saved)
    }

    pub fn into_classifier(self) -> Box<dyn Classifier> {
        let SavedModel { spec, columns, state, .. } = self;
        match state {
            ModelState::DecisionTree(state) => Box::new(tree::DecisionTreeModel::from_parts(spec, columns, state)),
            ModelState::RandomForest(state) => Box::new(forest::RandomForestModel::from_parts(spec, columns, state)),
            ModelState::LinearMargin(state) => Box::new(linear::LinearMarginModel::from_parts(spec, columns, state)),
            ModelState::FeedforwardNet(state) => Box::new(net::FeedforwardNetModel::from_parts(spec, columns, state)),
        }
    }
}

/// Confusion counts for binary detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

impl Metrics {
    /// Fraction of malicious rows predicted malicious; 0 when no malicious
    /// rows are present.
    pub fn tpr(&self) -> f64 {
        let pos = self.true_positives + self.false_negatives;
        if pos == 0 {
            0.0
        } else {
            self.true_positives as f64 / pos as f64
        }
    }

    /// Fraction of benign rows predicted malicious; 0 when no benign rows
    /// are present.
    pub fn fpr(&self) -> f64 {
        let neg = self.false_positives + self.true_negatives;
        if neg == 0 {
            0.0
        } else {
            self.false_positives as f64 / neg as f64
        }
    }
}

/// Exact confusion counts of predictions against truth.
pub fn evaluate(predictions: &[Label], truth: &[Label]) -> Result<Metrics, ModelError> {
    if predictions.len() != truth.len() {
        return Err(ModelError::LengthMismatch);
    }
    let mut m = Metrics {
        true_positives: 0,
        false_positives: 0,
        true_negatives: 0,
        false_negatives: 0,
    };
    for (&p, &t) in predictions.iter().zip(truth) {
        match (t, p) {
            (Label::Malicious, Label::Malicious) => m.true_positives += 1,
            (Label::Malicious, Label::Benign) => m.false_negatives += 1,
            (Label::Benign, Label::Malicious) => m.false_positives += 1,
            (Label::Benign, Label::Benign) => m.true_negatives += 1,
        }
    }
    Ok(m)
}
