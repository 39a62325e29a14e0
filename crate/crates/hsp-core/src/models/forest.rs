//! Random forest: bootstrapped trees with per-split feature subsampling,
//! majority vote. Tree `t` draws from an independent RNG stream derived
//! from (seed, t), so the result does not depend on training order.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{TreeBuilder, TreeState};
use super::{
    check_prediction_input, Classifier, FeatureSubsample, ModelError, ModelFamily, ModelParams,
    ModelSpec, SavedModel,
};
use crate::dataset::{Label, LabeledDataset};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestState {
    pub trees: Vec<TreeState>,
}

pub struct RandomForestModel {
    spec: ModelSpec,
    columns: Vec<String>,
    state: ForestState,
}

impl RandomForestModel {
    pub fn from_parts(spec: ModelSpec, columns: Vec<String>, state: ForestState) -> Self {
        RandomForestModel { spec, columns, state }
    }
}

impl Classifier for RandomForestModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn columns(&self) -> &[String] {
        &self.columns
    }

    fn predict(&self, columns: &[String], rows: &[Vec<f64>]) -> Result<Vec<Label>, ModelError> {
        check_prediction_input(&self.columns, columns, rows)?;
        Ok(rows
            .iter()
            .map(|row| {
                let votes = self
                    .state
                    .trees
                    .iter()
                    .filter(|t| t.predict_row(row) == Label::Malicious)
                    .count();
                // Ties predict benign, as in the single tree.
                if 2 * votes > self.state.trees.len() {
                    Label::Malicious
                } else {
                    Label::Benign
                }
            })
            .collect())
    }

    fn saved(&self) -> SavedModel {
        SavedModel {
            format_version: super::MODEL_BLOB_VERSION,
            spec: self.spec.clone(),
            columns: self.columns.clone(),
            state: super::ModelState::RandomForest(self.state.clone()),
        }
    }
}

pub struct RandomForestFamily;

impl ModelFamily for RandomForestFamily {
    fn name(&self) -> &'static str {
        "random_forest"
    }

    fn train(
        &self,
        spec: &ModelSpec,
        data: &LabeledDataset,
    ) -> Result<Box<dyn Classifier>, ModelError> {
        let ModelParams::RandomForest { n_trees, max_depth, min_leaf, feature_subsample, bootstrap } =
            spec.params
        else {
            return Err(ModelError::UnknownModel(
                spec.params.kind_name().to_string(),
                vec![self.name().to_string()],
            ));
        };
        let n = data.len();
        let builder = TreeBuilder {
            rows: &data.rows,
            labels: &data.labels,
            max_depth,
            min_leaf: min_leaf.max(1),
        };
        let mut trees = Vec::with_capacity(n_trees);
        for t in 0..n_trees {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(t as u64);
            let indices: Vec<usize> = if bootstrap {
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut sampler = |d: usize| match feature_subsample {
                FeatureSubsample::All => (0..d).collect::<Vec<_>>(),
                FeatureSubsample::Sqrt => {
                    let k = ((d as f64).sqrt().floor() as usize).max(1);
                    let mut picked = rand::seq::index::sample(&mut rng, d, k.min(d)).into_vec();
                    picked.sort_unstable();
                    picked
                }
            };
            trees.push(builder.build(&indices, &mut sampler));
        }
        Ok(Box::new(RandomForestModel {
            spec: spec.clone(),
            columns: data.columns.clone(),
            state: ForestState { trees },
        }))
    }
}
