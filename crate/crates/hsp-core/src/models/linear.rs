//! Linear max-margin classifier: hinge loss with L2 regularization,
//! trained by seeded stochastic gradient steps on internally standardized
//! features.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::{
    check_prediction_input, Classifier, ModelError, ModelFamily, ModelParams, ModelSpec, SavedModel,
};
use crate::dataset::{Label, LabeledDataset};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearState {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
}

impl LinearState {
    pub fn decision(&self, row: &[f64]) -> f64 {
        let x = self.standardizer.transform_row(row);
        self.weights.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

pub struct LinearMarginModel {
    spec: ModelSpec,
    columns: Vec<String>,
    state: LinearState,
}

impl LinearMarginModel {
    pub fn from_parts(spec: ModelSpec, columns: Vec<String>, state: LinearState) -> Self {
        LinearMarginModel { spec, columns, state }
    }
}

impl Classifier for LinearMarginModel {
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
            .map(|r| {
                if self.state.decision(r) > 0.0 {
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
            state: super::ModelState::LinearMargin(self.state.clone()),
        }
    }
}

pub struct LinearMarginFamily;

impl ModelFamily for LinearMarginFamily {
    fn name(&self) -> &'static str {
        "linear_margin"
    }

    fn train(
        &self,
        spec: &ModelSpec,
        data: &LabeledDataset,
    ) -> Result<Box<dyn Classifier>, ModelError> {
        let ModelParams::LinearMargin { epochs, learning_rate, regularization } = spec.params
        else {
            return Err(ModelError::UnknownModel(
                spec.params.kind_name().to_string(),
                vec![self.name().to_string()],
            ));
        };
        let standardizer = Standardizer::fit(&data.rows);
        let x = standardizer.transform(&data.rows);
        let y: Vec<f64> = data
            .labels
            .iter()
            .map(|l| if *l == Label::Malicious { 1.0 } else { -1.0 })
            .collect();
        let d = data.columns.len();
        let mut weights = vec![0.0; d];
        let mut bias = 0.0;
        let mut order: Vec<usize> = (0..x.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let margin =
                    y[i] * (weights.iter().zip(&x[i]).map(|(w, v)| w * v).sum::<f64>() + bias);
                // L2 shrinkage applies to weights only, never the bias.
                if margin < 1.0 {
                    for (w, v) in weights.iter_mut().zip(&x[i]) {
                        *w += learning_rate * (y[i] * v - regularization * *w);
                    }
                    bias += learning_rate * y[i];
                } else {
                    for w in &mut weights {
                        *w -= learning_rate * regularization * *w;
                    }
                }
            }
        }
        Ok(Box::new(LinearMarginModel {
            spec: spec.clone(),
            columns: data.columns.clone(),
            state: LinearState { weights, bias, standardizer },
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::{accuracy, separable_dataset};
    use crate::models::ModelRegistry;

    fn spec(seed: u64) -> ModelSpec {
        ModelSpec::new(ModelParams::default_for("linear_margin").unwrap(), seed)
    }

    #[test]
    fn separates_margin_clusters() {
        let registry = ModelRegistry::builtin();
        let data = separable_dataset(60, 3);
        let model = registry.train(&spec(1), &data).unwrap();
        assert_eq!(accuracy(model.as_ref(), &data), 1.0);
    }

    #[test]
    fn training_is_deterministic() {
        let registry = ModelRegistry::builtin();
        let data = separable_dataset(40, 9);
        let a = registry.train(&spec(4), &data).unwrap();
        let b = registry.train(&spec(4), &data).unwrap();
        let probe = separable_dataset(25, 31);
        assert_eq!(
            a.predict(&probe.columns, &probe.rows).unwrap(),
            b.predict(&probe.columns, &probe.rows).unwrap()
        );
    }

    #[test]
    fn column_scaling_does_not_change_predictions() {
        // Power-of-two scaling keeps standardization bit-exact; wider
        // margins make the property hold for any positive factor.
        let registry = ModelRegistry::builtin();
        let data = separable_dataset(50, 17);
        for factor in [4.0, 0.25] {
            let mut scaled = data.clone();
            for row in &mut scaled.rows {
                row[0] *= factor;
            }
            let a = registry.train(&spec(2), &data).unwrap();
            let b = registry.train(&spec(2), &scaled).unwrap();
            let probe = separable_dataset(30, 5);
            let mut probe_scaled = probe.clone();
            for row in &mut probe_scaled.rows {
                row[0] *= factor;
            }
            assert_eq!(
                a.predict(&probe.columns, &probe.rows).unwrap(),
                b.predict(&probe_scaled.columns, &probe_scaled.rows).unwrap()
            );
        }
    }
}
