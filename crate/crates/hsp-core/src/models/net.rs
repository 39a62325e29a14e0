//! Fully connected feedforward network: rectifier hidden layers, logistic
//! output, cross-entropy loss, seeded mini-batch gradient descent on
//! standardized inputs. `Mlp` exposes flat parameter access and analytic
//! gradients so the loss surface can be checked against finite differences.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::standardize::Standardizer;
use super::{
    check_prediction_input, Classifier, ModelError, ModelFamily, ModelParams, ModelSpec, SavedModel,
};
use crate::dataset::{Label, LabeledDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    /// Row-major: `weights[out][in]`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl LayerState {
    fn zeros_like(&self) -> LayerState {
        LayerState {
            weights: self.weights.iter().map(|r| vec![0.0; r.len()]).collect(),
            biases: vec![0.0; self.biases.len()],
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Cross-entropy of a logistic output, computed from the logit.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln()
}

/// The bare network: hidden ReLU layers and a single linear output unit
/// whose logit feeds the logistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<LayerState>,
}

impl Mlp {
    /// Xavier-uniform initialization; `dims` runs input..=output.
    pub fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        assert!(dims.len() >= 2, "network needs input and output dims");
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = (0..fan_out)
                .map(|_| (0..fan_in).map(|_| rng.gen_range(-limit..limit)).collect())
                .collect();
            layers.push(LayerState { weights, biases: vec![0.0; fan_out] });
        }
        Mlp { layers }
    }

    /// Activations per layer, input first, logit vector last.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = acts.last().expect("non-empty");
            let last_layer = l + 1 == self.layers.len();
            let z: Vec<f64> = layer
                .weights
                .iter()
                .zip(&layer.biases)
                .map(|(wrow, b)| {
                    let s: f64 = wrow.iter().zip(prev).map(|(w, a)| w * a).sum();
                    let z = s + b;
                    if last_layer {
                        z
                    } else {
                        z.max(0.0)
                    }
                })
                .collect();
            acts.push(z);
        }
        acts
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.activations(x).last().expect("output layer")[0]
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, rows: &[Vec<f64>], targets: &[f64]) -> f64 {
        let total: f64 = rows
            .iter()
            .zip(targets)
            .map(|(x, &y)| bce_with_logit(self.logit(x), y))
            .sum();
        total / rows.len() as f64
    }

    /// Mean analytic gradient of `loss` over the batch, same shapes as the
    /// layers.
    pub fn grad(&self, rows: &[Vec<f64>], targets: &[f64]) -> Vec<LayerState> {
        let mut grads: Vec<LayerState> = self.layers.iter().map(LayerState::zeros_like).collect();
        for (x, &y) in rows.iter().zip(targets) {
            let acts = self.activations(x);
            let logit = acts.last().expect("output layer")[0];
            // dL/dz at the output; hidden deltas follow by backprop through
            // the rectifier (its derivative read off the activation sign).
            let mut delta = vec![sigmoid(logit) - y];
            for l in (0..self.layers.len()).rev() {
                let prev_act = &acts[l];
                for (o, d) in delta.iter().enumerate() {
                    for (i, a) in prev_act.iter().enumerate() {
                        grads[l].weights[o][i] += d * a;
                    }
                    grads[l].biases[o] += d;
                }
                if l == 0 {
                    break;
                }
                let mut next_delta = vec![0.0; prev_act.len()];
                for (o, d) in delta.iter().enumerate() {
                    for (i, nd) in next_delta.iter_mut().enumerate() {
                        *nd += self.layers[l].weights[o][i] * d;
                    }
                }
                for (nd, a) in next_delta.iter_mut().zip(prev_act) {
                    if *a <= 0.0 {
                        *nd = 0.0;
                    }
                }
                delta = next_delta;
            }
        }
        let scale = 1.0 / rows.len() as f64;
        for g in &mut grads {
            for row in &mut g.weights {
                for w in row {
                    *w *= scale;
                }
            }
            for b in &mut g.biases {
                *b *= scale;
            }
        }
        grads
    }

    fn step(&mut self, grads: &[LayerState], lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads) {
            for (wrow, grow) in layer.weights.iter_mut().zip(&g.weights) {
                for (w, gw) in wrow.iter_mut().zip(grow) {
                    *w -= lr * gw;
                }
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= lr * gb;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(Vec::len).sum::<usize>() + l.biases.len())
            .sum()
    }

    pub fn get_param(&self, mut idx: usize) -> f64 {
        for layer in &self.layers {
            for row in &layer.weights {
                if idx < row.len() {
                    return row[idx];
                }
                idx -= row.len();
            }
            if idx < layer.biases.len() {
                return layer.biases[idx];
            }
            idx -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut idx: usize, value: f64) {
        for layer in &mut self.layers {
            for row in &mut layer.weights {
                if idx < row.len() {
                    row[idx] = value;
                    return;
                }
                idx -= row.len();
            }
            if idx < layer.biases.len() {
                layer.biases[idx] = value;
                return;
            }
            idx -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Analytic gradient flattened in parameter-index order.
    pub fn grad_flat(&self, rows: &[Vec<f64>], targets: &[f64]) -> Vec<f64> {
        let grads = self.grad(rows, targets);
        let mut flat = Vec::with_capacity(self.param_count());
        for g in &grads {
            for row in &g.weights {
                flat.extend_from_slice(row);
            }
            flat.extend_from_slice(&g.biases);
        }
        flat
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetState {
    pub mlp: Mlp,
    pub standardizer: Standardizer,
}

pub struct FeedforwardNetModel {
    spec: ModelSpec,
    columns: Vec<String>,
    state: NetState,
}

impl FeedforwardNetModel {
    pub fn from_parts(spec: ModelSpec, columns: Vec<String>, state: NetState) -> Self {
        FeedforwardNetModel { spec, columns, state }
    }
}

impl Classifier for FeedforwardNetModel {
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
                let x = self.state.standardizer.transform_row(r);
                if self.state.mlp.logit(&x) > 0.0 {
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
            state: super::ModelState::FeedforwardNet(self.state.clone()),
        }
    }
}

pub struct FeedforwardNetFamily;

impl ModelFamily for FeedforwardNetFamily {
    fn name(&self) -> &'static str {
        "feedforward_net"
    }

    fn train(
        &self,
        spec: &ModelSpec,
        data: &LabeledDataset,
    ) -> Result<Box<dyn Classifier>, ModelError> {
        let ModelParams::FeedforwardNet { ref hidden_sizes, epochs, learning_rate, batch_size } =
            spec.params
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
            .map(|l| if *l == Label::Malicious { 1.0 } else { 0.0 })
            .collect();
        let mut dims = vec![data.columns.len()];
        dims.extend_from_slice(hidden_sizes);
        dims.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut mlp = Mlp::random(&dims, &mut rng);
        let batch_size = batch_size.max(1);
        let mut order: Vec<usize> = (0..x.len()).collect();
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch_size) {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| x[i].clone()).collect();
                let ys: Vec<f64> = chunk.iter().map(|&i| y[i]).collect();
                let grads = mlp.grad(&rows, &ys);
                mlp.step(&grads, learning_rate);
            }
        }
        Ok(Box::new(FeedforwardNetModel {
            spec: spec.clone(),
            columns: data.columns.clone(),
            state: NetState { mlp, standardizer },
        }))
    }
}
