//! CART-style decision tree with Gini impurity.
//!
//! Candidate thresholds are midpoints between consecutive distinct values
//! of a feature; the best split minimizes weighted Gini impurity, with
//! ties broken by lowest feature index, then lowest threshold. A node may
//! split without impurity gain (needed for XOR-like patterns); recursion
//! stops on purity, the depth limit, the leaf-size limit, or when no
//! threshold separates the rows. Training is row-order independent.

use serde::{Deserialize, Serialize};

use super::{check_prediction_input, Classifier, ModelError, ModelFamily, ModelParams, ModelSpec, SavedModel};
use crate::dataset::{Label, LabeledDataset};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Leaf { label: Label },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeState {
    pub nodes: Vec<Node>,
}

impl TreeState {
    pub fn predict_row(&self, row: &[f64]) -> Label {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { label } => return *label,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Feature candidates offered to a node, by total feature count.
pub(crate) type FeatureSampler<'a> = dyn FnMut(usize) -> Vec<usize> + 'a;

pub(crate) struct TreeBuilder<'a> {
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [Label],
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> TreeBuilder<'a> {
    pub fn build(&self, indices: &[usize], sampler: &mut FeatureSampler<'_>) -> TreeState {
        let mut nodes = Vec::new();
        self.grow(indices, 0, sampler, &mut nodes);
        TreeState { nodes }
    }

    fn grow(
        &self,
        indices: &[usize],
        depth: usize,
        sampler: &mut FeatureSampler<'_>,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let malicious = indices.iter().filter(|&&i| self.labels[i] == Label::Malicious).count();
        let n = indices.len();
        let pure = malicious == 0 || malicious == n;
        let at_depth_limit = self.max_depth.is_some_and(|d| depth >= d);
        if pure || at_depth_limit || n < 2 * self.min_leaf {
            let idx = nodes.len();
            nodes.push(Node::Leaf { label: majority(malicious, n) });
            return idx;
        }
        let d = self.rows[indices[0]].len();
        let candidates = sampler(d);
        let Some(best) = self.best_split(indices, &candidates) else {
            let idx = nodes.len();
            nodes.push(Node::Leaf { label: majority(malicious, n) });
            return idx;
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.rows[i][best.feature] <= best.threshold);
        let idx = nodes.len();
        nodes.push(Node::Leaf { label: Label::Benign }); // placeholder
        let left = self.grow(&left_idx, depth + 1, sampler, nodes);
        let right = self.grow(&right_idx, depth + 1, sampler, nodes);
        nodes[idx] = Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        idx
    }

    /// Scan candidate features in ascending index order and thresholds in
    /// ascending value order, keeping strictly better scores only, which
    /// realizes the tie-break rule.
    fn best_split(&self, indices: &[usize], candidates: &[usize]) -> Option<BestSplit> {
        let n = indices.len();
        let mut best: Option<BestSplit> = None;
        let mut sorted: Vec<(f64, Label)> = Vec::with_capacity(n);
        for &feature in candidates {
            sorted.clear();
            sorted.extend(indices.iter().map(|&i| (self.rows[i][feature], self.labels[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total_mal = sorted.iter().filter(|(_, l)| *l == Label::Malicious).count();
            let mut left_n = 0usize;
            let mut left_mal = 0usize;
            for w in 0..n - 1 {
                left_n += 1;
                if sorted[w].1 == Label::Malicious {
                    left_mal += 1;
                }
                let (a, b) = (sorted[w].0, sorted[w + 1].0);
                if a == b {
                    continue;
                }
                let right_n = n - left_n;
                if left_n < self.min_leaf || right_n < self.min_leaf {
                    continue;
                }
                let threshold = a + (b - a) / 2.0;
                // Guard against midpoints that round onto `b`.
                if threshold >= b {
                    continue;
                }
                let right_mal = total_mal - left_mal;
                let score = (left_n as f64 / n as f64) * gini(left_mal, left_n)
                    + (right_n as f64 / n as f64) * gini(right_mal, right_n);
                if best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(BestSplit { score, feature, threshold });
                }
            }
        }
        best
    }
}

fn gini(malicious: usize, n: usize) -> f64 {
    let p = malicious as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Ties predict benign.
fn majority(malicious: usize, n: usize) -> Label {
    if 2 * malicious > n {
        Label::Malicious
    } else {
        Label::Benign
    }
}

pub struct DecisionTreeModel {
    spec: ModelSpec,
    columns: Vec<String>,
    state: TreeState,
}

impl DecisionTreeModel {
    pub fn from_parts(spec: ModelSpec, columns: Vec<String>, state: TreeState) -> Self {
        DecisionTreeModel { spec, columns, state }
    }

    pub fn state(&self) -> &TreeState {
        &self.state
    }
}

impl Classifier for DecisionTreeModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn columns(&self) -> &[String] {
        &self.columns
    }

    fn predict(&self, columns: &[String], rows: &[Vec<f64>]) -> Result<Vec<Label>, ModelError> {
        check_prediction_input(&self.columns, columns, rows)?;
        Ok(rows.iter().map(|r| self.state.predict_row(r)).collect())
    }

    fn saved(&self) -> SavedModel {
        SavedModel {
            format_version: super::MODEL_BLOB_VERSION,
            spec: self.spec.clone(),
            columns: self.columns.clone(),
            state: super::ModelState::DecisionTree(self.state.clone()),
        }
    }
}

pub struct DecisionTreeFamily;

impl ModelFamily for DecisionTreeFamily {
    fn name(&self) -> &'static str {
        "decision_tree"
    }

    fn train(
        &self,
        spec: &ModelSpec,
        data: &LabeledDataset,
    ) -> Result<Box<dyn Classifier>, ModelError> {
        let ModelParams::DecisionTree { max_depth, min_leaf } = spec.params else {
            return Err(ModelError::UnknownModel(
                spec.params.kind_name().to_string(),
                vec![self.name().to_string()],
            ));
        };
        let builder = TreeBuilder {
            rows: &data.rows,
            labels: &data.labels,
            max_depth,
            min_leaf: min_leaf.max(1),
        };
        let indices: Vec<usize> = (0..data.len()).collect();
        let mut all_features = |d: usize| (0..d).collect::<Vec<_>>();
        let state = builder.build(&indices, &mut all_features);
        Ok(Box::new(DecisionTreeModel {
            spec: spec.clone(),
            columns: data.columns.clone(),
            state,
        }))
    }
}
