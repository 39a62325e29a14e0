//! Seeded experiment runners: baseline training/evaluation, evaluation
//! against an unseen attack variant, and adversarial retraining with a
//! slice of that variant.
//!
//! Every trial derives all randomness from `base_seed + trial`, records
//! which global row indices went to training and testing, and fails hard
//! if the two ever intersect. Results aggregate to mean and sample std
//! per (model, train set, test set) cell.

pub mod config;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{
    sanitize, split_indices, DatasetError, Label, LabeledDataset, SanitizeReport, SplitMode,
};
use crate::models::{evaluate, Classifier, ModelError, ModelRegistry, ModelSpec};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("dataset has no rows for variant {0:?}")]
    MissingVariant(String),
    #[error("scenario baseline and perturbed variants are both {0:?}; they must differ")]
    IdenticalVariants(String),
    #[error("variant {tag:?} has too few rows to split ({rows})")]
    GroupTooSmall { tag: String, rows: usize },
    #[error("trial tables carry different cell keys")]
    CellKeyMismatch,
    #[error("train/test leakage detected in trial {trial}")]
    LeakageDetected { trial: usize },
    #[error("experiment has no models configured")]
    NoModels,
    #[error("experiment has zero trials configured")]
    NoTrials,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The threat-model record attached to every result table. Only the two
/// variant tags are machine-meaningful; the free-text fields document the
/// scenario under which the numbers were produced.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub goal: String,
    #[serde(default)]
    pub knowledge: String,
    #[serde(default)]
    pub capabilities: String,
    #[serde(default)]
    pub hosts: String,
    /// Variant tag the detector is trained on (O).
    pub baseline_ops: String,
    /// Variant tag of the alternative operations (O′).
    pub perturbed_ops: String,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.baseline_ops == self.perturbed_ops {
            return Err(ExperimentError::IdenticalVariants(self.baseline_ops.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    /// (row label, spec) per model, in table order.
    pub models: Vec<(String, ModelSpec)>,
    pub split_fraction: f64,
    pub trials: usize,
    pub base_seed: u64,
    /// Fraction of the perturbed variant added to training when
    /// retraining adversarially.
    pub augment_fraction: f64,
}

impl ExperimentConfig {
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Fpr,
    Tpr,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Fpr => write!(f, "fpr"),
            MetricKind::Tpr => write!(f, "tpr"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CellKey {
    pub model: String,
    pub train_set: String,
    pub test_set: String,
    pub metric: MetricKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellStat {
    pub mean: f64,
    pub std: f64,
    pub trials: usize,
}

/// One trial's raw metric per cell.
pub type TrialTable = BTreeMap<CellKey, f64>;

#[derive(Debug, Clone, Serialize)]
pub struct ResultTable {
    /// Hash of the experiment configuration that produced the table.
    pub provenance: String,
    /// Row order for the CSV rendering.
    pub model_order: Vec<String>,
    pub cells: BTreeMap<CellKey, CellStat>,
}

impl ResultTable {
    pub fn get(&self, model: &str, train_set: &str, test_set: &str, metric: MetricKind) -> Option<CellStat> {
        self.cells
            .get(&CellKey {
                model: model.to_string(),
                train_set: train_set.to_string(),
                test_set: test_set.to_string(),
                metric,
            })
            .copied()
    }

    /// Deterministic CSV: one row per model, one column pair per
    /// (train set, test set, metric).
    pub fn to_csv_string(&self) -> String {
        let mut columns: Vec<(String, String, MetricKind)> = self
            .cells
            .keys()
            .map(|k| (k.train_set.clone(), k.test_set.clone(), k.metric))
            .collect();
        columns.sort();
        columns.dedup();
        let mut out = String::from("Model");
        for (train, test, metric) in &columns {
            out.push_str(&format!(",{train}|{test}|{metric}_mean,{train}|{test}|{metric}_std"));
        }
        out.push('\n');
        for model in &self.model_order {
            out.push_str(model);
            for (train, test, metric) in &columns {
                match self.get(model, train, test, *metric) {
                    Some(stat) => out.push_str(&format!(",{:.6},{:.6}", stat.mean, stat.std)),
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Deterministic JSON: cells as a sorted array of records.
    pub fn to_json_string(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            model: &'a str,
            train_set: &'a str,
            test_set: &'a str,
            metric: MetricKind,
            mean: f64,
            std: f64,
            trials: usize,
        }
        #[derive(Serialize)]
        struct Doc<'a> {
            provenance: &'a str,
            model_order: &'a [String],
            cells: Vec<Record<'a>>,
        }
        let cells: Vec<Record<'_>> = self
            .cells
            .iter()
            .map(|(k, s)| Record {
                model: &k.model,
                train_set: &k.train_set,
                test_set: &k.test_set,
                metric: k.metric,
                mean: s.mean,
                std: s.std,
                trials: s.trials,
            })
            .collect();
        let doc = Doc {
            provenance: &self.provenance,
            model_order: &self.model_order,
            cells,
        };
        serde_json::to_string_pretty(&doc).expect("table serializes")
    }
}

/// Mean and sample standard deviation per cell across trials. All tables
/// must share the same key set; a single table yields std 0.
pub fn aggregate_trials(tables: &[TrialTable]) -> Result<BTreeMap<CellKey, CellStat>, ExperimentError> {
    let first = tables.first().ok_or(ExperimentError::NoTrials)?;
    for t in tables {
        if t.len() != first.len() || !t.keys().eq(first.keys()) {
            return Err(ExperimentError::CellKeyMismatch);
        }
    }
    let n = tables.len();
    let mut out = BTreeMap::new();
    for key in first.keys() {
        let values: Vec<f64> = tables.iter().map(|t| t[key]).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let all_equal = values.iter().all(|v| *v == values[0]);
        let std = if n < 2 || all_equal {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n as f64 - 1.0)).sqrt()
        };
        out.insert(key.clone(), CellStat { mean, std, trials: n });
    }
    Ok(out)
}

/// Everything a run produces beyond the table itself.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub leakage_checks_passed: usize,
    pub sanitize: SanitizeReport,
    /// Rows per (label, tag) after sanitization.
    pub group_counts: BTreeMap<String, usize>,
}

#[derive(Debug)]
pub struct ExperimentRun {
    pub table: ResultTable,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RunMode {
    Baseline,
    Hsp,
    Retrain,
}

/// Train on benign + the baseline variant; report fpr on held-out benign
/// and tpr on the held-out baseline variant.
pub fn run_baseline(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<ExperimentRun, ExperimentError> {
    run(cfg, data, RunMode::Baseline)
}

/// Baseline plus evaluation of every trial's models on *all* rows of the
/// perturbed variant, which never appears in training.
pub fn run_hsp(cfg: &ExperimentConfig, data: &LabeledDataset) -> Result<ExperimentRun, ExperimentError> {
    run(cfg, data, RunMode::Hsp)
}

/// Retrain with benign + baseline variant + `augment_fraction` of the
/// perturbed variant; report tpr on the perturbed hold-out, tpr on the
/// baseline variant test set, and fpr on the benign test set.
pub fn adversarial_retrain(
    cfg: &ExperimentConfig,
    data: &LabeledDataset,
) -> Result<ExperimentRun, ExperimentError> {
    run(cfg, data, RunMode::Retrain)
}

fn derive_seed(trial_seed: u64, salt: u64) -> u64 {
    // splitmix64 round over the salted trial seed.
    let mut z = trial_seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run(cfg: &ExperimentConfig, data: &LabeledDataset, mode: RunMode) -> Result<ExperimentRun, ExperimentError> {
    cfg.scenario.validate()?;
    if cfg.models.is_empty() {
        return Err(ExperimentError::NoModels);
    }
    if cfg.trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    let (ds, sanitize_report) = sanitize(data)?;

    let benign = ds.benign_indices();
    let o_rows = ds.variant_indices(&cfg.scenario.baseline_ops);
    let o_prime_rows = ds.variant_indices(&cfg.scenario.perturbed_ops);
    if benign.is_empty() {
        return Err(ExperimentError::MissingVariant("benign".to_string()));
    }
    if o_rows.is_empty() {
        return Err(ExperimentError::MissingVariant(cfg.scenario.baseline_ops.clone()));
    }
    if mode != RunMode::Baseline && o_prime_rows.is_empty() {
        return Err(ExperimentError::MissingVariant(cfg.scenario.perturbed_ops.clone()));
    }

    let registry = ModelRegistry::builtin();
    let o_tag = cfg.scenario.baseline_ops.clone();
    let op_tag = cfg.scenario.perturbed_ops.clone();
    let train_name = format!("benign+{o_tag}");
    let retrain_pct = (cfg.augment_fraction * 100.0).round() as u64;
    let retrain_name = format!("benign+{o_tag}+{op_tag}:{retrain_pct}pct");

    let mut trial_tables = Vec::with_capacity(cfg.trials);
    let mut leakage_checks = 0usize;

    for trial in 0..cfg.trials {
        let trial_seed = cfg.base_seed.wrapping_add(trial as u64);

        // Stratified split of benign + baseline variant.
        let mut base_pool: Vec<usize> = benign.iter().chain(o_rows.iter()).copied().collect();
        base_pool.sort_unstable();
        let pool_ds = ds.subset(&base_pool);
        let (train_local, test_local, _) =
            split_indices(&pool_ds, cfg.split_fraction, trial_seed, SplitMode::Stratified)?;
        let mut train_global: Vec<usize> = train_local.iter().map(|&i| base_pool[i]).collect();
        let test_global: Vec<usize> = test_local.iter().map(|&i| base_pool[i]).collect();

        // Optional augmentation with a slice of the perturbed variant. A
        // zero fraction collapses to the plain unseen-variant evaluation:
        // nothing joins training and the whole variant is the hold-out.
        let mut op_holdout_global: Vec<usize> = Vec::new();
        if mode == RunMode::Retrain {
            if cfg.augment_fraction == 0.0 {
                op_holdout_global = o_prime_rows.clone();
            } else {
                if o_prime_rows.len() < 2 {
                    return Err(ExperimentError::GroupTooSmall {
                        tag: op_tag.clone(),
                        rows: o_prime_rows.len(),
                    });
                }
                let op_ds = ds.subset(&o_prime_rows);
                let (aug_local, hold_local, _) = split_indices(
                    &op_ds,
                    cfg.augment_fraction,
                    derive_seed(trial_seed, 2),
                    SplitMode::Stratified,
                )?;
                if hold_local.is_empty() || aug_local.is_empty() {
                    return Err(ExperimentError::GroupTooSmall {
                        tag: op_tag.clone(),
                        rows: o_prime_rows.len(),
                    });
                }
                train_global.extend(aug_local.iter().map(|&i| o_prime_rows[i]));
                op_holdout_global = hold_local.iter().map(|&i| o_prime_rows[i]).collect();
            }
        }
        train_global.sort_unstable();

        // Leakage assertions over global row indices.
        let train_set: HashSet<usize> = train_global.iter().copied().collect();
        let overlap_test = test_global.iter().any(|i| train_set.contains(i));
        let overlap_hold = op_holdout_global.iter().any(|i| train_set.contains(i));
        let overlap_op_all =
            mode == RunMode::Hsp && o_prime_rows.iter().any(|i| train_set.contains(i));
        leakage_checks += 1;
        if overlap_test || overlap_hold || overlap_op_all {
            return Err(ExperimentError::LeakageDetected { trial });
        }

        let train_ds = ds.subset(&train_global);
        let test_ds = ds.subset(&test_global);
        let benign_test: Vec<usize> =
            (0..test_ds.len()).filter(|&i| test_ds.labels[i] == Label::Benign).collect();
        let o_test: Vec<usize> =
            (0..test_ds.len()).filter(|&i| test_ds.labels[i] == Label::Malicious).collect();

        let current_train_name = match mode {
            RunMode::Retrain => retrain_name.clone(),
            _ => train_name.clone(),
        };

        let mut table = TrialTable::new();
        for (label, spec) in &cfg.models {
            let effective = ModelSpec {
                params: spec.params.clone(),
                seed: spec.seed.wrapping_add(trial_seed),
            };
            let model = registry.train(&effective, &train_ds)?;

            let fpr = eval_rate(model.as_ref(), &test_ds, &benign_test, MetricKind::Fpr)?;
            table.insert(
                CellKey {
                    model: label.clone(),
                    train_set: current_train_name.clone(),
                    test_set: "benign".to_string(),
                    metric: MetricKind::Fpr,
                },
                fpr,
            );
            let tpr = eval_rate(model.as_ref(), &test_ds, &o_test, MetricKind::Tpr)?;
            table.insert(
                CellKey {
                    model: label.clone(),
                    train_set: current_train_name.clone(),
                    test_set: o_tag.clone(),
                    metric: MetricKind::Tpr,
                },
                tpr,
            );

            if mode == RunMode::Hsp {
                let op_ds = ds.subset(&o_prime_rows);
                let all: Vec<usize> = (0..op_ds.len()).collect();
                let tpr = eval_rate(model.as_ref(), &op_ds, &all, MetricKind::Tpr)?;
                table.insert(
                    CellKey {
                        model: label.clone(),
                        train_set: current_train_name.clone(),
                        test_set: format!("{op_tag}:all"),
                        metric: MetricKind::Tpr,
                    },
                    tpr,
                );
            }
            if mode == RunMode::Retrain {
                let hold_ds = ds.subset(&op_holdout_global);
                let all: Vec<usize> = (0..hold_ds.len()).collect();
                let tpr = eval_rate(model.as_ref(), &hold_ds, &all, MetricKind::Tpr)?;
                table.insert(
                    CellKey {
                        model: label.clone(),
                        train_set: current_train_name.clone(),
                        test_set: format!("{op_tag}:holdout"),
                        metric: MetricKind::Tpr,
                    },
                    tpr,
                );
            }
        }
        trial_tables.push(table);
    }

    let cells = aggregate_trials(&trial_tables)?;
    let table = ResultTable {
        provenance: cfg.hash(),
        model_order: cfg.models.iter().map(|(l, _)| l.clone()).collect(),
        cells,
    };
    let group_counts = ds
        .count_by_group()
        .into_iter()
        .map(|((label, tag), n)| (format!("{label}:{tag}"), n))
        .collect();
    Ok(ExperimentRun {
        table,
        summary: RunSummary {
            leakage_checks_passed: leakage_checks,
            sanitize: sanitize_report,
            group_counts,
        },
    })
}

fn eval_rate(
    model: &dyn Classifier,
    ds: &LabeledDataset,
    row_indices: &[usize],
    metric: MetricKind,
) -> Result<f64, ExperimentError> {
    let rows: Vec<Vec<f64>> = row_indices.iter().map(|&i| ds.rows[i].clone()).collect();
    let truth: Vec<Label> = row_indices.iter().map(|&i| ds.labels[i]).collect();
    let preds = model.predict(&ds.columns, &rows)?;
    let m = evaluate(&preds, &truth)?;
    Ok(match metric {
        MetricKind::Fpr => m.fpr(),
        MetricKind::Tpr => m.tpr(),
    })
}
