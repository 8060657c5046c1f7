//! Decision-tree ensemble classifier: bootstrap sampling per tree, entropy
//! splits over a random feature subset, page-disjoint k-fold evaluation,
//! information-gain importances, and per-prediction contribution breakdowns.

mod tree;

pub use tree::{build_tree, entropy, info_gain, TrainData, TreeNode, TreeParams};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{feature_category, FeatureSetId};
use crate::graph::NodeId;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_min_samples_split")]
    pub min_samples_split: usize,
    /// Features tried per split; `None` means `max(1, floor(sqrt(n)))`.
    #[serde(default)]
    pub features_per_split: Option<usize>,
}

fn default_n_trees() -> usize {
    100
}
fn default_max_depth() -> usize {
    20
}
fn default_min_samples_split() -> usize {
    2
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_trees: default_n_trees(),
            max_depth: default_max_depth(),
            min_samples_split: default_min_samples_split(),
            features_per_split: None,
        }
    }
}

/// One labeled feature row, tagged with its page for fold construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub page_id: String,
    pub node_id: NodeId,
    pub values: Vec<f64>,
    pub ats: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_set: FeatureSetId,
    pub feature_names: Vec<String>,
    pub rows: Vec<DataRow>,
}

impl Dataset {
    /// Page ids in first-appearance order.
    pub fn page_ids(&self) -> Vec<String> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for row in &self.rows {
            if seen.insert(row.page_id.clone()) {
                out.push(row.page_id.clone());
            }
        }
        out
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("training data holds a single class")]
    SingleClassTraining,
    #[error("training data is empty")]
    EmptyDataset,
    #[error("feature vector does not match the model's feature set")]
    FeatureSetMismatch,
    #[error("need at least {needed} pages for {k} folds")]
    TooFewPages { needed: usize, k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel {
    pub feature_set: FeatureSetId,
    pub feature_names: Vec<String>,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    /// `[non_ats, ats]` counts over the training rows.
    pub class_counts: [usize; 2],
    pub trees: Vec<TreeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub ats: bool,
    /// Mean leaf ATS-probability across trees, in `[0, 1]`.
    pub score: f64,
}

/// Trains an ensemble. Deterministic in `(rows, hyperparams, seed)`: each
/// tree draws its bootstrap sample and split features from a stream derived
/// from `(seed, tree_index)`, so the result does not depend on scheduling.
pub fn train(
    dataset: &Dataset,
    hyperparams: &Hyperparams,
    seed: u64,
) -> Result<TreeEnsembleModel, ModelError> {
    if dataset.rows.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let labels: Vec<bool> = dataset.rows.iter().map(|r| r.ats).collect();
    let ats = labels.iter().filter(|&&l| l).count();
    if ats == 0 || ats == labels.len() {
        return Err(ModelError::SingleClassTraining);
    }
    let n_features = dataset.feature_names.len();
    let columns: Vec<Vec<f64>> = (0..n_features)
        .map(|f| dataset.rows.iter().map(|r| r.values[f]).collect())
        .collect();
    let data = TrainData { columns: &columns, labels: &labels };
    let features_per_split = hyperparams
        .features_per_split
        .unwrap_or_else(|| ((n_features as f64).sqrt().floor() as usize).max(1));
    let params = TreeParams {
        max_depth: hyperparams.max_depth,
        min_samples_split: hyperparams.min_samples_split,
        features_per_split,
    };
    let n = dataset.rows.len();
    let trees: Vec<TreeNode> = (0..hyperparams.n_trees)
        .map(|t| {
            let mut rng = seed::stream(seed, "tree", t as u64);
            let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            build_tree(&data, &indices, &params, &mut rng)
        })
        .collect();
    Ok(TreeEnsembleModel {
        feature_set: dataset.feature_set,
        feature_names: dataset.feature_names.clone(),
        hyperparams: *hyperparams,
        seed,
        class_counts: [labels.len() - ats, ats],
        trees,
    })
}

/// Score is the mean leaf ATS-probability across trees; the label is ATS when
/// the score reaches 0.5.
pub fn predict(model: &TreeEnsembleModel, values: &[f64]) -> Result<Prediction, ModelError> {
    if values.len() != model.feature_names.len() {
        return Err(ModelError::FeatureSetMismatch);
    }
    let sum: f64 = model.trees.iter().map(|t| t.leaf_for(values).prob_ats()).sum();
    let score = sum / model.trees.len() as f64;
    Ok(Prediction { ats: score >= 0.5, score })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Mean root ATS-probability across trees.
    pub bias: f64,
    /// Per-feature probability deltas; `bias + sum == score` exactly.
    pub contributions: Vec<f64>,
    pub score: f64,
}

/// Decomposes a prediction into per-feature contributions along each tree's
/// decision path.
pub fn explain_prediction(
    model: &TreeEnsembleModel,
    values: &[f64],
) -> Result<Explanation, ModelError> {
    if values.len() != model.feature_names.len() {
        return Err(ModelError::FeatureSetMismatch);
    }
    let n_trees = model.trees.len() as f64;
    let mut contributions = vec![0.0; values.len()];
    let mut bias = 0.0;
    let mut score = 0.0;
    for tree in &model.trees {
        bias += tree.prob_ats();
        score += tree.path_contributions(values, &mut contributions);
    }
    bias /= n_trees;
    score /= n_trees;
    for c in &mut contributions {
        *c /= n_trees;
    }
    Ok(Explanation { bias, contributions, score })
}

/// Deterministic page-disjoint partition into `k` folds whose sizes differ by
/// at most one.
pub fn kfold_split(page_ids: &[String], k: usize, seed: u64) -> Result<Vec<Vec<String>>, ModelError> {
    if k == 0 || page_ids.len() < k {
        return Err(ModelError::TooFewPages { needed: k.max(1), k });
    }
    let mut shuffled: Vec<String> = page_ids.to_vec();
    let mut rng = seed::stream(seed, "kfold", 0);
    // Fisher-Yates, then deal round-robin.
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let mut folds = vec![Vec::new(); k];
    for (i, page) in shuffled.into_iter().enumerate() {
        folds[i % k].push(page);
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn record(&mut self, actual: bool, predicted: bool) {
        match (actual, predicted) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy_pct(&self) -> f64 {
        percent(self.tp + self.tn, self.total())
    }

    pub fn precision_pct(&self) -> f64 {
        percent(self.tp, self.tp + self.fp)
    }

    pub fn recall_pct(&self) -> f64 {
        percent(self.tp, self.tp + self.fn_)
    }
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Sample standard deviation; 0 for fewer than two observations.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_pages: Vec<String>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub confusion: Confusion,
    pub accuracy_pct: f64,
    pub precision_pct: f64,
    pub recall_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub feature_set: FeatureSetId,
    pub k: usize,
    pub seed: u64,
    pub hyperparams: Hyperparams,
    pub folds: Vec<FoldReport>,
    pub confusion_total: Confusion,
    pub accuracy_mean_pct: f64,
    pub accuracy_std_pct: f64,
    pub precision_mean_pct: f64,
    pub precision_std_pct: f64,
    pub recall_mean_pct: f64,
    pub recall_std_pct: f64,
}

/// Page-disjoint k-fold cross validation. Every fold trains its own model on
/// the remaining folds' rows; reported metrics are mean plus-minus sample
/// standard deviation across folds.
pub fn cross_validate(
    dataset: &Dataset,
    hyperparams: &Hyperparams,
    k: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<TreeEnsembleModel>), ModelError> {
    let pages = dataset.page_ids();
    let folds = kfold_split(&pages, k, seed)?;
    let mut fold_reports = Vec::new();
    let mut models = Vec::new();
    let mut confusion_total = Confusion::default();
    for (f, fold_pages) in folds.iter().enumerate() {
        let test_set: std::collections::BTreeSet<&String> = fold_pages.iter().collect();
        let train_rows: Vec<DataRow> = dataset
            .rows
            .iter()
            .filter(|r| !test_set.contains(&r.page_id))
            .cloned()
            .collect();
        let test_rows: Vec<&DataRow> =
            dataset.rows.iter().filter(|r| test_set.contains(&r.page_id)).collect();
        let train_ds = Dataset {
            feature_set: dataset.feature_set,
            feature_names: dataset.feature_names.clone(),
            rows: train_rows,
        };
        let model = train(&train_ds, hyperparams, seed::child_seed(seed, "fold", f as u64))?;
        let mut confusion = Confusion::default();
        for row in &test_rows {
            let pred = predict(&model, &row.values)?;
            confusion.record(row.ats, pred.ats);
        }
        confusion_total.tp += confusion.tp;
        confusion_total.fp += confusion.fp;
        confusion_total.tn += confusion.tn;
        confusion_total.fn_ += confusion.fn_;
        fold_reports.push(FoldReport {
            fold: f,
            test_pages: fold_pages.clone(),
            train_rows: train_ds.rows.len(),
            test_rows: test_rows.len(),
            confusion,
            accuracy_pct: confusion.accuracy_pct(),
            precision_pct: confusion.precision_pct(),
            recall_pct: confusion.recall_pct(),
        });
        models.push(model);
    }
    let acc: Vec<f64> = fold_reports.iter().map(|r| r.accuracy_pct).collect();
    let prec: Vec<f64> = fold_reports.iter().map(|r| r.precision_pct).collect();
    let rec: Vec<f64> = fold_reports.iter().map(|r| r.recall_pct).collect();
    let report = EvalReport {
        feature_set: dataset.feature_set,
        k,
        seed,
        hyperparams: *hyperparams,
        folds: fold_reports,
        confusion_total,
        accuracy_mean_pct: mean(&acc),
        accuracy_std_pct: sample_std(&acc),
        precision_mean_pct: mean(&prec),
        precision_std_pct: sample_std(&prec),
        recall_mean_pct: mean(&rec),
        recall_std_pct: sample_std(&rec),
    };
    Ok((report, models))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub category: String,
    pub mean_pct: f64,
    pub std_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
}

/// Per-model importance: sample-weighted entropy decrease summed per feature
/// and normalized to percentages that add up to 100.
pub fn model_importance(model: &TreeEnsembleModel) -> Vec<f64> {
    let n_features = model.feature_names.len();
    let mut total = vec![0.0; n_features];
    for tree in &model.trees {
        tree.accumulate_importance(tree.n(), &mut total);
    }
    let sum: f64 = total.iter().sum();
    if sum > 0.0 {
        for v in &mut total {
            *v = 100.0 * *v / sum;
        }
    }
    total
}

/// Importances averaged over models (one per fold), ranked by mean and tied
/// by name for a stable listing.
pub fn feature_importance(models: &[TreeEnsembleModel]) -> ImportanceReport {
    assert!(!models.is_empty(), "importance needs at least one model");
    let names = &models[0].feature_names;
    let per_model: Vec<Vec<f64>> = models.iter().map(model_importance).collect();
    let mut entries: Vec<ImportanceEntry> = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let series: Vec<f64> = per_model.iter().map(|m| m[i]).collect();
            ImportanceEntry {
                feature: name.clone(),
                category: feature_category(name).as_str().to_string(),
                mean_pct: mean(&series),
                std_pct: sample_std(&series),
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mean_pct
            .partial_cmp(&a.mean_pct)
            .expect("finite importances")
            .then_with(|| a.feature.cmp(&b.feature))
    });
    ImportanceReport { entries }
}


pub fn model_to_json(model: &TreeEnsembleModel) -> String {
    serde_json::to_string_pretty(model).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Result<TreeEnsembleModel, serde_json::Error> {
    serde_json::from_str(text)
}
