//! Downstream learning algorithms and the frozen classifier set that feeds
//! the boundary-calibration loss.

mod forest;
mod mlp;
mod svm;
mod tree;

pub use forest::{ForestConfig, RandomForest};
pub use mlp::{MlpClassifier, MlpClassifierConfig};
pub use svm::{LinearSvm, Penalty, SvmConfig, SELECTION_EPS};
pub use tree::{DecisionTree, TreeConfig, TreeNode};

pub(crate) use mlp::cross_entropy;

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_half_indices, Dataset};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::tensor::Matrix;

pub const CLASSIFIER_FORMAT: &str = "bcgan-classifier/1";

pub trait Classifier: Send + Sync {
    fn n_classes(&self) -> usize;

    fn n_features(&self) -> usize;

    /// One row per input, each on the probability simplex.
    fn posterior(&self, x: &Matrix) -> Result<Matrix>;

    /// Argmax of the posterior, lowest class on ties.
    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.posterior(x)?.argmax_rows())
    }

    fn feature_importances(&self) -> Option<Vec<f64>> {
        None
    }

    /// Indices of features the model actually uses, for sparse models.
    fn selected_features(&self) -> Option<Vec<usize>> {
        None
    }
}

pub(crate) fn check_input(x: &Matrix, d: usize) -> Result<()> {
    if x.cols() != d {
        return Err(Error::ShapeMismatch {
            op: "classifier_input",
            left: x.shape(),
            right: (x.rows(), d),
        });
    }
    Ok(())
}

/// Fraction of rows of `data` predicted correctly.
pub fn accuracy(model: &dyn Classifier, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("accuracy"));
    }
    let pred = model.predict(data.features())?;
    let hits = pred.iter().zip(data.labels()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Any trained model, serializable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierModel {
    DecisionTree(DecisionTree),
    RandomForest(RandomForest),
    LinearSvm(LinearSvm),
    Mlp(MlpClassifier),
}

impl ClassifierModel {
    fn inner(&self) -> &dyn Classifier {
        match self {
            ClassifierModel::DecisionTree(m) => m,
            ClassifierModel::RandomForest(m) => m,
            ClassifierModel::LinearSvm(m) => m,
            ClassifierModel::Mlp(m) => m,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, CLASSIFIER_FORMAT, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        checkpoint::load(path, CLASSIFIER_FORMAT)
    }
}

impl Classifier for ClassifierModel {
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn posterior(&self, x: &Matrix) -> Result<Matrix> {
        self.inner().posterior(x)
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        self.inner().predict(x)
    }

    fn feature_importances(&self) -> Option<Vec<f64>> {
        self.inner().feature_importances()
    }

    fn selected_features(&self) -> Option<Vec<usize>> {
        self.inner().selected_features()
    }
}

/// A learning algorithm with its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Algorithm {
    DecisionTree { max_depth: usize },
    RandomForest { n_trees: usize, max_depth: usize },
    LinearSvm { c: f64, penalty: Penalty },
    Mlp { hidden: Vec<usize>, epochs: usize },
}

impl Algorithm {
    pub fn name(&self) -> String {
        match self {
            Algorithm::DecisionTree { max_depth } => format!("DT (d={max_depth})"),
            Algorithm::RandomForest { n_trees, max_depth } => format!("RF (n={n_trees}, d={max_depth})"),
            Algorithm::LinearSvm { .. } => "Linear SVM".to_string(),
            Algorithm::Mlp { hidden, .. } => {
                let w = hidden.first().copied().unwrap_or(0);
                if hidden.len() > 1 && hidden.iter().all(|&h| h == w) {
                    format!("MLP ({w}x{})", hidden.len())
                } else {
                    let parts: Vec<String> = hidden.iter().map(usize::to_string).collect();
                    format!("MLP ({})", parts.join(", "))
                }
            }
        }
    }

    pub fn train(&self, data: &Dataset, seed: u64) -> Result<ClassifierModel> {
        Ok(match self {
            Algorithm::DecisionTree { max_depth } => {
                ClassifierModel::DecisionTree(DecisionTree::fit(data, &TreeConfig::with_depth(*max_depth), seed)?)
            }
            Algorithm::RandomForest { n_trees, max_depth } => {
                ClassifierModel::RandomForest(RandomForest::fit(data, &ForestConfig::new(*n_trees, *max_depth), seed)?)
            }
            Algorithm::LinearSvm { c, penalty } => {
                ClassifierModel::LinearSvm(LinearSvm::fit(data, &SvmConfig::new(*c, *penalty))?)
            }
            Algorithm::Mlp { hidden, epochs } => ClassifierModel::Mlp(MlpClassifier::fit(
                data,
                &MlpClassifierConfig::with_hidden(hidden.clone(), *epochs),
                seed,
            )?),
        })
    }
}

/// DT(d=10), DT(d=20), linear SVM, MLP(100), MLP(200x2), RF(10,10), RF(10,20).
pub fn default_roster() -> Vec<Algorithm> {
    vec![
        Algorithm::DecisionTree { max_depth: 10 },
        Algorithm::DecisionTree { max_depth: 20 },
        Algorithm::LinearSvm {
            c: 1.0,
            penalty: Penalty::L2,
        },
        Algorithm::Mlp {
            hidden: vec![100],
            epochs: 100,
        },
        Algorithm::Mlp {
            hidden: vec![200, 200],
            epochs: 100,
        },
        Algorithm::RandomForest {
            n_trees: 10,
            max_depth: 10,
        },
        Algorithm::RandomForest {
            n_trees: 10,
            max_depth: 20,
        },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub k: usize,
    pub mlp: MlpClassifierConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            k: 6,
            mlp: MlpClassifierConfig::with_hidden(vec![64], 100),
        }
    }
}

/// One frozen classifier and the half of the training rows it saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainedMember {
    pub split_seed: u64,
    pub rows: Vec<usize>,
    pub model: MlpClassifier,
}

/// `k` MLPs, each trained on its own random half of `data`.
pub fn make_pretrained_set(data: &Dataset, cfg: &PretrainConfig, seed: u64) -> Result<Vec<PretrainedMember>> {
    if cfg.k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<(u64, u64)> = (0..cfg.k).map(|_| (master.next_u64(), master.next_u64())).collect();
    seeds
        .par_iter()
        .map(|&(split_seed, train_seed)| {
            let (rows, _) = split_half_indices(data.len(), split_seed)?;
            let model = MlpClassifier::fit(&data.subset(&rows), &cfg.mlp, train_seed)?;
            Ok(PretrainedMember { split_seed, rows, model })
        })
        .collect()
}

/// `feature_index,name,importance` rows.
pub fn write_importances(path: impl AsRef<Path>, names: &[String], importances: &[f64]) -> Result<()> {
    if names.len() != importances.len() {
        return Err(Error::invalid("one name per importance required"));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature_index", "name", "importance"])?;
    for (j, (n, v)) in names.iter().zip(importances).enumerate() {
        w.write_record([j.to_string(), n.clone(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
