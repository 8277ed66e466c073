use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeConfig};
use super::Classifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features drawn per split; defaults to `max(1, floor(sqrt(d)))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl ForestConfig {
    pub fn new(n_trees: usize, max_depth: usize) -> Self {
        ForestConfig {
            n_trees,
            max_depth,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_features: usize,
    n_classes: usize,
}

impl RandomForest {
    /// Each tree gets its own seed drawn from a master generator, so trees
    /// can be grown in parallel without changing the result.
    pub fn fit(data: &Dataset, cfg: &ForestConfig, seed: u64) -> Result<Self> {
        if cfg.n_trees == 0 {
            return Err(Error::invalid("n_trees must be >= 1"));
        }
        if data.is_empty() {
            return Err(Error::EmptyData("random forest training"));
        }
        let n = data.len();
        let d = data.n_features();
        let tree_cfg = TreeConfig {
            max_depth: cfg.max_depth,
            max_features: Some(cfg.max_features.unwrap_or(((d as f64).sqrt().floor() as usize).max(1))),
        };
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..cfg.n_trees).map(|_| master.next_u64()).collect();
        let trees = seeds
            .par_iter()
            .map(|&s| {
                let rows = if cfg.bootstrap {
                    let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x9e37_79b9_7f4a_7c15);
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit_rows(data, rows, &tree_cfg, s)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RandomForest {
            trees,
            n_features: d,
            n_classes: data.n_classes(),
        })
    }

    pub fn trees(&self) -> &[DecisionTree] {
        &self.trees
    }
}

impl Classifier for RandomForest {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn posterior(&self, x: &Matrix) -> Result<Matrix> {
        super::check_input(x, self.n_features)?;
        let mut acc = Matrix::zeros(x.rows(), self.n_classes);
        for t in &self.trees {
            acc.add_assign(&t.posterior(x)?);
        }
        let k = self.trees.len() as f64;
        Ok(acc.map(|v| v / k))
    }

    /// Mean of the per-tree normalized importances.
    fn feature_importances(&self) -> Option<Vec<f64>> {
        let mut imp = vec![0.0; self.n_features];
        for t in &self.trees {
            for (a, b) in imp.iter_mut().zip(t.feature_importances()?) {
                *a += b;
            }
        }
        let s: f64 = imp.iter().sum();
        Some(imp.into_iter().map(|v| v / s).collect())
    }
}
