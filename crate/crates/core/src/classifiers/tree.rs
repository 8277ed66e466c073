use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Improvements smaller than this are treated as ties.
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    /// Features drawn per split; `None` considers every feature.
    pub max_features: Option<usize>,
}

impl TreeConfig {
    pub fn with_depth(max_depth: usize) -> Self {
        TreeConfig {
            max_depth,
            max_features: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { counts: Vec<f64> },
}

/// CART classification tree with Gini impurity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    n_features: usize,
    n_classes: usize,
    nodes: Vec<TreeNode>,
    importances: Vec<f64>,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [usize],
    k: usize,
    cfg: &'a TreeConfig,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
    gains: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> Vec<f64> {
        let mut c = vec![0.0; self.k];
        for &i in rows {
            c[self.y[i]] += 1.0;
        }
        c
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x.cols();
        match self.cfg.max_features {
            Some(m) if m < d => {
                let mut f = sample(&mut self.rng, d, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    /// Lowest weighted child impurity over all midpoint thresholds; ties
    /// keep the lowest feature, then the lowest threshold.
    fn best_split(&mut self, rows: &[usize], counts: &[f64]) -> Option<BestSplit> {
        let n = rows.len() as f64;
        let mut best: Option<BestSplit> = None;
        let mut sorted = rows.to_vec();
        for f in self.candidate_features() {
            sorted.sort_by(|&a, &b| self.x.get(a, f).total_cmp(&self.x.get(b, f)));
            let mut left = vec![0.0; self.k];
            for (pos, &i) in sorted.iter().enumerate().take(sorted.len() - 1) {
                left[self.y[i]] += 1.0;
                let (v, next) = (self.x.get(i, f), self.x.get(sorted[pos + 1], f));
                if v == next {
                    continue;
                }
                let nl = (pos + 1) as f64;
                let right: Vec<f64> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let imp = (nl * gini(&left, nl) + (n - nl) * gini(&right, n - nl)) / n;
                if best.as_ref().is_none_or(|b| imp < b.impurity - TIE_EPS) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold: v + (next - v) / 2.0,
                        impurity: imp,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&rows);
        let n = rows.len() as f64;
        let node_gini = gini(&counts, n);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            counts: counts.clone(),
        });
        if depth >= self.cfg.max_depth || node_gini == 0.0 || rows.len() < 2 {
            return id;
        }
        let Some(split) = self.best_split(&rows, &counts) else {
            return id;
        };
        self.gains[split.feature] += n * (node_gini - split.impurity).max(0.0);
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&i| self.x.get(i, split.feature) <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

impl DecisionTree {
    pub fn fit(data: &Dataset, cfg: &TreeConfig, seed: u64) -> Result<Self> {
        let rows: Vec<usize> = (0..data.len()).collect();
        Self::fit_rows(data, rows, cfg, seed)
    }

    /// Fits on the given row indices; repeats act as sample weights.
    pub fn fit_rows(data: &Dataset, rows: Vec<usize>, cfg: &TreeConfig, seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyData("decision tree training"));
        }
        if cfg.max_depth < 1 {
            return Err(Error::invalid("max_depth must be >= 1"));
        }
        if cfg.max_features == Some(0) {
            return Err(Error::invalid("max_features must be >= 1"));
        }
        let d = data.n_features();
        let mut b = Builder {
            x: data.features(),
            y: data.labels(),
            k: data.n_classes(),
            cfg,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            gains: vec![0.0; d],
        };
        b.grow(rows, 0);
        let total: f64 = b.gains.iter().sum();
        let importances = if total > 0.0 {
            b.gains.iter().map(|g| g / total).collect()
        } else {
            vec![1.0 / d as f64; d]
        };
        Ok(DecisionTree {
            n_features: d,
            n_classes: data.n_classes(),
            nodes: b.nodes,
            importances,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match &nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    fn leaf(&self, row: &[f64]) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { counts } => return counts,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

impl Classifier for DecisionTree {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn posterior(&self, x: &Matrix) -> Result<Matrix> {
        super::check_input(x, self.n_features)?;
        let mut out = Matrix::zeros(x.rows(), self.n_classes);
        for (i, row) in x.iter_rows().enumerate() {
            let counts = self.leaf(row);
            let total: f64 = counts.iter().sum();
            for (o, c) in out.row_mut(i).iter_mut().zip(counts) {
                *o = c / total;
            }
        }
        Ok(out)
    }

    fn feature_importances(&self) -> Option<Vec<f64>> {
        Some(self.importances.clone())
    }
}
