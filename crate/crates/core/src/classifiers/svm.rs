use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::{softmax_rows, Matrix};

/// Weights below this magnitude count as unselected.
pub const SELECTION_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub penalty: Penalty,
    pub iterations: usize,
    /// Step size at iteration `t` is `step0 / sqrt(t + 1)`.
    pub step0: f64,
}

impl SvmConfig {
    pub fn new(c: f64, penalty: Penalty) -> Self {
        SvmConfig {
            c,
            penalty,
            iterations: 1000,
            step0: 1.0,
        }
    }
}

/// One-vs-rest linear SVM. Each binary problem minimizes
/// `mean_i max(0, 1 - y_i (w·x_i + b)) + λ R(w)` with `λ = 1 / (C n)`,
/// `R = ||w||_1` or `||w||²/2`, by full-batch subgradient steps on the hinge
/// term followed by the proximal map of the penalty. The iterate with the
/// lowest objective is kept. Two-class problems use a single weight vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    /// `n_problems x d`.
    weights: Matrix,
    bias: Vec<f64>,
    n_classes: usize,
}

fn objective(x: &Matrix, y: &[f64], w: &[f64], b: f64, lambda: f64, penalty: Penalty) -> f64 {
    let hinge: f64 = x
        .iter_rows()
        .zip(y)
        .map(|(r, yi)| (1.0 - yi * (dot(r, w) + b)).max(0.0))
        .sum::<f64>()
        / y.len() as f64;
    let reg = match penalty {
        Penalty::L1 => w.iter().map(|v| v.abs()).sum::<f64>(),
        Penalty::L2 => 0.5 * w.iter().map(|v| v * v).sum::<f64>(),
    };
    hinge + lambda * reg
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn fit_binary(x: &Matrix, y: &[f64], cfg: &SvmConfig) -> (Vec<f64>, f64) {
    let (n, d) = (x.rows(), x.cols());
    let lambda = 1.0 / (cfg.c * n as f64);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut best = (w.clone(), b, objective(x, y, &w, b, lambda, cfg.penalty));
    let mut gw = vec![0.0; d];
    for t in 0..cfg.iterations {
        let eta = cfg.step0 / ((t + 1) as f64).sqrt();
        gw.fill(0.0);
        let mut gb = 0.0;
        for (r, &yi) in x.iter_rows().zip(y) {
            if yi * (dot(r, &w) + b) < 1.0 {
                for (g, v) in gw.iter_mut().zip(r) {
                    *g -= yi * v;
                }
                gb -= yi;
            }
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            let z = *wj - eta * g / n as f64;
            *wj = match cfg.penalty {
                Penalty::L1 => z.signum() * (z.abs() - eta * lambda).max(0.0),
                Penalty::L2 => z / (1.0 + eta * lambda),
            };
        }
        b -= eta * gb / n as f64;
        let obj = objective(x, y, &w, b, lambda, cfg.penalty);
        if obj < best.2 {
            best = (w.clone(), b, obj);
        }
    }
    (best.0, best.1)
}

impl LinearSvm {
    /// Training is deterministic and does not consume randomness.
    pub fn fit(data: &Dataset, cfg: &SvmConfig) -> Result<Self> {
        if !(cfg.c > 0.0 && cfg.c.is_finite()) {
            return Err(Error::invalid(format!("C must be > 0, got {}", cfg.c)));
        }
        if data.is_empty() {
            return Err(Error::EmptyData("linear svm training"));
        }
        let k = data.n_classes();
        let problems: Vec<usize> = if k == 2 { vec![1] } else { (0..k).collect() };
        let x = data.features();
        let mut weights = Matrix::zeros(problems.len(), x.cols());
        let mut bias = Vec::with_capacity(problems.len());
        for (p, &class) in problems.iter().enumerate() {
            let y: Vec<f64> = data
                .labels()
                .iter()
                .map(|&l| if l == class { 1.0 } else { -1.0 })
                .collect();
            let (w, b) = fit_binary(x, &y, cfg);
            weights.row_mut(p).copy_from_slice(&w);
            bias.push(b);
        }
        Ok(LinearSvm {
            weights,
            bias,
            n_classes: k,
        })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Per-class decision values; binary models return `[0, f(x)]`.
    pub fn decision_values(&self, x: &Matrix) -> Result<Matrix> {
        super::check_input(x, self.weights.cols())?;
        let mut out = Matrix::zeros(x.rows(), self.n_classes);
        for (i, r) in x.iter_rows().enumerate() {
            for (p, b) in self.bias.iter().enumerate() {
                let f = dot(r, self.weights.row(p)) + b;
                let col = if self.n_classes == 2 { 1 } else { p };
                out.set(i, col, f);
            }
        }
        Ok(out)
    }
}

impl Classifier for LinearSvm {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.weights.cols()
    }

    fn posterior(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.decision_values(x)?))
    }

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.decision_values(x)?.argmax_rows())
    }

    /// Largest absolute weight over the one-vs-rest problems.
    fn feature_importances(&self) -> Option<Vec<f64>> {
        Some(
            (0..self.weights.cols())
                .map(|j| (0..self.weights.rows()).map(|p| self.weights.get(p, j).abs()).fold(0.0, f64::max))
                .collect(),
        )
    }

    fn selected_features(&self) -> Option<Vec<usize>> {
        Some(
            self.feature_importances()?
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > SELECTION_EPS)
                .map(|(j, _)| j)
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{toy2d_generate, Schema, ToyKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn accuracy(m: &LinearSvm, d: &Dataset) -> f64 {
        let p = m.predict(d.features()).unwrap();
        p.iter().zip(d.labels()).filter(|(a, b)| a == b).count() as f64 / d.len() as f64
    }

    #[test]
    fn separable_one_d() {
        let xs = [[0.0], [0.1], [0.2], [0.3], [0.7], [0.8], [0.9], [1.0]];
        let d = Dataset::new(Matrix::from_rows(&xs).unwrap(), vec![0, 0, 0, 0, 1, 1, 1, 1], Schema::unit_continuous(1, 2)).unwrap();
        let m = LinearSvm::fit(&d, &SvmConfig::new(1.0, Penalty::L2)).unwrap();
        assert_eq!(accuracy(&m, &d), 1.0);
    }

    #[test]
    fn strong_l1_is_sparse() {
        let mut sparse = Vec::new();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..200).map(|_| (0..10).map(|_| rng.random()).collect()).collect();
            let labels = (0..200).map(|_| rng.random_range(0..2)).collect();
            let d = Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, Schema::unit_continuous(10, 2)).unwrap();
            let m = LinearSvm::fit(&d, &SvmConfig::new(1e-4, Penalty::L1)).unwrap();
            sparse.push(m.weights().data().iter().filter(|w| w.abs() < SELECTION_EPS).count());
        }
        sparse.sort_unstable();
        assert!(sparse[1] >= 5, "{sparse:?}");
    }

    #[test]
    fn duplicated_columns_keep_predictions() {
        let train = toy2d_generate(ToyKind::TwoGaussians, 200, 0.03, 1).unwrap();
        let test = toy2d_generate(ToyKind::TwoGaussians, 200, 0.03, 2).unwrap();
        let dup = |d: &Dataset| {
            let f = d.features().hstack(&d.features().select_cols(&[0])).unwrap();
            Dataset::new(f, d.labels().to_vec(), Schema::unit_continuous(3, 2)).unwrap()
        };
        let cfg = SvmConfig::new(1.0, Penalty::L2);
        let a = LinearSvm::fit(&train, &cfg).unwrap();
        let b = LinearSvm::fit(&dup(&train), &cfg).unwrap();
        assert_eq!(b.weights().get(0, 0), b.weights().get(0, 2));
        assert_eq!(a.predict(test.features()).unwrap(), b.predict(dup(&test).features()).unwrap());
    }

    #[test]
    fn multiclass_and_posterior() {
        let d = toy2d_generate(ToyKind::ThreeGaussians, 300, 0.05, 4).unwrap();
        let m = LinearSvm::fit(&d, &SvmConfig::new(1.0, Penalty::L2)).unwrap();
        assert!(accuracy(&m, &d) > 0.95);
        let p = m.posterior(d.features()).unwrap();
        assert_eq!(p.argmax_rows(), m.predict(d.features()).unwrap());
    }

    #[test]
    fn rejects_bad_c() {
        let d = toy2d_generate(ToyKind::TwoGaussians, 10, 0.05, 0).unwrap();
        assert!(LinearSvm::fit(&d, &SvmConfig::new(0.0, Penalty::L1)).is_err());
    }
}
