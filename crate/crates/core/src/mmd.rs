//! Gaussian kernels, the unbiased MMD² estimator and the
//! boundary-calibration loss built on top of it.
//!
//! The kernel is `k(x, y) = exp(-||x - y||² / (2σ²))`. The estimator is the
//! U-statistic
//!
//! ```text
//! MMD²_u = 1/(n(n-1)) Σ_{i≠i'} k(x_i, x_i') + 1/(m(m-1)) Σ_{j≠j'} k(y_j, y_j')
//!        - 2/(nm) Σ_{i,j} k(x_i, y_j)
//! ```
//!
//! which is unbiased and therefore can be negative when the two samples come
//! from the same distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_posterior, DifferentiableClassifier};
use crate::tensor::{Matrix, Tensor};

/// Kernel bandwidth selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "bandwidth", rename_all = "snake_case")]
pub enum KernelConfig {
    Fixed { sigma: f64 },
    /// σ from the pooled sample, recomputed on every call.
    #[default]
    MedianHeuristic,
}

impl KernelConfig {
    pub fn fixed(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidBandwidth(sigma));
        }
        Ok(KernelConfig::Fixed { sigma })
    }

    /// σ to use for the pooled sample `x ∪ y`.
    pub fn resolve(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        match *self {
            KernelConfig::Fixed { sigma } => {
                if sigma > 0.0 && sigma.is_finite() {
                    Ok(sigma)
                } else {
                    Err(Error::InvalidBandwidth(sigma))
                }
            }
            KernelConfig::MedianHeuristic => median_heuristic(&x.vstack(y)?),
        }
    }
}

/// Rows of classifier posteriors, each on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorMatrix(Matrix);

impl PosteriorMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        for (i, r) in m.iter_rows().enumerate() {
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 || r.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::invalid(format!("posterior row {i} is not on the simplex")));
            }
        }
        Ok(PosteriorMatrix(m))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(sigma))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `K[i][j] = exp(-||x_i - y_j||² / (2σ²))`.
pub fn gaussian_kernel(x: &Matrix, y: &Matrix, cfg: &KernelConfig) -> Result<Matrix> {
    if x.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            op: "gaussian_kernel",
            left: x.shape(),
            right: y.shape(),
        });
    }
    let sigma = cfg.resolve(x, y)?;
    Ok(kernel_with_sigma(x, y, sigma))
}

fn kernel_with_sigma(x: &Matrix, y: &Matrix, sigma: f64) -> Matrix {
    let denom = 2.0 * sigma * sigma;
    let mut k = Matrix::zeros(x.rows(), y.rows());
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            k.set(i, j, (-sq_dist(x.row(i), y.row(j)) / denom).exp());
        }
    }
    k
}

/// `σ = sqrt(median_{i<j} ||z_i - z_j||² / 2)` using the lower median;
/// falls back to 1 when the median distance is zero.
pub fn median_heuristic(z: &Matrix) -> Result<f64> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(z.row(i), z.row(j)));
        }
    }
    let mid = (d.len() - 1) / 2;
    let (_, med, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let med = *med;
    if med > 0.0 {
        Ok((med / 2.0).sqrt())
    } else {
        Ok(1.0)
    }
}

fn check_sizes(n: usize, m: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    if m < 2 {
        return Err(Error::TooFewSamples { need: 2, got: m });
    }
    Ok(())
}

/// Unbiased MMD² between the rows of `x` and `y`.
pub fn mmd2_unbiased(x: &Matrix, y: &Matrix, cfg: &KernelConfig) -> Result<f64> {
    check_sizes(x.rows(), y.rows())?;
    let kxy = gaussian_kernel(x, y, cfg)?;
    let sigma = cfg.resolve(x, y)?;
    let kxx = kernel_with_sigma(x, x, sigma);
    let kyy = kernel_with_sigma(y, y, sigma);
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    let off_diag = |k: &Matrix| -> f64 {
        let mut s = 0.0;
        for i in 0..k.rows() {
            for j in 0..k.cols() {
                if i != j {
                    s += k.get(i, j);
                }
            }
        }
        s
    };
    Ok(off_diag(&kxx) / (n * (n - 1.0)) + off_diag(&kyy) / (m * (m - 1.0))
        - 2.0 * kxy.sum() / (n * m))
}

/// Biased (V-statistic) MMD², always `>= 0` up to rounding.
pub fn mmd2_biased(x: &Matrix, y: &Matrix, cfg: &KernelConfig) -> Result<f64> {
    check_sizes(x.rows(), y.rows())?;
    let sigma = cfg.resolve(x, y)?;
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    Ok(kernel_with_sigma(x, x, sigma).sum() / (n * n) + kernel_with_sigma(y, y, sigma).sum() / (m * m)
        - 2.0 * kernel_with_sigma(x, y, sigma).sum() / (n * m))
}

/// Differentiable unbiased MMD². Either side may carry gradients.
pub fn mmd2_unbiased_tensor(x: &Tensor, y: &Tensor, sigma: f64) -> Result<Tensor> {
    check_sigma(sigma)?;
    check_sizes(x.rows(), y.rows())?;
    if x.cols() != y.cols() {
        return Err(Error::ShapeMismatch {
            op: "mmd2_unbiased",
            left: x.shape(),
            right: y.shape(),
        });
    }
    let c = -1.0 / (2.0 * sigma * sigma);
    let (n, m) = (x.rows() as f64, y.rows() as f64);
    let kernel_sum = |a: &Tensor, b: &Tensor| a.pairwise_sq_dists(b)?.scale(c)?.exp()?.sum();
    // Self-distances are exactly zero, so each diagonal contributes exactly n (or m).
    let xx = kernel_sum(x, x)?.add_scalar(-n)?.scale(1.0 / (n * (n - 1.0)))?;
    let yy = kernel_sum(y, y)?.add_scalar(-m)?.scale(1.0 / (m * (m - 1.0)))?;
    let xy = kernel_sum(x, y)?.scale(-2.0 / (n * m))?;
    xx.add(&yy)?.add(&xy)
}

/// Boundary-calibration loss: MMD² between the posteriors of a real batch
/// and a generated batch, averaged over the classifier set. Gradients flow
/// into `fake` only; the classifiers are frozen.
pub fn bc_loss(
    real: &Matrix,
    fake: &Tensor,
    classifiers: &[&dyn DifferentiableClassifier],
    cfg: &KernelConfig,
) -> Result<Tensor> {
    if classifiers.is_empty() {
        return Err(Error::invalid("boundary-calibration loss needs at least one classifier"));
    }
    check_sizes(real.rows(), fake.rows())?;
    let g = fake.graph();
    let mut total: Option<Tensor> = None;
    for c in classifiers {
        let real_post = softmax_posterior(&c.logits(real)?)?.into_matrix();
        let fake_post = c.logits_tensor(fake)?.softmax_rows()?;
        let sigma = cfg.resolve(&real_post, &fake_post.value())?;
        let term = mmd2_unbiased_tensor(&g.constant(real_post)?, &fake_post, sigma)?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    total
        .expect("non-empty classifier set")
        .scale(1.0 / classifiers.len() as f64)
}

/// Value-only boundary-calibration loss.
pub fn bc_loss_values(
    real: &Matrix,
    fake: &Matrix,
    classifiers: &[&dyn DifferentiableClassifier],
    cfg: &KernelConfig,
) -> Result<f64> {
    if classifiers.is_empty() {
        return Err(Error::invalid("boundary-calibration loss needs at least one classifier"));
    }
    let mut total = 0.0;
    for c in classifiers {
        let pr = softmax_posterior(&c.logits(real)?)?.into_matrix();
        let pf = softmax_posterior(&c.logits(fake)?)?.into_matrix();
        total += mmd2_unbiased(&pr, &pf, cfg)?;
    }
    Ok(total / classifiers.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, Graph};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn col(v: &[f64]) -> Matrix {
        Matrix::column_vector(v.to_vec())
    }

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, mean: f64) -> Matrix {
        let d = Normal::new(mean, 1.0).unwrap();
        col(&(0..n).map(|_| d.sample(rng)).collect::<Vec<_>>())
    }

    #[test]
    fn kernel_examples() {
        let one = KernelConfig::fixed(1.0).unwrap();
        let k = gaussian_kernel(&col(&[0.0]), &col(&[1.0]), &one).unwrap();
        assert!((k.get(0, 0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k.get(0, 0) - 0.60653).abs() < 1e-5);

        let x = Matrix::from_rows(&[[0.3, -1.0], [2.0, 0.5]]).unwrap();
        let k = gaussian_kernel(&x, &x, &KernelConfig::fixed(0.7).unwrap()).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        assert_eq!(k.get(1, 1), 1.0);

        let scaled = x.map(|v| v * 3.0);
        let k3 = gaussian_kernel(&scaled, &scaled, &KernelConfig::fixed(2.1).unwrap()).unwrap();
        assert!((k3.get(0, 1) - k.get(0, 1)).abs() < 1e-12);
    }

    #[test]
    fn kernel_errors() {
        assert!(KernelConfig::fixed(0.0).is_err());
        assert!(KernelConfig::fixed(-1.0).is_err());
        let bad = KernelConfig::Fixed { sigma: -2.0 };
        assert!(matches!(
            gaussian_kernel(&col(&[0.0]), &col(&[1.0]), &bad),
            Err(Error::InvalidBandwidth(_))
        ));
        assert!(gaussian_kernel(&Matrix::zeros(1, 2), &Matrix::zeros(1, 3), &KernelConfig::fixed(1.0).unwrap()).is_err());
    }

    #[test]
    fn median_heuristic_examples() {
        assert!((median_heuristic(&col(&[0.0, 2.0])).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(median_heuristic(&col(&[0.4, 0.4, 0.4])).unwrap(), 1.0);
        assert!(median_heuristic(&col(&[1.0])).is_err());
    }

    #[test]
    fn median_heuristic_under_duplication() {
        // pairwise squared distances enumerated by hand, lower median
        for base in [vec![0.0, 2.0], vec![0.0, 1.0, 3.0]] {
            let dup: Vec<f64> = base.iter().flat_map(|&v| [v, v]).collect();
            let a = median_heuristic(&col(&base)).unwrap();
            let b = median_heuristic(&col(&dup)).unwrap();
            assert_eq!(a, b);
        }
        assert!((median_heuristic(&col(&[0.0, 1.0, 3.0])).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mmd_hand_expansion() {
        let x = col(&[0.0, 1.0]);
        let one = KernelConfig::fixed(1.0).unwrap();
        let e = (-0.5f64).exp();
        let expected = 2.0 * e - (1.0 + e);
        assert!((mmd2_unbiased(&x, &x, &one).unwrap() - expected).abs() < 1e-12);
        assert!((expected + 0.39347).abs() < 1e-5);
    }

    #[test]
    fn point_masses_give_zero() {
        let x = col(&[0.25; 5]);
        assert_eq!(mmd2_unbiased(&x, &x, &KernelConfig::fixed(0.3).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn tensor_estimator_matches_value_estimator() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = gaussian(&mut rng, 7, 0.0).hstack(&gaussian(&mut rng, 7, 1.0)).unwrap();
        let y = gaussian(&mut rng, 5, 0.5).hstack(&gaussian(&mut rng, 5, 0.0)).unwrap();
        let cfg = KernelConfig::fixed(1.3).unwrap();
        let g = Graph::new();
        let t = mmd2_unbiased_tensor(&g.constant(x.clone()).unwrap(), &g.constant(y.clone()).unwrap(), 1.3).unwrap();
        assert!((t.scalar() - mmd2_unbiased(&x, &y, &cfg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn separated_gaussians_are_positive() {
        let mut vals = Vec::new();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = gaussian(&mut rng, 200, 0.0);
            let y = gaussian(&mut rng, 200, 5.0);
            vals.push(mmd2_unbiased(&x, &y, &KernelConfig::MedianHeuristic).unwrap());
        }
        vals.sort_by(f64::total_cmp);
        assert!(vals[1] > 0.5, "median {}", vals[1]);
    }

    #[test]
    fn too_few_samples() {
        let cfg = KernelConfig::fixed(1.0).unwrap();
        assert!(matches!(
            mmd2_unbiased(&col(&[0.0]), &col(&[0.0, 1.0]), &cfg),
            Err(Error::TooFewSamples { need: 2, got: 1 })
        ));
        let g = Graph::new();
        let a = g.constant(col(&[0.0, 1.0])).unwrap();
        let b = g.constant(col(&[0.0])).unwrap();
        assert!(mmd2_unbiased_tensor(&a, &b, 1.0).is_err());
    }

    #[test]
    fn gradient_wrt_second_sample_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = gaussian(&mut rng, 6, 0.0).hstack(&gaussian(&mut rng, 6, 0.0)).unwrap();
        let y = gaussian(&mut rng, 4, 0.7).hstack(&gaussian(&mut rng, 4, 0.0)).unwrap();
        let sigma = 0.9;
        let g = Graph::new();
        let yt = g.param(y.clone()).unwrap();
        let v = mmd2_unbiased_tensor(&g.constant(x.clone()).unwrap(), &yt, sigma).unwrap();
        let grad = backward(&v).unwrap().get(&yt);
        let cfg = KernelConfig::fixed(sigma).unwrap();
        let h = 1e-5;
        for k in 0..y.len() {
            let mut p = y.clone();
            p.data_mut()[k] += h;
            let mut m = y.clone();
            m.data_mut()[k] -= h;
            let num = (mmd2_unbiased(&x, &p, &cfg).unwrap() - mmd2_unbiased(&x, &m, &cfg).unwrap()) / (2.0 * h);
            let a = grad.data()[k];
            assert!((a - num).abs() / a.abs().max(num.abs()).max(1e-6) < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn kernel_matrix_symmetric_with_unit_diagonal(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2..12),
            sigma in 0.1f64..3.0,
        ) {
            let x = Matrix::from_rows(&rows).unwrap();
            let k = gaussian_kernel(&x, &x, &KernelConfig::fixed(sigma).unwrap()).unwrap();
            for i in 0..k.rows() {
                prop_assert_eq!(k.get(i, i), 1.0);
                for j in 0..k.cols() {
                    prop_assert!((k.get(i, j) - k.get(j, i)).abs() < 1e-12);
                    prop_assert!((0.0..=1.0).contains(&k.get(i, j)));
                }
            }
        }

        #[test]
        fn mmd_is_symmetric(
            a in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2..10),
            b in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), 2..10),
        ) {
            let x = Matrix::from_rows(&a).unwrap();
            let y = Matrix::from_rows(&b).unwrap();
            for cfg in [KernelConfig::MedianHeuristic, KernelConfig::fixed(0.8).unwrap()] {
                let xy = mmd2_unbiased(&x, &y, &cfg).unwrap();
                let yx = mmd2_unbiased(&y, &x, &cfg).unwrap();
                prop_assert!((xy - yx).abs() < 1e-12);
            }
        }
    }
}
