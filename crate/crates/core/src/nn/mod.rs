//! Layers, networks and the optimizer used by the generators, critics and
//! MLP classifiers.

mod adam;
pub mod checkpoint;
mod embedding;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use embedding::{condition_input, condition_values, ClassEmbedding};
pub use mlp::{Activation, BoundMlp, Linear, Mlp, MlpSpec, LEAKY_SLOPE};

pub(crate) use embedding::check_labels;

use crate::error::{Error, Result};
use crate::mmd::PosteriorMatrix;
use crate::tensor::{Matrix, Tensor};

/// Row-wise softmax of classifier logits, with max subtraction.
pub fn softmax_posterior(logits: &Matrix) -> Result<PosteriorMatrix> {
    if !logits.is_finite() {
        return Err(Error::NonFinite("softmax_posterior"));
    }
    PosteriorMatrix::new(crate::tensor::softmax_rows(logits))
}

/// A classifier whose logits can be computed inside a differentiation graph.
/// Used by the boundary-calibration loss; parameters are always frozen.
pub trait DifferentiableClassifier: Sync {
    fn n_classes(&self) -> usize;

    /// Logits as plain values.
    fn logits(&self, x: &Matrix) -> Result<Matrix>;

    /// Logits as a graph node depending on `x`.
    fn logits_tensor(&self, x: &Tensor) -> Result<Tensor>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        let p = softmax_posterior(&Matrix::from_rows(&[[0., 0., 0.]]).unwrap()).unwrap();
        for &v in p.as_matrix().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax_posterior(&Matrix::from_rows(&[[1000., 0., 0.]]).unwrap()).unwrap();
        assert!((p.as_matrix().get(0, 0) - 1.0).abs() < 1e-12);
        let p = softmax_posterior(&Matrix::from_rows(&[[1., 2.]]).unwrap()).unwrap();
        let e = std::f64::consts::E;
        assert!((p.as_matrix().get(0, 0) - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p.as_matrix().get(0, 1) - e / (1.0 + e)).abs() < 1e-15);
        assert!((p.as_matrix().get(0, 0) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let m = Matrix::from_rows(&[[f64::INFINITY, 0.0]]).unwrap();
        assert!(softmax_posterior(&m).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_on_simplex(rows in prop::collection::vec(prop::collection::vec(-500.0f64..500.0, 3), 1..20)) {
            let p = softmax_posterior(&Matrix::from_rows(&rows).unwrap()).unwrap();
            for r in p.as_matrix().iter_rows() {
                prop_assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }
}
