use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Matrix, Tensor};

/// Trainable `n_classes x dim` lookup table. A zero-width table is allowed
/// and turns conditioning into a no-op.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEmbedding {
    n_classes: usize,
    table: Matrix,
}

impl ClassEmbedding {
    pub fn init<R: Rng + ?Sized>(n_classes: usize, dim: usize, rng: &mut R) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::invalid("embedding needs at least one class"));
        }
        let data = (0..n_classes * dim)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        Ok(ClassEmbedding {
            n_classes,
            table: Matrix::new(n_classes, dim, data)?,
        })
    }

    pub fn from_table(table: Matrix) -> Result<Self> {
        if table.rows() == 0 {
            return Err(Error::invalid("embedding needs at least one class"));
        }
        Ok(ClassEmbedding {
            n_classes: table.rows(),
            table,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut Matrix {
        &mut self.table
    }

    /// Binds the table into `g`; `None` for a zero-width table.
    pub fn bind(&self, g: &Graph, trainable: bool) -> Result<Option<Tensor>> {
        if self.dim() == 0 {
            return Ok(None);
        }
        g.leaf(self.table.clone(), trainable).map(Some)
    }

    /// Row lookup on plain values.
    pub fn lookup_values(&self, labels: &[usize]) -> Result<Matrix> {
        check_labels(labels, self.n_classes)?;
        Ok(self.table.select_rows(labels))
    }
}

pub(crate) fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= n_classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, n_classes }),
        None => Ok(()),
    }
}

/// Appends `table[label_i]` to row `i` of `x`. The lookup is a one-hot
/// matmul, so gradients reach exactly the looked-up rows of the table.
pub fn condition_input(x: &Tensor, labels: &[usize], table: Option<&Tensor>) -> Result<Tensor> {
    if labels.len() != x.rows() {
        return Err(Error::invalid(format!(
            "{} labels for {} rows",
            labels.len(),
            x.rows()
        )));
    }
    let Some(table) = table else {
        return Ok(x.clone());
    };
    let one_hot = x.graph().constant(Matrix::one_hot(labels, table.rows())?)?;
    x.concat_cols(&one_hot.matmul(table)?)
}

/// Value-only counterpart of [`condition_input`].
pub fn condition_values(x: &Matrix, labels: &[usize], emb: &ClassEmbedding) -> Result<Matrix> {
    if labels.len() != x.rows() {
        return Err(Error::invalid("label count does not match row count"));
    }
    if emb.dim() == 0 {
        check_labels(labels, emb.n_classes())?;
        return Ok(x.clone());
    }
    x.hstack(&emb.lookup_values(labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_width_is_identity() {
        let emb = ClassEmbedding::init(3, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = Graph::new();
        let x = g.constant(Matrix::filled(2, 2, 0.3)).unwrap();
        let t = emb.bind(&g, true).unwrap();
        let out = condition_input(&x, &[0, 2], t.as_ref()).unwrap();
        assert_eq!(*out.value(), *x.value());
    }

    #[test]
    fn one_hot_table_lookup() {
        let emb = ClassEmbedding::from_table(Matrix::identity(3)).unwrap();
        let g = Graph::new();
        let x = g.constant(Matrix::row_vector(vec![0.5, 0.25])).unwrap();
        let t = emb.bind(&g, true).unwrap();
        let out = condition_input(&x, &[1], t.as_ref()).unwrap();
        assert_eq!(out.value().data(), &[0.5, 0.25, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn gradient_reaches_only_used_rows() {
        let emb = ClassEmbedding::init(4, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let g = Graph::new();
        let x = g.constant(Matrix::zeros(3, 1)).unwrap();
        let t = emb.bind(&g, true).unwrap().unwrap();
        let root = condition_input(&x, &[2, 0, 2], Some(&t)).unwrap().sum().unwrap();
        let grad = backward(&root).unwrap().get(&t);
        assert_eq!(grad.row(0), &[1.0, 1.0]);
        assert_eq!(grad.row(1), &[0.0, 0.0]);
        assert_eq!(grad.row(2), &[2.0, 2.0]);
        assert_eq!(grad.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn label_out_of_range() {
        let emb = ClassEmbedding::init(2, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = Graph::new();
        let x = g.constant(Matrix::zeros(1, 1)).unwrap();
        let t = emb.bind(&g, false).unwrap();
        assert!(matches!(
            condition_input(&x, &[2], t.as_ref()),
            Err(Error::LabelOutOfRange { label: 2, n_classes: 2 })
        ));
        assert!(condition_values(&Matrix::zeros(1, 1), &[5], &emb).is_err());
    }
}
