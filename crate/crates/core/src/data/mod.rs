//! Datasets, preprocessing and class priors.

mod csv_io;
mod schema;
mod toy;

pub use csv_io::{
    csv_ingest, csv_ingest_split, fit_schema, read_dataset, read_raw, sidecar_path, transform,
    write_dataset, IngestSpec, RawTable, DATA_FORMAT,
};
pub use schema::{Column, Schema, SCHEMA_FORMAT};
pub use toy::{toy2d_generate, ToyKind};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::check_labels;
use crate::tensor::Matrix;

/// Processed features in `[0, 1]`, integer labels and the schema that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    schema: Schema,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, schema: Schema) -> Result<Self> {
        schema.validate()?;
        if features.rows() != labels.len() {
            return Err(Error::Schema(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if features.cols() != schema.width() {
            return Err(Error::Schema(format!(
                "schema describes {} processed columns, features have {}",
                schema.width(),
                features.cols()
            )));
        }
        if features.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Schema("processed features must lie in [0, 1]".into()));
        }
        check_labels(&labels, schema.n_classes())?;
        Ok(Dataset {
            features,
            labels,
            schema,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.schema.n_classes()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn into_parts(self) -> (Matrix, Vec<usize>, Schema) {
        (self.features, self.labels, self.schema)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            schema: self.schema.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// True when both datasets share the processed layout and label classes.
    pub fn compatible_with(&self, other: &Dataset) -> bool {
        self.schema.feature_names() == other.schema.feature_names()
            && self.schema.classes == other.schema.classes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    probabilities: Vec<f64>,
}

impl ClassPrior {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        let s: f64 = probabilities.iter().sum();
        if probabilities.is_empty()
            || probabilities.iter().any(|p| !(*p >= 0.0))
            || (s - 1.0).abs() > 1e-12
        {
            return Err(Error::invalid("class prior must be a probability vector"));
        }
        Ok(ClassPrior { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn n_classes(&self) -> usize {
        self.probabilities.len()
    }
}

/// Empirical class frequencies.
pub fn class_prior(data: &Dataset) -> Result<ClassPrior> {
    if data.is_empty() {
        return Err(Error::EmptyData("class_prior"));
    }
    let n = data.len() as f64;
    ClassPrior::new(data.class_counts().into_iter().map(|c| c as f64 / n).collect())
}

/// Random disjoint halves of sizes `⌊n/2⌋` and `⌈n/2⌉`.
pub fn split_half_random(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    let (a, b) = split_half_indices(data.len(), seed)?;
    Ok((data.subset(&a), data.subset(&b)))
}

/// Index form of [`split_half_random`]; each half is sorted.
pub fn split_half_indices(n: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut a = idx[..n / 2].to_vec();
    let mut b = idx[n / 2..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

/// Random train/test split with `test_fraction` of the rows held out.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test fraction must be in (0, 1)"));
    }
    let n = data.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = idx.split_at(n_test);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}
