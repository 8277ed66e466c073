use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::tensor::Matrix;

pub const SCHEMA_FORMAT: &str = "bcgan-schema/1";

/// Origin of one raw column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Column {
    /// Min-max scaled into `[0, 1]` with the stored training range.
    Continuous { name: String, min: f64, max: f64 },
    /// Expanded to one indicator per category, in the listed order.
    OneHot { name: String, categories: Vec<String> },
}

impl Column {
    pub fn name(&self) -> &str {
        match self {
            Column::Continuous { name, .. } | Column::OneHot { name, .. } => name,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            Column::Continuous { .. } => 1,
            Column::OneHot { categories, .. } => categories.len(),
        }
    }

    /// Scaled value of a raw continuous reading. A constant training column
    /// maps everything to 0.5.
    pub fn scale(&self, raw: f64) -> f64 {
        match self {
            Column::Continuous { min, max, .. } => {
                if max > min {
                    ((raw - min) / (max - min)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            }
            Column::OneHot { .. } => raw,
        }
    }

    pub fn unscale(&self, v: f64) -> f64 {
        match self {
            Column::Continuous { min, max, .. } => {
                if max > min {
                    min + v * (max - min)
                } else {
                    *min
                }
            }
            Column::OneHot { .. } => v,
        }
    }
}

/// Per-column layout of a processed feature matrix plus the label classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
    pub label_name: String,
    pub classes: Vec<String>,
}

impl Schema {
    /// All-continuous schema on `[0, 1]` with generic names.
    pub fn unit_continuous(d: usize, n_classes: usize) -> Self {
        Schema {
            columns: (0..d)
                .map(|j| Column::Continuous {
                    name: format!("x{j}"),
                    min: 0.0,
                    max: 1.0,
                })
                .collect(),
            label_name: "label".to_string(),
            classes: (0..n_classes).map(|c| c.to_string()).collect(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Width of the processed feature matrix.
    pub fn width(&self) -> usize {
        self.columns.iter().map(Column::width).sum()
    }

    /// Processed-column ranges of every column, in order.
    pub fn spans(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.columns
            .iter()
            .map(|c| {
                let r = start..start + c.width();
                start = r.end;
                r
            })
            .collect()
    }

    /// Processed-column ranges of the one-hot groups.
    pub fn one_hot_groups(&self) -> Vec<Range<usize>> {
        self.columns
            .iter()
            .zip(self.spans())
            .filter(|(c, _)| matches!(c, Column::OneHot { .. }))
            .map(|(_, r)| r)
            .collect()
    }

    /// One name per processed column; one-hot indicators are `name=category`.
    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(|c| match c {
                Column::Continuous { name, .. } => vec![name.clone()],
                Column::OneHot { name, categories } => {
                    categories.iter().map(|k| format!("{name}={k}")).collect()
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Schema("schema declares no label classes".into()));
        }
        for c in &self.columns {
            match c {
                Column::Continuous { name, min, max } => {
                    if !(min.is_finite() && max.is_finite() && min <= max) {
                        return Err(Error::Schema(format!("column {name}: bad range [{min}, {max}]")));
                    }
                }
                Column::OneHot { name, categories } => {
                    if categories.is_empty() {
                        return Err(Error::Schema(format!("column {name}: no categories")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Maps processed rows back to raw values. Continuous values are
    /// unscaled; each one-hot group becomes the category with the largest
    /// indicator, or an empty string if the group is all zero.
    pub fn inverse_transform(&self, features: &Matrix) -> Result<Vec<Vec<String>>> {
        if features.cols() != self.width() {
            return Err(Error::Schema(format!(
                "expected {} processed columns, got {}",
                self.width(),
                features.cols()
            )));
        }
        let spans = self.spans();
        Ok(features
            .iter_rows()
            .map(|row| {
                self.columns
                    .iter()
                    .zip(&spans)
                    .map(|(c, r)| match c {
                        Column::Continuous { .. } => c.unscale(row[r.start]).to_string(),
                        Column::OneHot { categories, .. } => {
                            let g = &row[r.clone()];
                            if g.iter().all(|&v| v == 0.0) {
                                String::new()
                            } else {
                                categories[argmax(g)].clone()
                            }
                        }
                    })
                    .collect()
            })
            .collect())
    }

    /// Continuous columns unscaled back to raw units, one-hot indicators left
    /// as they are.
    pub fn unscale_features(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.width() {
            return Err(Error::Schema("processed width mismatch".into()));
        }
        let mut out = features.clone();
        for (c, r) in self.columns.iter().zip(self.spans()) {
            if let Column::Continuous { .. } = c {
                for i in 0..out.rows() {
                    let v = out.get(i, r.start);
                    out.set(i, r.start, c.unscale(v));
                }
            }
        }
        Ok(out)
    }

    /// Replaces every one-hot group by the indicator of its largest entry
    /// (lowest index on ties).
    pub fn harden_one_hot(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.width() {
            return Err(Error::Schema("processed width mismatch".into()));
        }
        let mut out = features.clone();
        for r in self.one_hot_groups() {
            for i in 0..out.rows() {
                let row = &mut out.row_mut(i)[r.clone()];
                let k = argmax(row);
                row.fill(0.0);
                row[k] = 1.0;
            }
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        checkpoint::to_string(SCHEMA_FORMAT, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schema = checkpoint::from_str(SCHEMA_FORMAT, text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save(path, SCHEMA_FORMAT, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: Schema = checkpoint::load(path, SCHEMA_FORMAT)?;
        s.validate()?;
        Ok(s)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
