use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Column, Dataset, Schema};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Format tag of processed CSV files (header row, one column per processed
/// feature, label column last, schema sidecar next to the file).
pub const DATA_FORMAT: &str = "bcgan-processed-csv/1";

/// Which raw columns are the label and which are categorical. Every other
/// column not listed in `drop` is treated as continuous.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSpec {
    pub label: String,
    pub discrete: Vec<String>,
    pub drop: Vec<String>,
}

/// A CSV file as strings.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    }
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| Ok(r?.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(RawTable { headers, rows })
}

fn parse_num(v: &str, column: &str, row: usize) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Schema(format!("unparseable numeric value {v:?} in column {column:?}, row {row}")))
}

/// Learns scaling ranges, category lists and label classes from `table`.
/// Categories keep their order of first appearance; label classes are
/// sorted, numerically when every label parses as a number.
pub fn fit_schema(table: &RawTable, spec: &IngestSpec) -> Result<Schema> {
    if table.rows.is_empty() {
        return Err(Error::EmptyData("csv_ingest"));
    }
    let label_idx = table
        .column(&spec.label)
        .map_err(|_| Error::Schema(format!("missing label column {:?}", spec.label)))?;
    for name in spec.discrete.iter().chain(&spec.drop) {
        table.column(name)?;
    }
    let mut columns = Vec::new();
    for (j, name) in table.headers.iter().enumerate() {
        if j == label_idx || spec.drop.contains(name) {
            continue;
        }
        if spec.discrete.contains(name) {
            let mut categories: Vec<String> = Vec::new();
            for r in &table.rows {
                if !categories.contains(&r[j]) {
                    categories.push(r[j].clone());
                }
            }
            columns.push(Column::OneHot {
                name: name.clone(),
                categories,
            });
        } else {
            let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
            for (i, r) in table.rows.iter().enumerate() {
                let v = parse_num(&r[j], name, i)?;
                min = min.min(v);
                max = max.max(v);
            }
            columns.push(Column::Continuous {
                name: name.clone(),
                min,
                max,
            });
        }
    }
    let mut classes: Vec<String> = Vec::new();
    for r in &table.rows {
        if !classes.contains(&r[label_idx]) {
            classes.push(r[label_idx].clone());
        }
    }
    if classes.iter().all(|c| c.parse::<f64>().is_ok()) {
        classes.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        classes.sort();
    }
    let schema = Schema {
        columns,
        label_name: spec.label.clone(),
        classes,
    };
    schema.validate()?;
    Ok(schema)
}

/// Applies a fitted schema. Continuous values outside the stored range are
/// clipped; an unseen category yields an all-zero group and a warning.
pub fn transform(table: &RawTable, schema: &Schema) -> Result<Dataset> {
    let label_idx = table
        .column(&schema.label_name)
        .map_err(|_| Error::Schema(format!("missing label column {:?}", schema.label_name)))?;
    let src: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| table.column(c.name()))
        .collect::<Result<_>>()?;
    let class_of: HashMap<&str, usize> = schema
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i))
        .collect();
    let width = schema.width();
    let mut data = Vec::with_capacity(table.rows.len() * width);
    let mut labels = Vec::with_capacity(table.rows.len());
    let mut unseen = vec![0usize; schema.columns.len()];
    for (i, r) in table.rows.iter().enumerate() {
        for (k, (c, &j)) in schema.columns.iter().zip(&src).enumerate() {
            match c {
                Column::Continuous { name, .. } => data.push(c.scale(parse_num(&r[j], name, i)?)),
                Column::OneHot { categories, .. } => {
                    let hit = categories.iter().position(|cat| *cat == r[j]);
                    if hit.is_none() {
                        unseen[k] += 1;
                    }
                    data.extend((0..categories.len()).map(|m| if Some(m) == hit { 1.0 } else { 0.0 }));
                }
            }
        }
        let y = class_of
            .get(r[label_idx].as_str())
            .ok_or_else(|| Error::Schema(format!("row {i}: unknown label {:?}", r[label_idx])))?;
        labels.push(*y);
    }
    for (c, &count) in schema.columns.iter().zip(&unseen) {
        if count > 0 {
            log::warn!("column {:?}: {count} rows with unseen categories encoded as all zeros", c.name());
        }
    }
    Dataset::new(Matrix::new(labels.len(), width, data)?, labels, schema.clone())
}

/// Reads, fits and transforms a single file.
pub fn csv_ingest(path: impl AsRef<Path>, spec: &IngestSpec) -> Result<Dataset> {
    let table = read_raw(path)?;
    transform(&table, &fit_schema(&table, spec)?)
}

/// Fits on the training file and transforms both files with that fit.
pub fn csv_ingest_split(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
    spec: &IngestSpec,
) -> Result<(Dataset, Dataset)> {
    let train = read_raw(train)?;
    let schema = fit_schema(&train, spec)?;
    Ok((transform(&train, &schema)?, transform(&read_raw(test)?, &schema)?))
}

/// Schema sidecar location for a processed CSV: `<path>.schema.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".schema.json");
    PathBuf::from(s)
}

/// Writes processed features with a header and the label class names in
/// the last column, plus the schema sidecar.
pub fn write_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let schema = data.schema();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = schema.feature_names();
    header.push(schema.label_name.clone());
    w.write_record(&header)?;
    for (row, &y) in data.features().iter_rows().zip(data.labels()) {
        let mut rec: Vec<String> = row.iter().map(f64::to_string).collect();
        rec.push(schema.classes[y].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    schema.save(sidecar_path(path))
}

/// Reads a file written by [`write_dataset`]; values are restored exactly.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let schema = Schema::load(sidecar_path(path))?;
    let table = read_raw(path)?;
    let mut expected = schema.feature_names();
    expected.push(schema.label_name.clone());
    if table.headers != expected {
        return Err(Error::Schema(format!("{}: header does not match its schema", path.display())));
    }
    let d = schema.width();
    let mut data = Vec::with_capacity(table.rows.len() * d);
    let mut labels = Vec::with_capacity(table.rows.len());
    for (i, r) in table.rows.iter().enumerate() {
        for (j, v) in r[..d].iter().enumerate() {
            data.push(parse_num(v, &expected[j], i)?);
        }
        let y = schema
            .classes
            .iter()
            .position(|c| *c == r[d])
            .ok_or_else(|| Error::Schema(format!("row {i}: unknown label {:?}", r[d])))?;
        labels.push(y);
    }
    Dataset::new(Matrix::new(labels.len(), d, data)?, labels, schema)
}
