//! Model-compatibility evaluation: relative accuracy of models trained on
//! synthetic data, agreement of feature rankings and selections, and the
//! bottleneck-projection mislabel analysis.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{
    accuracy, Algorithm, Classifier, LinearSvm, MlpClassifier, MlpClassifierConfig, Penalty, SvmConfig,
};
use crate::data::{train_test_split, Dataset};
use crate::error::{Error, Result};
use crate::nn::checkpoint;
use crate::tensor::Matrix;

pub const REPORT_FORMAT: &str = "bcgan-compat-report/1";

/// Accuracy on the synthetic-trained model over the real-trained one, in
/// percent; `None` when the real-trained model scores zero.
pub fn relative_accuracy(real_acc: f64, synthetic_acc: f64) -> Option<f64> {
    (real_acc > 0.0).then(|| 100.0 * synthetic_acc / real_acc)
}

/// One decimal, truncated toward zero (a 1e-9 guard absorbs representation
/// error such as 97.19999...).
pub fn one_decimal(v: f64) -> f64 {
    (v * 10.0 + 1e-9 * v.signum()).trunc() / 10.0
}

/// `"abs (rel)"` in percent with one decimal each, e.g. `"80.3 (96.0)"`.
pub fn format_cell(abs_pct: f64, rel_pct: Option<f64>) -> String {
    match rel_pct {
        Some(r) => format!("{:.1} ({:.1})", one_decimal(abs_pct), one_decimal(r)),
        None => format!("{:.1} (NA)", one_decimal(abs_pct)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatEntry {
    pub algorithm: String,
    /// Test accuracy of the model trained on real data, in `[0, 1]`.
    pub real_accuracy: f64,
    pub synthetic_accuracy: f64,
    /// Percent; `None` when undefined.
    pub relative: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub dataset: String,
    pub variant: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionAtK {
    pub k: usize,
    /// Real-trained vs synthetic-trained ranking; `None` if `k > d`.
    pub synthetic: Option<f64>,
    /// Real-trained vs real-trained with another seed.
    pub real: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionF1 {
    pub c: f64,
    pub synthetic: f64,
    pub real: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Interpretability {
    pub precision_at_k: Vec<PrecisionAtK>,
    pub selection_f1: Vec<SelectionF1>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatReport {
    pub meta: ReportMeta,
    pub entries: Vec<CompatEntry>,
    /// Mean of the defined relative accuracies, percent.
    pub average_relative: Option<f64>,
    pub interpretability: Option<Interpretability>,
}

impl CompatReport {
    /// `(algorithm, real accuracy, synthetic accuracy)` triples.
    pub fn from_accuracies(meta: ReportMeta, accs: Vec<(String, f64, f64)>) -> Result<Self> {
        if accs.is_empty() {
            return Err(Error::invalid("at least one algorithm is required"));
        }
        let entries: Vec<CompatEntry> = accs
            .into_iter()
            .map(|(algorithm, real_accuracy, synthetic_accuracy)| {
                let relative = relative_accuracy(real_accuracy, synthetic_accuracy);
                if relative.is_none() {
                    log::warn!("{algorithm}: real-data accuracy is 0, relative accuracy undefined and excluded");
                }
                CompatEntry {
                    algorithm,
                    real_accuracy,
                    synthetic_accuracy,
                    relative,
                }
            })
            .collect();
        let defined: Vec<f64> = entries.iter().filter_map(|e| e.relative).collect();
        let average_relative = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Ok(CompatReport {
            meta,
            entries,
            average_relative,
            interpretability: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        checkpoint::to_string(REPORT_FORMAT, self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        checkpoint::from_str(REPORT_FORMAT, text)
    }

    /// Rows are algorithms plus a final average row; columns are the real
    /// accuracy and the `"abs (rel)"` cell for the synthetic data.
    pub fn to_csv(&self) -> String {
        let mut out = format!("algorithm,REAL,{}\n", csv_escape(&self.meta.variant));
        for e in &self.entries {
            out.push_str(&format!(
                "{},{:.1},{}\n",
                csv_escape(&e.algorithm),
                one_decimal(100.0 * e.real_accuracy),
                csv_escape(&format_cell(100.0 * e.synthetic_accuracy, e.relative))
            ));
        }
        let avg = self
            .average_relative
            .map_or_else(|| "NA".to_string(), |a| format!("{:.1}", one_decimal(a)));
        out.push_str(&format!("average relative,100.0,{avg}\n"));
        out
    }

    pub fn save(&self, json_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(json_path, self.to_json()?)?;
        std::fs::write(csv_path, self.to_csv())?;
        Ok(())
    }
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn check_compatible(a: &Dataset, b: &Dataset) -> Result<()> {
    if !a.compatible_with(b) {
        return Err(Error::Schema("datasets have different feature layouts or label classes".into()));
    }
    Ok(())
}

/// Trains every algorithm on the real and on the synthetic data with the
/// same seed and compares their accuracy on `test`.
pub fn evaluate_compat(
    real: &Dataset,
    synthetic: &Dataset,
    test: &Dataset,
    algorithms: &[Algorithm],
    seed: u64,
    meta: ReportMeta,
) -> Result<CompatReport> {
    check_compatible(real, synthetic)?;
    check_compatible(real, test)?;
    let jobs: Vec<(usize, bool)> = (0..algorithms.len()).flat_map(|i| [(i, false), (i, true)]).collect();
    let accs = jobs
        .par_iter()
        .map(|&(i, syn)| {
            let model = algorithms[i].train(if syn { synthetic } else { real }, seed)?;
            accuracy(&model, test)
        })
        .collect::<Result<Vec<f64>>>()?;
    let triples = algorithms
        .iter()
        .enumerate()
        .map(|(i, a)| (a.name(), accs[2 * i], accs[2 * i + 1]))
        .collect();
    CompatReport::from_accuracies(meta, triples)
}

/// Feature indices by decreasing importance, lowest index first on ties.
pub fn ranking_from_importances(importances: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importances.len()).collect();
    idx.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    idx
}

/// `|top_k(real) ∩ top_k(gen)| / k`.
pub fn precision_at_k(real_ranking: &[usize], gen_ranking: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if k > real_ranking.len() || k > gen_ranking.len() {
        return Err(Error::invalid(format!("k = {k} exceeds the number of ranked features")));
    }
    let top: BTreeSet<usize> = real_ranking[..k].iter().copied().collect();
    let hits = gen_ranking[..k].iter().filter(|f| top.contains(f)).count();
    Ok(hits as f64 / k as f64)
}

/// `2 |A ∩ B| / (|A| + |B|)` over index sets; 1 when both are empty.
pub fn f1_feature_selection(selected_real: &[usize], selected_gen: &[usize]) -> f64 {
    let a: BTreeSet<usize> = selected_real.iter().copied().collect();
    let b: BTreeSet<usize> = selected_gen.iter().copied().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * a.intersection(&b).count() as f64 / (a.len() + b.len()) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterpretabilityConfig {
    /// Forest used for importance rankings.
    pub forest: Algorithm,
    pub ks: Vec<usize>,
    pub svm_cs: Vec<f64>,
}

impl Default for InterpretabilityConfig {
    fn default() -> Self {
        InterpretabilityConfig {
            forest: Algorithm::RandomForest {
                n_trees: 10,
                max_depth: 10,
            },
            ks: vec![10, 20, 30],
            svm_cs: vec![0.01, 0.001],
        }
    }
}

/// Ranking agreement (P@K) of forest importances and F1 of L1-SVM feature
/// selections, each against the real-trained model. The `real` baselines
/// retrain on the real data with seed `seed + 1`. K larger than the
/// feature count is reported as `None`.
pub fn interpretability(real: &Dataset, synthetic: &Dataset, cfg: &InterpretabilityConfig, seed: u64) -> Result<Interpretability> {
    check_compatible(real, synthetic)?;
    let importances = |d: &Dataset, s: u64| -> Result<Vec<usize>> {
        let m = cfg.forest.train(d, s)?;
        let imp = m
            .feature_importances()
            .ok_or_else(|| Error::invalid("ranking model exposes no feature importances"))?;
        Ok(ranking_from_importances(&imp))
    };
    let r_real = importances(real, seed)?;
    let r_real2 = importances(real, seed + 1)?;
    let r_gen = importances(synthetic, seed)?;
    let precision_at_k = cfg
        .ks
        .iter()
        .map(|&k| {
            let pk = |other: &[usize]| precision_at_k(&r_real, other, k).ok();
            PrecisionAtK {
                k,
                synthetic: pk(&r_gen),
                real: pk(&r_real2),
            }
        })
        .collect();
    let mut selection_f1 = Vec::new();
    for &c in &cfg.svm_cs {
        let select = |d: &Dataset| -> Result<Vec<usize>> {
            Ok(LinearSvm::fit(d, &SvmConfig::new(c, Penalty::L1))?
                .selected_features()
                .unwrap_or_default())
        };
        let s_real = select(real)?;
        // the SVM is deterministic, so the real baseline is exact agreement
        selection_f1.push(SelectionF1 {
            c,
            synthetic: f1_feature_selection(&s_real, &select(synthetic)?),
            real: f1_feature_selection(&s_real, &s_real),
        });
    }
    Ok(Interpretability {
        precision_at_k,
        selection_f1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectionConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub holdout: f64,
    pub min_accuracy: f64,
    pub grid_resolution: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            hidden: vec![64, 64],
            epochs: 100,
            holdout: 0.2,
            min_accuracy: 0.99,
            grid_resolution: 100,
        }
    }
}

/// Predicted class over a regular grid of the 2-D bottleneck space,
/// row-major with `y` varying slowest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub resolution: usize,
    pub classes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    /// Bottleneck coordinates of every generated row.
    pub coords: Matrix,
    pub mislabel_rate: f64,
    pub test_accuracy: f64,
    pub grid: ClassGrid,
}

/// Trains an MLP with a 2-unit linear bottleneck before its output layer
/// on the real data (80/20 holdout for the reliability check), embeds the
/// generated rows and counts those whose predicted class differs from
/// their generated label.
pub fn projection_mislabel(real: &Dataset, generated: &Dataset, cfg: &ProjectionConfig, seed: u64) -> Result<ProjectionResult> {
    check_compatible(real, generated)?;
    if generated.is_empty() {
        return Err(Error::EmptyData("projection_mislabel"));
    }
    let (train, test) = train_test_split(real, cfg.holdout, seed)?;
    let mlp_cfg = MlpClassifierConfig {
        hidden: cfg.hidden.clone(),
        bottleneck: Some(2),
        epochs: cfg.epochs,
        ..Default::default()
    };
    let model = MlpClassifier::fit(&train, &mlp_cfg, seed)?;
    let test_accuracy = accuracy(&model, &test)?;
    if test_accuracy < cfg.min_accuracy {
        return Err(Error::ProjectionUnreliable(test_accuracy));
    }
    let coords = model.penultimate(generated.features())?;
    let pred = model.predict(generated.features())?;
    let wrong = pred.iter().zip(generated.labels()).filter(|(a, b)| a != b).count();
    let mislabel_rate = wrong as f64 / generated.len() as f64;

    let real_coords = model.penultimate(real.features())?;
    let pooled = real_coords.vstack(&coords)?;
    let range = |j: usize| {
        let (lo, hi) = (0..pooled.rows())
            .map(|i| pooled.get(i, j))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let pad = 0.05 * (hi - lo).max(1e-6);
        (lo - pad, hi + pad)
    };
    let (xr, yr) = (range(0), range(1));
    let res = cfg.grid_resolution.max(2);
    let mut pts = Matrix::zeros(res * res, 2);
    for iy in 0..res {
        for ix in 0..res {
            let r = iy * res + ix;
            pts.set(r, 0, xr.0 + (xr.1 - xr.0) * ix as f64 / (res - 1) as f64);
            pts.set(r, 1, yr.0 + (yr.1 - yr.0) * iy as f64 / (res - 1) as f64);
        }
    }
    let last = model.net().layers().last().expect("output layer");
    let mut logits = pts.matmul(&last.weight)?;
    for i in 0..logits.rows() {
        for (v, b) in logits.row_mut(i).iter_mut().zip(last.bias.data()) {
            *v += b;
        }
    }
    Ok(ProjectionResult {
        coords,
        mislabel_rate,
        test_accuracy,
        grid: ClassGrid {
            x_range: xr,
            y_range: yr,
            resolution: res,
            classes: logits.argmax_rows(),
        },
    })
}
