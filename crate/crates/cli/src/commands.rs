use std::fs;
use std::path::{Path, PathBuf};

use bcgan::classifiers::{accuracy, Classifier, ClassifierModel, MlpClassifier};
use bcgan::compat::{evaluate_compat, interpretability, ReportMeta};
use bcgan::data::{class_prior, csv_ingest_split, read_dataset, toy2d_generate, write_dataset, Dataset};
use bcgan::gan::{sample_conditional, train, write_history, GanBundle, GanConfig, Variant, GAN_FORMAT};
use bcgan::nn::DifferentiableClassifier;
use bcgan::classifiers::{make_pretrained_set, CLASSIFIER_FORMAT};
use bcgan::compat::REPORT_FORMAT;
use bcgan::data::DATA_FORMAT;
use bcgan::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub const MANIFEST_FORMAT: &str = "bcgan-manifest/1";
pub const PRETRAIN_FORMAT: &str = "bcgan-pretrain-manifest/1";

/// Salt mixed into the global seed for the toy test split.
const TEST_SEED_SALT: u64 = 0x5eed_7e57;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub format: String,
}

/// Index of the files a subcommand wrote.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub seed: u64,
    pub files: Vec<ManifestFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainedEntry {
    pub file: String,
    pub split_seed: u64,
    /// SHA-256 of the training row indices (little-endian u64).
    pub split_hash: String,
    /// Accuracy on the rows this classifier did not see.
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainManifest {
    pub format: String,
    pub seed: u64,
    pub classifiers: Vec<PretrainedEntry>,
}

struct Outputs {
    dir: PathBuf,
    command: &'static str,
    seed: u64,
    files: Vec<ManifestFile>,
}

impl Outputs {
    fn create(cfg: &ExperimentConfig, command: &'static str) -> Result<Self> {
        let dir = cfg.out.join(command);
        fs::create_dir_all(&dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
        let snapshot = dir.join("resolved_config.toml");
        fs::write(&snapshot, cfg.to_toml()?)?;
        Ok(Outputs {
            dir,
            command,
            seed: cfg.seed,
            files: vec![ManifestFile {
                path: "resolved_config.toml".into(),
                format: "toml".into(),
            }],
        })
    }

    fn path(&mut self, name: &str, format: &str) -> PathBuf {
        self.files.push(ManifestFile {
            path: name.to_string(),
            format: format.to_string(),
        });
        self.dir.join(name)
    }

    fn finish(self) -> Result<PathBuf> {
        let m = Manifest {
            format: MANIFEST_FORMAT.into(),
            command: self.command.into(),
            seed: self.seed,
            files: self.files,
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::new("format", e.to_string()))?;
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(self.dir)
    }
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.dataset {
        DatasetConfig::Toy {
            kind,
            n_train,
            n_test,
            noise,
        } => Ok((
            toy2d_generate(*kind, *n_train, *noise, cfg.seed)?,
            toy2d_generate(*kind, *n_test, *noise, cfg.seed ^ TEST_SEED_SALT)?,
        )),
        DatasetConfig::Csv { train, test, ingest } => Ok(csv_ingest_split(train, test, ingest)?),
    }
}

pub fn split_hash(rows: &[usize]) -> String {
    let mut h = Sha256::new();
    for &r in rows {
        h.update((r as u64).to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn tag<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn variant_label(gan: &GanConfig) -> String {
    if gan.lambda_bc > 0.0 {
        format!("{} (lambda_bc={})", tag(&gan.variant), gan.lambda_bc)
    } else {
        tag(&gan.variant)
    }
}

pub fn pretrain(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (train_data, _) = load_data(cfg)?;
    let mut out = Outputs::create(cfg, "pretrain")?;
    let members = make_pretrained_set(&train_data, &cfg.pretrain, cfg.seed)?;
    let max_prior = class_prior(&train_data)?
        .probabilities()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let mut entries = Vec::with_capacity(members.len());
    for (i, m) in members.iter().enumerate() {
        let file = format!("classifier_{i}.json");
        ClassifierModel::Mlp(m.model.clone()).save(out.path(&file, CLASSIFIER_FORMAT))?;
        let held_out: Vec<usize> = (0..train_data.len()).filter(|r| m.rows.binary_search(r).is_err()).collect();
        let validation_accuracy = if held_out.is_empty() {
            f64::NAN
        } else {
            accuracy(&m.model, &train_data.subset(&held_out))?
        };
        if validation_accuracy <= max_prior + 0.02 {
            log::warn!(
                "classifier {i} is near chance: validation accuracy {validation_accuracy:.4}, majority class {max_prior:.4}"
            );
        }
        entries.push(PretrainedEntry {
            file,
            split_seed: m.split_seed,
            split_hash: split_hash(&m.rows),
            validation_accuracy,
        });
    }
    let manifest = PretrainManifest {
        format: PRETRAIN_FORMAT.into(),
        seed: cfg.seed,
        classifiers: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::new("format", e.to_string()))?;
    fs::write(out.path("classifiers.json", PRETRAIN_FORMAT), text)?;
    out.finish()
}

/// Loads the classifiers listed by a `pretrain` run under `dir`.
pub fn load_pretrained(dir: &Path) -> Result<Vec<MlpClassifier>> {
    let index = dir.join("classifiers.json");
    let text = fs::read_to_string(&index).map_err(|e| {
        CliError::new(
            "argument",
            format!(
                "lambda_bc > 0 requires pre-trained classifiers; run `bcgan pretrain` first ({}: {e})",
                index.display()
            ),
        )
    })?;
    let manifest: PretrainManifest =
        serde_json::from_str(&text).map_err(|e| CliError::new("format", format!("{}: {e}", index.display())))?;
    if manifest.format != PRETRAIN_FORMAT {
        return Err(CliError::new(
            "format",
            format!("{}: expected {PRETRAIN_FORMAT}, found {}", index.display(), manifest.format),
        ));
    }
    manifest
        .classifiers
        .iter()
        .map(|e| match ClassifierModel::load(dir.join(&e.file))? {
            ClassifierModel::Mlp(m) => Ok(m),
            _ => Err(CliError::new("format", format!("{} is not an MLP classifier", e.file))),
        })
        .collect()
}

fn train_bundle(gan: &GanConfig, data: &Dataset, classifiers: &[MlpClassifier]) -> Result<(GanBundle, Vec<bcgan::gan::HistoryRow>)> {
    let refs: Vec<&dyn DifferentiableClassifier> = classifiers.iter().map(|c| c as &dyn DifferentiableClassifier).collect();
    let mut bundle = GanBundle::new(gan.clone(), data)?;
    let history = train(&mut bundle, data, &refs)?;
    Ok((bundle, history))
}

pub fn train_gan(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (train_data, _) = load_data(cfg)?;
    let classifiers = if cfg.gan.lambda_bc > 0.0 {
        let cls = load_pretrained(&cfg.out.join("pretrain"))?;
        if cls.iter().any(|c| DifferentiableClassifier::n_classes(c) != train_data.n_classes()) {
            return Err(CliError::new("data", "pre-trained classifiers do not match the dataset's classes"));
        }
        cls
    } else {
        Vec::new()
    };
    let mut out = Outputs::create(cfg, "gan")?;
    let (bundle, history) = train_bundle(&cfg.gan, &train_data, &classifiers)?;
    bundle.save(out.path("checkpoint.json", GAN_FORMAT))?;
    write_history(out.path("loss_history.csv", "csv"), &history)?;
    out.finish()
}

pub fn generate(cfg: &ExperimentConfig, n: Option<usize>, checkpoint: Option<&Path>, harden: bool) -> Result<PathBuf> {
    let ckpt = checkpoint.map_or_else(|| cfg.out.join("gan").join("checkpoint.json"), Path::to_path_buf);
    let bundle = GanBundle::load(&ckpt)?;
    let n = match n.or(cfg.evaluation.synthetic_size) {
        Some(n) => n,
        None => load_data(cfg)?.0.len(),
    };
    if n == 0 {
        return Err(CliError::new("argument", "--n must be >= 1"));
    }
    let mut out = Outputs::create(cfg, "generate")?;
    let mut data = sample_conditional(&bundle, n, None, cfg.seed)?;
    if harden && !data.schema().one_hot_groups().is_empty() {
        let (x, y, schema) = data.into_parts();
        let x = schema.harden_one_hot(&x)?;
        data = Dataset::new(x, y, schema)?;
    }
    let path = out.path("synthetic.csv", DATA_FORMAT);
    write_dataset(&data, &path)?;
    out.path("synthetic.csv.schema.json", bcgan::data::SCHEMA_FORMAT);
    out.finish()
}

pub fn evaluate(cfg: &ExperimentConfig, synthetic: Option<&Path>) -> Result<PathBuf> {
    let (real, test) = load_data(cfg)?;
    let syn_path = synthetic.map_or_else(|| cfg.out.join("generate").join("synthetic.csv"), Path::to_path_buf);
    let syn = read_dataset(&syn_path)?;
    if !real.compatible_with(&syn) {
        return Err(CliError::new(
            "data",
            format!("{} does not match the dataset's schema", syn_path.display()),
        ));
    }
    let mut out = Outputs::create(cfg, "evaluate")?;
    let meta = ReportMeta {
        dataset: cfg.dataset_name(),
        variant: variant_label(&cfg.gan),
        seed: cfg.seed,
    };
    let mut report = evaluate_compat(&real, &syn, &test, &cfg.evaluation.roster, cfg.seed, meta)?;
    if cfg.evaluation.interpretability {
        let interp = interpretability(&real, &syn, &cfg.evaluation.interpretability_config, cfg.seed)?;
        let mut csv = String::from("metric,parameter,synthetic,real\n");
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"));
        for p in &interp.precision_at_k {
            csv.push_str(&format!("precision_at_k,{},{},{}\n", p.k, na(p.synthetic), na(p.real)));
        }
        for s in &interp.selection_f1 {
            csv.push_str(&format!("selection_f1,{},{:.4},{:.4}\n", s.c, s.synthetic, s.real));
        }
        fs::write(out.path("interpretability.csv", "csv"), csv)?;
        report.interpretability = Some(interp);
    }
    let json = out.path("report.json", REPORT_FORMAT);
    let csv = out.path("report.csv", "csv");
    report.save(json, csv)?;
    out.finish()
}

/// Predicted class at every node of an `r x r` grid over the unit square;
/// row `i` is `y = i / (r - 1)`, column `j` is `x = j / (r - 1)`.
pub fn class_grid(model: &dyn Classifier, r: usize) -> Result<Vec<Vec<usize>>> {
    if r < 2 {
        return Err(CliError::new("argument", "grid_resolution must be >= 2"));
    }
    let step = 1.0 / (r - 1) as f64;
    let mut data = Vec::with_capacity(r * r * 2);
    for i in 0..r {
        for j in 0..r {
            data.push(j as f64 * step);
            data.push(i as f64 * step);
        }
    }
    let pred = model.predict(&Matrix::new(r * r, 2, data)?)?;
    Ok(pred.chunks(r).map(<[usize]>::to_vec).collect())
}

fn write_points(path: &Path, data: &Dataset) -> Result<()> {
    let mut s = String::from("x,y,label\n");
    for (row, y) in data.features().iter_rows().zip(data.labels()) {
        s.push_str(&format!("{},{},{}\n", row[0], row[1], y));
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_grid(path: &Path, grid: &[Vec<usize>]) -> Result<()> {
    let mut s = String::new();
    for row in grid {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn toy_demo(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let (train_data, test) = load_data(cfg)?;
    if train_data.n_features() != 2 {
        return Err(CliError::new(
            "data",
            format!("toy-demo needs 2-D data, got {} features", train_data.n_features()),
        ));
    }
    let demo = &cfg.toy_demo;
    let mut out = Outputs::create(cfg, "toy-demo")?;
    let members = make_pretrained_set(&train_data, &cfg.pretrain, cfg.seed)?;
    let classifiers: Vec<MlpClassifier> = members.into_iter().map(|m| m.model).collect();

    let mut gan = demo.gan.clone();
    gan.seed = cfg.seed;
    let runs: [(&str, Variant, usize, f64); 3] = [
        ("acgan", Variant::Acgan, demo.acgan_critic_steps, 0.0),
        ("wgan", Variant::WganGp, gan.critic_steps, 0.0),
        ("bwgan", Variant::WganGp, gan.critic_steps, demo.lambda_bc),
    ];
    let mut sets = vec![("real", train_data.clone())];
    for (name, variant, critic_steps, lambda_bc) in runs {
        let g = GanConfig {
            variant,
            critic_steps,
            lambda_bc,
            ..gan.clone()
        };
        let cls: &[MlpClassifier] = if lambda_bc > 0.0 { &classifiers } else { &[] };
        let (bundle, _) = train_bundle(&g, &train_data, cls)?;
        sets.push((name, sample_conditional(&bundle, train_data.len(), None, cfg.seed)?));
    }

    let mut summary = String::from("method,rf_test_accuracy\n");
    for (name, data) in &sets {
        let model = demo.forest.train(data, cfg.seed)?;
        let acc = accuracy(&model, &test)?;
        summary.push_str(&format!("{name},{acc}\n"));
        write_points(&out.path(&format!("points_{name}.csv"), "csv"), data)?;
        write_grid(&out.path(&format!("grid_{name}.csv"), "csv"), &class_grid(&model, demo.grid_resolution)?)?;
    }
    fs::write(out.path("summary.csv", "csv"), summary)?;
    out.finish()
}
