use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bcgan::data::{toy2d_generate, write_dataset, ToyKind};
use serde_json::Value;

const TINY: &str = r#"
[dataset]
source = "toy"
kind = "two_gaussians"
n_train = 400
n_test = 400
noise = 0.06

[gan]
epochs = 1
steps_per_epoch = 15
generator_hidden = [16]
critic_hidden = [16]
noise_dim = 4
embedding_dim = 2

[pretrain]
k = 6

[evaluation]
interpretability = false
roster = [
  { algorithm = "decision_tree", max_depth = 10 },
  { algorithm = "random_forest", n_trees = 10, max_depth = 10 },
]

[toy_demo.gan]
steps_per_epoch = 10
generator_hidden = [16]
critic_hidden = [16]
"#;

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Run {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("experiment.toml");
        fs::write(&config, format!("out = {:?}\n{extra}\n{TINY}", root.join("out"))).unwrap();
        Run { _dir: dir, root, config }
    }

    fn bcgan(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_bcgan"))
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) {
        let o = self.bcgan(args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.root.join("out").join(rel)
    }
}

fn error_of(o: &Output) -> (i32, String) {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().last().expect("stderr line");
    let v: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"));
    (o.status.code().unwrap(), v["error"]["category"].as_str().unwrap().to_string())
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn pretrain_writes_six_distinct_accurate_classifiers() {
    let run = Run::new("seed = 5");
    run.ok(&["pretrain"]);
    let index: Value = serde_json::from_str(&read(&run.out("pretrain/classifiers.json"))).unwrap();
    let entries = index["classifiers"].as_array().unwrap();
    assert_eq!(entries.len(), 6);
    let hashes: HashSet<&str> = entries.iter().map(|e| e["split_hash"].as_str().unwrap()).collect();
    assert_eq!(hashes.len(), 6);
    for e in entries {
        assert!(run.out("pretrain").join(e["file"].as_str().unwrap()).exists());
        assert!(e["validation_accuracy"].as_f64().unwrap() >= 0.9, "{e}");
    }
    let manifest: Value = serde_json::from_str(&read(&run.out("pretrain/manifest.json"))).unwrap();
    assert_eq!(manifest["format"], "bcgan-manifest/1");
    assert!(run.out("pretrain/resolved_config.toml").exists());

    let again = Run::new("seed = 5");
    again.ok(&["pretrain"]);
    for i in 0..6 {
        let f = format!("pretrain/classifier_{i}.json");
        assert_eq!(read(&run.out(&f)), read(&again.out(&f)));
    }
}

#[test]
fn train_gan_history_is_finite_and_reproducible() {
    let a = Run::new("seed = 1");
    a.ok(&["train-gan"]);
    let hist = read(&a.out("gan/loss_history.csv"));
    let mut lines = hist.lines();
    assert_eq!(lines.next().unwrap(), "step,critic_loss,gen_base_loss,bc_loss,total");
    let mut rows = 0;
    for line in lines {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cells.len(), 5);
        assert!(cells.iter().all(|v| v.is_finite()));
        assert_eq!(cells[3], 0.0);
        rows += 1;
    }
    assert_eq!(rows, 15);

    let b = Run::new("seed = 1");
    b.ok(&["train-gan"]);
    assert_eq!(hist, read(&b.out("gan/loss_history.csv")));
    assert_eq!(read(&a.out("gan/checkpoint.json")), read(&b.out("gan/checkpoint.json")));
}

#[test]
fn calibrated_training_needs_pretrained_classifiers() {
    let run = Run::new("");
    let o = run.bcgan(&["--lambda-bc", "100", "train-gan"]);
    assert_eq!(error_of(&o), (2, "argument".to_string()));

    run.ok(&["pretrain"]);
    run.ok(&["--lambda-bc", "100", "train-gan"]);
    let hist = read(&run.out("gan/loss_history.csv"));
    assert!(hist.lines().skip(1).any(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap() != 0.0));
}

#[test]
fn generate_then_evaluate() {
    let run = Run::new("");
    run.ok(&["train-gan"]);
    run.ok(&["generate", "--n", "300"]);
    let syn = read(&run.out("generate/synthetic.csv"));
    assert_eq!(syn.lines().count(), 301);
    assert!(run.out("generate/synthetic.csv.schema.json").exists());
    run.ok(&["evaluate"]);
    let report = read(&run.out("evaluate/report.csv"));
    assert!(report.starts_with("algorithm,REAL,wgan_gp\n"));
    assert_eq!(report.lines().count(), 4);

    let o = run.bcgan(&["generate", "--n", "0"]);
    assert_eq!(error_of(&o).0, 2);
}

#[test]
fn evaluating_real_data_against_itself_gives_full_relative_accuracy() {
    let run = Run::new("seed = 9");
    // same generator call as the toy loader for the training split
    let real = toy2d_generate(ToyKind::TwoGaussians, 400, 0.06, 9).unwrap();
    let path = run.root.join("real.csv");
    write_dataset(&real, &path).unwrap();
    run.ok(&["evaluate", "--synthetic", path.to_str().unwrap()]);
    let report = read(&run.out("evaluate/report.csv"));
    for line in report.lines().skip(1) {
        assert!(line.ends_with("(100.0)") || line == "average relative,100.0,100.0", "{line}");
    }
}

#[test]
fn schema_mismatch_is_a_data_error() {
    let run = Run::new("");
    let other = toy2d_generate(ToyKind::ThreeGaussians, 100, 0.05, 0).unwrap();
    let path = run.root.join("other.csv");
    write_dataset(&other, &path).unwrap();
    let o = run.bcgan(&["evaluate", "--synthetic", path.to_str().unwrap()]);
    assert_eq!(error_of(&o), (3, "data".to_string()));
}

#[test]
fn toy_demo_bundle() {
    let run = Run::new("");
    run.ok(&["toy-demo"]);
    let dir = run.out("toy-demo");
    let names: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.iter().filter(|n| n.starts_with("points_")).count(), 4);
    assert_eq!(names.iter().filter(|n| n.starts_with("grid_")).count(), 4);
    let grid = read(&dir.join("grid_bwgan.csv"));
    assert_eq!(grid.lines().count(), 200);
    assert!(grid.lines().all(|l| l.split(',').count() == 200));
    let summary = read(&dir.join("summary.csv"));
    let methods: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["real", "acgan", "wgan", "bwgan"]);
    let real_acc: f64 = summary.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(real_acc >= 0.98);
}

#[test]
fn toy_demo_rejects_non_2d_data() {
    let run = Run::new("");
    let raw = run.root.join("raw.csv");
    fs::write(&raw, "a,b,c,y\n0,1,2,0\n1,2,3,1\n2,3,1,0\n3,1,2,1\n").unwrap();
    let cfg = format!(
        "out = {:?}\n[dataset]\nsource = \"csv\"\ntrain = {raw:?}\ntest = {raw:?}\nlabel = \"y\"\n",
        run.root.join("out")
    );
    fs::write(&run.config, cfg).unwrap();
    let o = run.bcgan(&["toy-demo"]);
    assert_eq!(error_of(&o), (3, "data".to_string()));
}

#[test]
fn csv_pipeline_with_categorical_column() {
    let run = Run::new("");
    let mut text = String::from("age,colour,income,label\n");
    for i in 0..120 {
        let colour = ["red", "green", "blue"][i % 3];
        let label = if i % 3 == 0 { ">50K" } else { "<=50K" };
        text.push_str(&format!("{},{colour},{},{label}\n", 20 + i % 40, 1000 * (i % 7)));
    }
    let raw = run.root.join("adult.csv");
    fs::write(&raw, &text).unwrap();
    let cfg = format!(
        "out = {:?}\n[dataset]\nsource = \"csv\"\ntrain = {raw:?}\ntest = {raw:?}\nlabel = \"label\"\ndiscrete = [\"colour\"]\n{}",
        run.root.join("out"),
        TINY.split("[gan]").nth(1).map(|s| format!("[gan]{s}")).unwrap()
    );
    fs::write(&run.config, cfg).unwrap();
    run.ok(&["train-gan"]);
    run.ok(&["generate"]);
    let syn = read(&run.out("generate/synthetic.csv"));
    let mut lines = syn.lines();
    assert_eq!(lines.next().unwrap(), "age,colour=red,colour=green,colour=blue,income,label");
    let mut rows = 0;
    for l in lines {
        let cells: Vec<&str> = l.split(',').collect();
        let one_hot: Vec<f64> = cells[1..4].iter().map(|c| c.parse().unwrap()).collect();
        assert_eq!(one_hot.iter().sum::<f64>(), 1.0);
        assert!(one_hot.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(cells[5] == ">50K" || cells[5] == "<=50K");
        rows += 1;
    }
    assert_eq!(rows, 120);
    run.ok(&["evaluate"]);
}

#[test]
fn argument_and_config_errors() {
    let run = Run::new("");
    assert_eq!(error_of(&run.bcgan(&["--variant", "gan9000", "pretrain"])), (2, "argument".into()));

    fs::write(&run.config, "seed = \"zero\"\n").unwrap();
    assert_eq!(error_of(&run.bcgan(&["pretrain"])), (4, "format".into()));

    let missing = format!(
        "[dataset]\nsource = \"csv\"\ntrain = \"{0}/nope.csv\"\ntest = \"{0}/nope.csv\"\nlabel = \"y\"\n",
        run.root.display()
    );
    fs::write(&run.config, missing).unwrap();
    assert_eq!(error_of(&run.bcgan(&["pretrain"])), (5, "io".into()));
}
