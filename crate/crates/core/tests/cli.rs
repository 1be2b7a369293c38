use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_teset");

const SMALL: &str = r#"
seed = 4

[synthetic]
num_clusters = 3
events_per_cluster = 3
num_sequences = 40
max_len = 6

[pretrain]
max_epochs = 5

[model.encoder]
d_model = 8
heads = 2
ff_dim = 16

[train]
batch_size = 16
max_epochs = 3
steps_per_epoch = 4
ensemble_n = 2
"#;

fn teset(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("run.toml");
        std::fs::write(&config, SMALL).unwrap();
        Workspace { _dir: dir, root, config }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    /// Runs with the shared config and the generated corpus.
    fn try_run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let corpus = self.path("gen/corpus.jsonl");
        let vocab = self.path("gen/vocab.json");
        let out = self.path(out);
        let mut args = vec![cmd, "--config", s(&self.config), "--out", s(&out)];
        if cmd != "gen-synthetic" {
            args.extend(["--corpus", s(&corpus), "--vocab", s(&vocab)]);
        }
        args.extend(extra);
        teset(&args)
    }

    fn run(&self, cmd: &str, out: &str, extra: &[&str]) -> Output {
        let o = self.try_run(cmd, out, extra);
        assert!(o.status.success(), "{cmd} failed: {}", stderr(&o));
        o
    }

    fn generate(&self) {
        self.run("gen-synthetic", "gen", &[]);
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_synthetic_writes_corpus_vocab_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = teset(&["gen-synthetic", "--clusters", "4", "--sequences", "10", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["corpus.jsonl", "vocab.json", "truth.json", "resolved_config.toml", "run.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let lines = std::fs::read_to_string(out.join("corpus.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 10);
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("num_clusters = 4"));
    assert_eq!(json(&out.join("run.json"))["seed"], 0);
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let o = teset(&["train", "--config", "definitely-missing.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("definitely-missing.toml"));
}

#[test]
fn unknown_command_exits_2_with_usage() {
    let o = teset(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn config_errors_name_the_key() {
    for (set, key) in [
        ("train.bogus=1", "train.bogus"),
        ("model.encoder.heads=3", "model.encoder.heads"),
        ("train.batch_size=\"big\"", "train.batch_size"),
        ("loss.lambda1=-1", "loss.lambda1"),
    ] {
        let o = teset(&["stats", "--set", set]);
        assert_eq!(o.status.code(), Some(2), "{set}");
        assert!(stderr(&o).contains(key), "{set}: {}", stderr(&o));
    }
}

#[test]
fn train_evaluate_predict_round_trip() {
    let w = Workspace::new();
    w.generate();
    w.run("train", "tr", &[]);
    for f in ["model.json", "metrics.jsonl", "eval_val.json", "resolved_config.toml", "run.json"] {
        assert!(w.path("tr").join(f).exists(), "missing {f}");
    }
    let log: Vec<serde_json::Value> = std::fs::read_to_string(w.path("tr/metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(log.len(), 3);
    let best = log
        .iter()
        .map(|r| r["val_dsc"].as_f64().unwrap())
        .fold(f64::NEG_INFINITY, f64::max);

    let model = w.path("tr/model.json");
    let before = std::fs::read(&model).unwrap();
    w.run("evaluate", "ev", &["--checkpoint", s(&model), "--split", "val"]);
    let ev = json(&w.path("ev/eval.json"));
    assert_eq!(ev["mean_weights"]["dsc"].as_f64().unwrap(), best);
    assert_eq!(json(&w.path("tr/eval_val.json"))["dsc"].as_f64().unwrap(), best);

    let o = w.run("predict", "pr", &["--checkpoint", s(&model), "--seq-id", "syn-00000", "--cut", "2"]);
    let p: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(p["probabilities"].as_array().unwrap().len(), 9);
    assert!(p["gap"].as_f64().unwrap() > 0.0);

    w.run("export-embeddings", "ex", &["--checkpoint", s(&model)]);
    let csv = std::fs::read_to_string(w.path("ex/embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert_eq!(std::fs::read(&model).unwrap(), before, "checkpoint was modified");
}

#[test]
fn rerun_from_resolved_config_is_identical() {
    let w = Workspace::new();
    w.generate();
    w.run("train", "a", &[]);
    let resolved = w.path("a/resolved_config.toml");
    let out = w.path("b");
    let o = teset(&["train", "--config", s(&resolved), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(w.path("a/model.json")).unwrap(),
        std::fs::read(out.join("model.json")).unwrap()
    );
}

#[test]
fn finetune_and_intensity() {
    let w = Workspace::new();
    w.generate();
    w.run("pretrain-embeddings", "pre", &[]);
    assert!(w.path("pre/embeddings.csv").exists());
    let emb = w.path("pre/embeddings.json");
    w.run("train", "tr", &["--embeddings", s(&emb)]);
    let base = w.path("tr/model.json");
    w.run("finetune", "ft", &["--checkpoint", s(&base), "--task", "event-given-time"]);
    let ft = w.path("ft/model.json");
    let before = std::fs::read(&ft).unwrap();

    let o = w.try_run("predict", "p1", &["--checkpoint", s(&ft), "--seq-id", "syn-00001", "--cut", "2"]);
    assert_eq!(o.status.code(), Some(2), "query time should be required");

    w.run(
        "intensity",
        "in",
        &["--checkpoint", s(&ft), "--seq-id", "syn-00001", "--cut", "2", "--events", "c0e0,c1e1", "--step", "0.5", "--horizon", "5"],
    );
    let csv = std::fs::read_to_string(w.path("in/intensity.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "time,c0e0,c1e1");
    assert_eq!(lines.count(), 10);
    assert_eq!(std::fs::read(&ft).unwrap(), before);

    w.run("finetune", "ft2", &["--checkpoint", s(&base), "--task", "time-given-event"]);
    let ft2 = w.path("ft2/model.json");
    let o = w.run("predict", "p2", &["--checkpoint", s(&ft2), "--seq-id", "syn-00001", "--cut", "2", "--event", "c0e0"]);
    let p: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(p["gap_raw"].as_f64().unwrap() > 0.0);
}
