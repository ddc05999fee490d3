use std::path::Path;
use std::process::{Command, Output};

use catpose::checkpoint::load_checkpoint;
use catpose::data::load_csv;

const SMALL: &str = r#"
[data]
categories = 3
per_category = 24
test_per_category = 6
input_dim = 8

[model]
feature_hidden = [12]
feature_dim = 8
category_hidden = [8]
head_hidden = [10, 6]

[train]
batch_size = 12
epochs_pretrain = 2
epochs_heads = 2
epochs_oracle = 2
epochs_category = 1
epochs_joint = 2
"#;

fn catpose(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_catpose"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

#[test]
fn gen_data_writes_requested_split() {
    let dir = small_dir();
    let o = catpose(dir.path(), &["gen-data", "--config", "small.toml", "--split", "test", "--out", "test.csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("wrote 18 samples"));
    let ds = load_csv(&dir.path().join("test.csv")).unwrap();
    assert_eq!(ds.category_counts(), vec![6, 6, 6]);
    assert_eq!(ds.input_dim, 8);
    let header = std::fs::read_to_string(dir.path().join("test.csv")).unwrap();
    assert!(header.starts_with("x0,x1,x2,x3,x4,x5,x6,x7,cat,y0,y1,y2\n"));
}

#[test]
fn train_is_reproducible_and_resumable() {
    let dir = small_dir();
    let train = |out: &str| {
        let o = catpose(dir.path(), &["train", "--config", "small.toml", "--seed", "5", "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        o
    };
    let o = train("a");
    let text = stdout(&o);
    for (i, name) in ["pretrain", "heads", "pose-first", "category", "joint"].iter().enumerate() {
        assert!(text.contains(&format!("phase {}/5: {name}", i + 1)), "{text}");
        assert!(dir.path().join("a").join(format!("phase-{}-{name}.pfck", i + 1)).exists());
    }
    train("b");
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/metrics.jsonl"), read("b/metrics.jsonl"));
    assert_eq!(read("a/final.pfck"), read("b/final.pfck"));

    let metrics = String::from_utf8(read("a/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 9);
    let first = metrics.lines().next().unwrap();
    let mut at = 0;
    for key in ["epoch", "phase", "loss_pose", "loss_cat", "val_pose_err_deg", "val_cat_acc", "wall_ms"] {
        let pos = first.find(&format!("\"{key}\":")).unwrap_or_else(|| panic!("{key} missing in {first}"));
        assert!(pos >= at, "{key} out of order in {first}");
        at = pos;
    }
    let v: serde_json::Value = serde_json::from_str(first).unwrap();
    assert_eq!(v.as_object().unwrap().len(), 7);

    std::fs::create_dir(dir.path().join("c")).unwrap();
    std::fs::copy(dir.path().join("a/metrics.jsonl"), dir.path().join("c/metrics.jsonl")).unwrap();
    let o = catpose(
        dir.path(),
        &["train", "--config", "small.toml", "--seed", "5", "--out", "c", "--resume", "a/phase-3-pose-first.pfck"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!stdout(&o).contains("phase 3/5"));
    assert_eq!(read("a/metrics.jsonl"), read("c/metrics.jsonl"));
    assert_eq!(read("a/final.pfck"), read("c/final.pfck"));

    let ck = load_checkpoint(&dir.path().join("a/final.pfck")).unwrap();
    assert_eq!((ck.phases_done, ck.epochs_done), (5, 9));
}

#[test]
fn eval_reports_and_rejects_bad_inputs() {
    let dir = small_dir();
    let cfg = ["--config", "small.toml"];
    let mut args = vec!["train", "--out", "r"];
    args.extend(cfg);
    assert_eq!(catpose(dir.path(), &args).status.code(), Some(0));

    let o = catpose(
        dir.path(),
        &["eval", "--config", "small.toml", "--checkpoint", "r/final.pfck", "--topk", "3", "--oracle-category", "--out", "e.json"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("top-3"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(report["num_samples"], 18);
    assert_eq!(report["category_source"], "oracle");

    catpose(dir.path(), &["gen-data", "--config", "small.toml", "--set", "data.input_dim=5", "--out", "narrow.csv"]);
    let o = catpose(dir.path(), &["eval", "--checkpoint", "r/final.pfck", "--data", "narrow.csv"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let mut bytes = std::fs::read(dir.path().join("r/final.pfck")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x10;
    std::fs::write(dir.path().join("bad.pfck"), &bytes).unwrap();
    let o = catpose(dir.path(), &["eval", "--config", "small.toml", "--checkpoint", "bad.pfck"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = catpose(dir.path(), &["eval", "--config", "small.toml", "--checkpoint", "missing.pfck"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = small_dir();
    for args in [
        vec!["train", "--config", "small.toml", "--set", "train.no_such_key=1"],
        vec!["train", "--config", "small.toml", "--protocol", "sideways"],
        vec!["train", "--config", "small.toml", "--lambda", "-1"],
        vec!["train", "--config", "small.toml", "--set", "train.batch_size=2"],
        vec!["ablate", "--suite", "nope"],
    ] {
        let o = catpose(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn io_errors_exit_3() {
    let dir = small_dir();
    let o = catpose(dir.path(), &["gen-data", "--config", "small.toml", "--out", "no/such/dir/x.csv"]);
    assert_eq!(o.status.code(), Some(3));
    let o = catpose(dir.path(), &["train", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = small_dir();
    std::fs::write(dir.path().join("broken.toml"), "[train\nlr = ").unwrap();
    let o = catpose(dir.path(), &["train", "--config", "broken.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 1"));
}

#[test]
fn diverging_training_exits_4() {
    let dir = small_dir();
    let o = catpose(dir.path(), &["train", "--config", "small.toml", "--set", "train.lr=1e300", "--out", "nan"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_names_faults() {
    let dir = small_dir();
    let o = catpose(dir.path(), &["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("gradcheck passed"));

    let o = catpose(dir.path(), &["gradcheck", "--set", "gradcheck.inject_fault=head.1.fc2.weight"]);
    assert_eq!(o.status.code(), Some(5));
    assert!(stdout(&o).contains("worst coordinate"));
    assert!(stdout(&o).contains("head.1.fc2.weight[0]"));
    assert!(stderr(&o).contains("head.1.fc2.weight"));
}
