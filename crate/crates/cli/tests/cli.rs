//! End-to-end runs of the `grounded` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn grounded(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_grounded")).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY_RUN: &str = r#"
[corpus]
classes = 6
pairs = 120
seed = 4

[budget]
words = 3000
images = 0

[model]
hidden_dim = 16
num_layers = 1
num_heads = 2
ffn_dim = 32
codebook_size = 8
max_text_len = 32
projection_dim = 8

[train]
micro_batch_size = 4
accumulation_steps = 1
warmup_steps = 2
max_steps = 6
validation_interval_steps = 3
codebook_iters = 2
codebook_max_images = 16
max_validation_examples = 8

[eval]
pppl_sentences = 10
minimal_pairs_per_phenomenon = 5
probe_train = 20
probe_test = 20
finetune_epochs = 1
retrieval_queries = 12
"#;

fn pretrain(dir: &Path, config: &str) -> std::path::PathBuf {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("run");
    let o = grounded(&["pretrain", "--config", path(&cfg), "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("selected checkpoint step"));
    out
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = grounded(&["gen-data", "--classes", "5", "--pairs", "40", "--seed", "3", "--out", path(d)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 5);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(grounded(&["gen-data", "--pairs", "0", "--out", path(dir.path())]).status.code(), Some(2));
    assert_eq!(grounded(&["pretrain"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[budget]\nwords = 10\nimages = 0\n[train]\nmax_stepz = 1\n").unwrap();
    assert_eq!(grounded(&["pretrain", "--config", path(&cfg), "--out", path(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("nope");
    assert_eq!(grounded(&["eval", "--checkpoint", path(&missing)]).status.code(), Some(1));
}

#[test]
fn text_only_run_trains_mlm_only_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let out = pretrain(dir.path(), TINY_RUN);
    for entry in fs::read_dir(out.join("manifests")).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        let manifest: toml::Table = toml::from_str(&text).unwrap();
        let losses: Vec<&String> = manifest["val_losses"].as_table().unwrap().keys().collect();
        assert_eq!(losses, vec!["mlm"]);
    }

    let report = dir.path().join("eval.toml");
    let o = grounded(&["eval", "--checkpoint", path(&out), "--out", path(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&report).unwrap();
    let body: toml::Table = toml::from_str(&text).unwrap();
    for key in ["pppl", "minimal_pairs", "finetune", "retrieval"] {
        assert!(body.contains_key(key), "report lacks {key}");
    }
    let retrieval = body["retrieval"].as_table().unwrap();
    assert!(retrieval.contains_key("top1") && retrieval.contains_key("top5"));

    // a cutoff larger than the class count is a usage error
    let o = grounded(&["eval", "--checkpoint", path(&out), "--suite", "retrieval", "--k", "7", "--out", path(&report)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = pretrain(dir.path(), TINY_RUN);
    let vocab = out.join("vocab.txt");
    let text = fs::read_to_string(&vocab).unwrap();
    let (_, rest) = text.split_once('\n').unwrap();
    fs::write(&vocab, format!("# config_hash deadbeef\n{rest}")).unwrap();
    let o = grounded(&["eval", "--checkpoint", path(&out), "--suite", "pppl"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("belongs to config"));
}
