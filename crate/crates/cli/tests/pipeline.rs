use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[synth]
n_bags = 60
n_entities = 30
vocab_size = 80
template_length_range = [5, 9]

[model]
word_dim = 8
pos_dim = 2
filters = 16
entity_dim = 8

[transe]
dim = 8
epochs = 20

[train]
cnn_epochs = 2
policy_episodes = 1
episodes = 2
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    run_env(dir, args, None)
}

fn run_env(dir: &Path, args: &[&str], threads: Option<&str>) -> Output {
    let config = dir.join("small.toml");
    if !config.exists() {
        fs::write(&config, SMALL).unwrap();
    }
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_noisy-relex"));
    cmd.args(&args[..1]).arg("--config").arg(&config).args(&args[1..]);
    match threads {
        Some(n) => cmd.env("NOISY_RELEX_THREADS", n),
        None => cmd.env_remove("NOISY_RELEX_THREADS"),
    };
    cmd.output().unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}

fn tensors(path: &Path) -> Value {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v["tensors"].clone()
}

fn stages(dir: &Path, out: &str) {
    for cmd in ["gen-synth", "pretrain-transe", "pretrain-cnn", "pretrain-policy", "train", "select", "eval"] {
        ok(run(dir, &[cmd, "--out", out]));
    }
}

#[test]
fn gen_synth_splits_cover_the_corpus_and_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(run(dir.path(), &["gen-synth", "--out", a.to_str().unwrap(), "--seed", "5"]));
    ok(run(dir.path(), &["gen-synth", "--out", b.to_str().unwrap(), "--seed", "5"]));
    let total: usize = ["train.jsonl", "valid.jsonl", "test.jsonl"].iter().map(|f| lines(&a.join(f))).sum();
    assert!(total >= 60 * 2, "{total} sentences for 60 bags of at least two");
    for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "triples.tsv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let cfg = fs::read_to_string(a.join("gen-synth.config.toml")).unwrap();
    assert!(cfg.contains("rng_seed = 5") && cfg.contains("n_bags = 60"));

    let c = dir.path().join("c");
    ok(run(dir.path(), &["gen-synth", "--out", c.to_str().unwrap(), "--split", "[1.0, 0.0, 0.0]", "--seed", "5"]));
    assert_eq!(lines(&c.join("valid.jsonl")), 0);
    assert_eq!(lines(&c.join("test.jsonl")), 0);
    assert_eq!(lines(&c.join("train.jsonl")), total);
}

#[test]
fn full_pipeline_writes_every_artifact_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let a = a.to_str().unwrap();
    stages(dir.path(), a);
    let a = Path::new(a);
    for f in [
        "entity_emb.txt",
        "relation_emb.txt",
        "cnn.ckpt.json",
        "policy.ckpt.json",
        "model.ckpt.json",
        "metrics.tsv",
        "policy_metrics.tsv",
        "cleansed.jsonl",
        "decisions.tsv",
        "audit.json",
        "metrics.json",
        "pr.tsv",
        "train.config.toml",
        "eval.config.toml",
    ] {
        assert!(a.join(f).exists(), "{f} missing");
    }
    assert_eq!(lines(&a.join("metrics.tsv")), 1 + 2);
    assert_eq!(lines(&a.join("decisions.tsv")), 1 + lines(&a.join("train.jsonl")));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(a.join("metrics.json")).unwrap()).unwrap();
    let acc = metrics["metrics"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let audit: Value = serde_json::from_str(&fs::read_to_string(a.join("audit.json")).unwrap()).unwrap();
    assert!(audit["audit"]["accuracy"].is_f64());

    let b = dir.path().join("b");
    stages(dir.path(), b.to_str().unwrap());
    for f in ["model.ckpt.json", "metrics.tsv", "decisions.tsv", "metrics.json", "pr.tsv", "audit.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between runs");
    }
}

#[test]
fn zero_joint_episodes_return_the_pretrained_networks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    for cmd in ["gen-synth", "pretrain-transe", "pretrain-cnn", "pretrain-policy"] {
        ok(run(dir.path(), &[cmd, "--out", out]));
    }
    ok(run(dir.path(), &["train", "--out", out, "--train.episodes", "0"]));
    let out = Path::new(out);
    assert_eq!(tensors(&out.join("model.ckpt.json")), tensors(&out.join("policy.ckpt.json")));
    assert!(fs::read_to_string(out.join("train.config.toml")).unwrap().contains("episodes = 0"));
}

#[test]
fn thread_cap_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    for cmd in ["gen-synth", "pretrain-transe"] {
        ok(run(dir.path(), &[cmd, "--out", out]));
    }
    ok(run_env(dir.path(), &["pretrain-cnn", "--out", out], Some("1")));
    let one = fs::read(Path::new(out).join("cnn.ckpt.json")).unwrap();
    ok(run_env(dir.path(), &["pretrain-cnn", "--out", out], Some("3")));
    assert_eq!(one, fs::read(Path::new(out).join("cnn.ckpt.json")).unwrap());

    let bad = run_env(dir.path(), &["pretrain-cnn", "--out", out], Some("zero"));
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("NOISY_RELEX_THREADS"));
}

#[test]
fn missing_artifact_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("empty");
    for (cmd, artifact) in [
        ("pretrain-transe", "triples.tsv"),
        ("pretrain-cnn", "train.jsonl"),
        ("pretrain-policy", "cnn.ckpt.json"),
        ("train", "policy.ckpt.json"),
        ("select", "model.ckpt.json"),
        ("eval", "model.ckpt.json"),
    ] {
        let res = run(dir.path(), &[cmd, "--out", out.to_str().unwrap()]);
        assert!(!res.status.success(), "{cmd} succeeded");
        let err = String::from_utf8_lossy(&res.stderr);
        let want = out.join(artifact);
        assert!(err.contains(&want.display().to_string()), "{cmd}: {err}");
    }
}

#[test]
fn config_errors_list_every_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let res = run(
        dir.path(),
        &["gen-synth", "--out", out.to_str().unwrap(), "--train.bogus", "1", "--nope.x", "2", "--model.filterz", "3"],
    );
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    for key in ["train.bogus", "nope", "model.filterz"] {
        assert!(err.contains(key), "{key} not reported: {err}");
    }
    let res = run(dir.path(), &["gen-synth", "--out", out.to_str().unwrap(), "--train.tau", "2.0", "--train.batch_size", "0"]);
    assert!(!res.status.success());
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("train.tau") && err.contains("train.batch_size"), "{err}");
    assert!(!out.exists(), "nothing is written for an invalid configuration");
}
