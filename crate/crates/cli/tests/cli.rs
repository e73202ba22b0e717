use std::path::Path;
use std::process::{Command, Output};

const TABLE3: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures/table3.tsv");

fn kner(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kner")).args(args).current_dir(dir).output().unwrap()
}

#[test]
fn corpus_stats_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = kner(dir.path(), &["corpus", "stats", "--in", TABLE3, "--json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n_sentences"], 2);
    assert_eq!(v["n_tokens"], 8);
    assert_eq!(v["tag_counts"]["B-ani"], 2);
    let manifest: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(manifest["command"], "corpus stats");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kner(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(kner(dir.path(), &["corpus", "stats"]).status.code(), Some(1));
    assert_eq!(kner(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(kner(dir.path(), &["corpus", "stats", "--in", "missing.tsv"]).status.code(), Some(2));
    std::fs::write(dir.path().join("bad.tsv"), "sentence_id\tword\ttag\ns1\tword\tX-per\n").unwrap();
    let out = kner(dir.path(), &["corpus", "validate", "--in", "bad.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn normalize_segment_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("raw.txt"), "ژمارە ٦٧٠٠ بوو. كتێب هات\n").unwrap();
    let out = kner(dir.path(), &["normalize", "--in", "raw.txt", "--out", "norm.txt", "--audit", "audit.jsonl"]);
    assert!(out.status.success());
    let norm = std::fs::read_to_string(dir.path().join("norm.txt")).unwrap();
    assert!(norm.contains("6700") && !norm.contains('ك'));
    let audit = std::fs::read_to_string(dir.path().join("audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 5);
    assert!(dir.path().join("norm.txt.manifest.json").exists());

    assert!(kner(dir.path(), &["segment", "--in", "norm.txt", "--out", "sent.txt"]).status.success());
    let sents = std::fs::read_to_string(dir.path().join("sent.txt")).unwrap();
    assert_eq!(sents.lines().count(), 2);
}

#[test]
fn split_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(kner(d, &["synth", "--sentences", "40", "--out", "c.tsv"]).status.success());
    assert!(kner(d, &["corpus", "split", "--in", "c.tsv", "--seed", "2", "--out-prefix", "p"]).status.success());
    let lines = |f: &str| std::fs::read_to_string(d.join(f)).unwrap();
    assert!(lines("p.train.tsv").starts_with("sentence_id\tword\ttag\n"));
    let out = kner(d, &["tokenizer", "train", "--method", "bpe", "--vocab", "200", "--in", "p.train.tsv", "--out", "tok.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::write(d.join("run.toml"), "epochs = 2\nlearning_rate = 1e-3\n").unwrap();
    let out = kner(d, &["train", "--corpus", "p.train.tsv", "--val", "p.val.tsv", "--tokenizer", "tok.json", "--config", "run.toml", "--out", "ck.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&lines("ck.json.manifest.json")).unwrap();
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 4);
    let out = kner(d, &["eval", "--ckpt", "ck.json", "--corpus", "p.test.tsv", "--json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((0.0..=100.0).contains(&v["f1"].as_f64().unwrap()));
}

#[test]
fn unknown_config_key_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(kner(d, &["synth", "--sentences", "10", "--out", "c.tsv"]).status.success());
    std::fs::write(d.join("bad.toml"), "epochz = 1\n").unwrap();
    assert_eq!(kner(d, &["benchmark", "--corpus", "c.tsv", "--config", "bad.toml", "--out", "o"]).status.code(), Some(2));
}

#[test]
fn benchmark_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(kner(d, &["synth", "--sentences", "30", "--out", "c.tsv"]).status.success());
    std::fs::write(d.join("fast.toml"), "epochs = 2\n").unwrap();
    for out in ["a", "b"] {
        let r = kner(d, &["benchmark", "--corpus", "c.tsv", "--config", "fast.toml", "--seed", "7", "--out", out]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["table6.tsv", "table6.json", "table7.tsv", "table7.json"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    let t7 = std::fs::read_to_string(d.join("a/table7.tsv")).unwrap();
    assert_eq!(t7.lines().next().unwrap(), "comparison\ttokenization\tdelta_f1");
    assert!(d.join("a/manifest.json").exists());
}
