use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TINY: [&str; 12] = [
    "--set",
    "model.d_model=8",
    "--set",
    "model.layers=1",
    "--set",
    "model.heads=2",
    "--set",
    "model.ff_dim=16",
    "--set",
    "train.iterations=1",
    "--set",
    "train.rec_epochs_per_iter=1",
];

fn textid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_textid")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = textid(args);
    assert!(
        out.status.success(),
        "textid {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn ok_tiny(args: &[&str]) -> Output {
    let mut all = args.to_vec();
    all.extend(TINY);
    ok(&all)
}

/// Appends one token so the file hashes differently from what was trained.
fn extend_vocab(path: &Path) {
    let mut text = fs::read_to_string(path).unwrap();
    let next = text.lines().count();
    text.push_str(&format!("zzzextra\t{next}\n"));
    fs::write(path, text).unwrap();
}

fn path(root: &Path, s: &str) -> String {
    root.join(s).to_string_lossy().into_owned()
}

fn read_lines(p: &Path) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn ingest_writes_splits_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| path(dir.path(), s);
    ok(&["synth", "--out", &p("raw"), "--seed", "3"]);
    ok(&["ingest", "--data", &p("raw"), "--out", &p("a")]);
    ok(&["ingest", "--data", &p("raw"), "--out", &p("b")]);
    for f in ["items.jsonl", "train.jsonl", "valid.jsonl", "test.jsonl"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert!(!a.is_empty(), "{f} is empty");
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f} differs");
    }
    assert_eq!(read_lines(&dir.path().join("a/test.jsonl")).len(), 50);
}

#[test]
fn missing_items_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| path(dir.path(), s);
    ok(&["synth", "--out", &p("raw")]);
    fs::remove_file(dir.path().join("raw/items.jsonl")).unwrap();
    let out = textid(&["ingest", "--data", &p("raw"), "--out", &p("prepared")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("items.jsonl"));
}

#[test]
fn bad_override_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| path(dir.path(), s);
    ok(&["synth", "--out", &p("raw")]);
    ok(&["ingest", "--data", &p("raw"), "--out", &p("prepared")]);
    let out = textid(&["allocate", "--data", &p("prepared"), "--out", &p("ids"), "--set", "train.nonsense=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fuse_caps_sources_and_namespaces_keys() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| path(dir.path(), s);
    ok(&["synth", "--out", &p("shop"), "--name", "shop", "--seed", "1"]);
    ok(&["synth", "--out", &p("cafe"), "--pattern", "periodic", "--name", "cafe", "--users", "12", "--seed", "2"]);
    let manifest = r#"{"sources": [{"path": "shop"}, {"path": "cafe"}], "user_cap": 20, "seed": 9}"#;
    fs::write(dir.path().join("manifest.json"), manifest).unwrap();
    ok(&["fuse", "--data", &p("manifest.json"), "--out", &p("f1")]);
    ok(&["fuse", "--data", &p("manifest.json"), "--out", &p("f2")]);
    ok(&["fuse", "--data", &p("manifest.json"), "--out", &p("f3"), "--seed", "10"]);

    let logs = read_lines(&dir.path().join("f1/interactions.jsonl"));
    let count = |prefix: &str| logs.iter().filter(|l| l["user"].as_str().unwrap().starts_with(prefix)).count();
    assert_eq!(count("shop/"), 20);
    assert_eq!(count("cafe/"), 12);
    for l in &logs {
        let user = l["user"].as_str().unwrap();
        let source = user.split('/').next().unwrap();
        for item in l["items"].as_array().unwrap() {
            assert!(item.as_str().unwrap().starts_with(&format!("{source}/")));
        }
    }
    let items = read_lines(&dir.path().join("f1/items.jsonl"));
    assert!(items.iter().all(|i| {
        let key = i["item"].as_str().unwrap();
        key.starts_with("shop/") || key.starts_with("cafe/")
    }));

    let bytes = |d: &str| fs::read(dir.path().join(d).join("interactions.jsonl")).unwrap();
    assert_eq!(bytes("f1"), bytes("f2"));
    assert_ne!(bytes("f1"), bytes("f3"));
}

#[test]
fn train_eval_and_compatibility_checks() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| path(dir.path(), s);
    ok(&["synth", "--out", &p("raw"), "--users", "20", "--seed", "4"]);
    ok(&["ingest", "--data", &p("raw"), "--out", &p("prepared")]);
    ok_tiny(&["train", "--data", &p("prepared"), "--out", &p("bundle"), "--seed", "2"]);
    for f in ["config.json", "iter_1/ids.tsv", "final/rec.ckpt", "final/idgen.ckpt", "final/bundle.json"] {
        assert!(dir.path().join("bundle").join(f).exists(), "missing {f}");
    }

    let eval = |out: &str| ok(&["eval", "--bundle", &p("bundle/final"), "--data", &p("prepared"), "--out", &p(out)]);
    eval("e1");
    eval("e2");
    let m1 = fs::read(dir.path().join("e1/metrics.json")).unwrap();
    assert_eq!(m1, fs::read(dir.path().join("e2/metrics.json")).unwrap());
    let report: Value = serde_json::from_slice(&m1).unwrap();
    assert_eq!(report["users"], 20);
    assert!(report["hr@5"].as_f64().unwrap() <= report["hr@10"].as_f64().unwrap());

    ok_tiny(&["allocate", "--data", &p("prepared"), "--out", &p("fresh"), "--seed", "2"]);
    for f in ["ids.tsv", "vocab.tsv", "allocation.json"] {
        assert!(dir.path().join("fresh").join(f).exists(), "missing {f}");
    }

    // A bundle whose vocabulary no longer matches its checkpoints.
    let broken = dir.path().join("broken");
    fs::create_dir(&broken).unwrap();
    for entry in fs::read_dir(dir.path().join("bundle/final")).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), broken.join(entry.file_name())).unwrap();
    }
    extend_vocab(&broken.join("vocab.tsv"));
    let out = textid(&["eval", "--bundle", &p("broken"), "--data", &p("prepared"), "--out", &p("e3")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // Zero-shot data tokenized against a different vocabulary.
    ok(&["synth", "--out", &p("other_raw"), "--name", "other", "--users", "20", "--seed", "8"]);
    ok(&["ingest", "--data", &p("other_raw"), "--out", &p("other")]);
    fs::copy(dir.path().join("fresh/vocab.tsv"), dir.path().join("other/vocab.tsv")).unwrap();
    extend_vocab(&dir.path().join("other/vocab.tsv"));
    let out = textid(&["zeroshot", "--bundle", &p("bundle/final"), "--data", &p("other"), "--out", &p("z")]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    fs::remove_file(dir.path().join("other/vocab.tsv")).unwrap();
    ok(&["zeroshot", "--bundle", &p("bundle/final"), "--data", &p("other"), "--out", &p("z")]);
    let z: Value = serde_json::from_slice(&fs::read(dir.path().join("z/metrics.json")).unwrap()).unwrap();
    assert_eq!(z["mode"], "zero_shot");
}
