use std::path::Path;
use std::process::{Command, Output};

use luxkit::corpus_io::{read_embeddings, write_corpus, write_scores, Document, Scores};

fn luxkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_luxkit"))
        .current_dir(dir)
        .env_remove("LUXKIT_WORKERS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = luxkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn no_arguments_prints_usage_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = luxkit(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
}

#[test]
fn help_exits_0_and_unknown_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let help = luxkit(dir.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("mine-vocab"));
    assert_eq!(luxkit(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(luxkit(dir.path(), &["embed", "--bogus", "x"]).status.code(), Some(1));
    let out = luxkit(dir.path(), &["filter", "--scores", "s.luxs", "--fraction", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.luxm"), b"NOPE").unwrap();
    write_corpus(dir.path().join("c.jsonl"), &[Document::new("a", "x y")]).unwrap();
    let out = luxkit(dir.path(), &["embed", "--model", "bad.luxm", "--corpus", "c.jsonl", "--out", "e.luxe"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let out = luxkit(dir.path(), &["filter", "--scores", "missing.luxs", "--fraction", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("broken.jsonl"), "{\"id\": \"a\", \"text\": \"x\"}\n{\"id\": 3\n").unwrap();
    let out = luxkit(
        dir.path(),
        &["mine-vocab", "--corpus", "broken.jsonl", "--out-vocab", "v.luxv", "--out-model", "m.luxm", "--dims", "4,2"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn embed_smoke_writes_unit_rows() {
    let dir = tempfile::tempdir().unwrap();
    let docs = [
        Document::new("a", "the cat sat on the mat"),
        Document::new("b", "a dog ran in the park"),
        Document::new("c", "the cat and the dog"),
    ];
    write_corpus(dir.path().join("c.jsonl"), &docs).unwrap();
    ok(
        dir.path(),
        &[
            "mine-vocab",
            "--corpus",
            "c.jsonl",
            "--out-vocab",
            "v.luxv",
            "--out-model",
            "m.luxm",
            "--max-n",
            "2",
            "--vocab-size",
            "20",
            "--dims",
            "4,3",
            "--seed",
            "1",
        ],
    );
    ok(dir.path(), &["embed", "--model", "m.luxm", "--corpus", "c.jsonl", "--out", "e.luxe"]);
    let emb = read_embeddings(dir.path().join("e.luxe")).unwrap();
    assert_eq!(emb.ids(), ["a", "b", "c"]);
    for row in emb.rows() {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5, "row norm {norm}");
    }
}

#[test]
fn filter_keeps_ceiling_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<String> = (0..10).map(|i| format!("d{i}")).collect();
    let scores: Vec<f32> = (0..10).map(|i| (i as f32 * 0.37).sin()).collect();
    write_scores(dir.path().join("s.luxs"), &Scores::new(ids, scores).unwrap()).unwrap();
    let out = ok(dir.path(), &["filter", "--scores", "s.luxs", "--fraction", "0.1"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "d4\n");
    let out = ok(dir.path(), &["filter", "--scores", "s.luxs", "--fraction", "0.25"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
}

/// Every stage of the pipeline on a small synthetic corpus, returning the
/// bytes of each output file.
fn run_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let config =
        "seed = 11\n[model]\ndims = [16, 8]\n[train]\nbatch_size = 64\nepochs = 2\n[eval]\nks = [1, 10, 1000]\n";
    std::fs::write(dir.join("run.toml"), config).unwrap();
    let c = ["--config", "run.toml"];
    let with = |args: &[&'static str]| -> Vec<&'static str> { c.iter().copied().chain(args.iter().copied()).collect() };

    ok(
        dir,
        &with(&[
            "synth",
            "--out-corpus",
            "corpus.jsonl",
            "--out-teacher",
            "teacher.luxe",
            "--docs",
            "240",
            "--topics",
            "4",
        ]),
    );
    ok(
        dir,
        &with(&[
            "mine-vocab",
            "--corpus",
            "corpus.jsonl",
            "--out-vocab",
            "vocab.luxv",
            "--out-model",
            "init.luxm",
            "--max-n",
            "2",
            "--vocab-size",
            "2000",
        ]),
    );
    let train = ok(
        dir,
        &with(&[
            "train",
            "--corpus",
            "corpus.jsonl",
            "--teacher",
            "teacher.luxe",
            "--model",
            "init.luxm",
            "--out",
            "model.luxm",
            "--metrics",
            "metrics.ndjson",
            "--optimizer-out",
            "opt.luxo",
        ]),
    );
    let log = stderr(&train);
    assert!(log.contains("\"batch_size\":64") && log.contains("\"epochs\":2"), "{log}");
    ok(dir, &with(&["embed", "--model", "model.luxm", "--corpus", "corpus.jsonl", "--out", "emb.luxe"]));
    ok(
        dir,
        &with(&[
            "eval-halves",
            "--model",
            "model.luxm",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "curve.json",
            "--csv",
            "curve.csv",
        ]),
    );

    let emb = read_embeddings(dir.join("emb.luxe")).unwrap();
    let labels: String = emb
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| format!("{{\"id\":\"{id}\",\"label\":{}}}\n", u8::from(i % 4 == 0)))
        .collect();
    std::fs::write(dir.join("labels.ndjson"), labels).unwrap();
    ok(
        dir,
        &with(&[
            "train-classifier",
            "--embeddings",
            "emb.luxe",
            "--labels",
            "labels.ndjson",
            "--out",
            "scorer.luxc",
            "--hidden",
            "8",
            "--epochs",
            "3",
        ]),
    );
    ok(
        dir,
        &with(&[
            "score",
            "--model",
            "model.luxm",
            "--scorer",
            "scorer.luxc",
            "--corpus",
            "corpus.jsonl",
            "--out",
            "scores.luxs",
        ]),
    );
    ok(dir, &with(&["filter", "--scores", "scores.luxs", "--fraction", "0.1", "--out", "kept.txt"]));

    [
        "corpus.jsonl",
        "teacher.luxe",
        "vocab.luxv",
        "init.luxm",
        "model.luxm",
        "metrics.ndjson",
        "opt.luxo",
        "emb.luxe",
        "curve.json",
        "curve.csv",
        "scorer.luxc",
        "scores.luxs",
        "kept.txt",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
    .collect()
}

#[test]
fn pipeline_runs_end_to_end_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_pipeline(a.path());
    let second = run_pipeline(b.path());
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        assert!(x == y, "{name} differs between identical runs");
    }

    let curve: serde_json::Value =
        serde_json::from_slice(&first.iter().find(|(n, _)| n == "curve.json").unwrap().1).unwrap();
    let errors = curve["errors"].as_array().unwrap();
    assert_eq!(errors.len(), 3);
    assert_eq!(errors[2].as_f64(), Some(0.0));
    let csv = String::from_utf8(first.iter().find(|(n, _)| n == "curve.csv").unwrap().1.clone()).unwrap();
    assert!(csv.starts_with("k,error\n1,"), "{csv}");
    let kept = String::from_utf8(first.iter().find(|(n, _)| n == "kept.txt").unwrap().1.clone()).unwrap();
    assert_eq!(kept.lines().count(), 24);
    let metrics = String::from_utf8(first.iter().find(|(n, _)| n == "metrics.ndjson").unwrap().1.clone()).unwrap();
    assert_eq!(metrics.lines().count(), 8);
}

#[test]
fn seed_flag_changes_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path().join("c.jsonl"), &[Document::new("a", "x y z"), Document::new("b", "y z w")]).unwrap();
    let mine = |seed: &str, out: &str| {
        ok(
            dir.path(),
            &[
                "mine-vocab",
                "--corpus",
                "c.jsonl",
                "--out-vocab",
                "v.luxv",
                "--out-model",
                out,
                "--dims",
                "4,2",
                "--seed",
                seed,
            ],
        );
        std::fs::read(dir.path().join(out)).unwrap()
    };
    assert_eq!(mine("1", "a.luxm"), mine("1", "b.luxm"));
    assert_ne!(mine("1", "a.luxm"), mine("2", "c.luxm"));
}

#[test]
fn bench_writes_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let docs: Vec<Document> =
        (0..20).map(|i| Document::new(format!("d{i}"), format!("alpha beta w{i} gamma"))).collect();
    write_corpus(dir.path().join("c.jsonl"), &docs).unwrap();
    ok(
        dir.path(),
        &["mine-vocab", "--corpus", "c.jsonl", "--out-vocab", "v.luxv", "--out-model", "m.luxm", "--dims", "4,2"],
    );
    let out = Command::new(env!("CARGO_BIN_EXE_luxkit"))
        .current_dir(dir.path())
        .env("LUXKIT_WORKERS", "1")
        .args(["bench", "--model", "m.luxm", "--corpus", "c.jsonl", "--mode", "tokenize-only", "--repeats", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stderr(&out).contains("\"workers\":1"), "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["mode"], "tokenize_only");
    assert_eq!(report["n_docs"], 20);
}
