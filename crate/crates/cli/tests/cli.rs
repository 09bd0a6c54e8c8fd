use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sample(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample").join(name)
}

/// Runs `tpot` with the cache confined to `dir`.
fn tpot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tpot"))
        .args(args)
        .env("TPOT_CACHE_DIR", dir.join("cache"))
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Shared small-model flags on the sample corpus.
fn quick<'a>(topics: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "--dataset", "DATASET", "--backend", topics, "--dim", "16", "--hidden", "4",
        "--epochs", "15", "--out", out,
    ]
}

fn with_dataset<'a>(mut args: Vec<&'a str>, dataset: &'a str) -> Vec<&'a str> {
    for a in args.iter_mut() {
        if *a == "DATASET" {
            *a = dataset;
        }
    }
    args
}

#[test]
fn stats_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let essays = sample("essays.jsonl");
    let o = tpot(dir.path(), &["stats", "--dataset", path(&essays), "--out", path(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden_table = std::fs::read(sample("stats.golden.txt")).unwrap();
    assert_eq!(o.stdout, golden_table);
    let json = std::fs::read(dir.path().join("stats.json")).unwrap();
    assert_eq!(json, std::fs::read(sample("stats.golden.json")).unwrap());
}

#[test]
fn bad_datasets_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = tpot(dir.path(), &["stats", "--dataset", path(&empty), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no records"), "{}", stderr(&o));

    let bad = dir.path().join("bad.jsonl");
    let mut lines: Vec<String> = (0..6)
        .map(|i| format!(r#"{{"author_id":"a{i}","text":"Hello there."}}"#))
        .collect();
    lines.push("{not json".into());
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let o = tpot(dir.path(), &["stats", "--dataset", path(&bad), "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":7:"), "{}", stderr(&o));
}

#[test]
fn baseline_report_has_trait_rows_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let essays = sample("essays.jsonl");
    let run = |out: &Path| {
        let o = tpot(
            dir.path(),
            &["eval", "--model", "baseline", "--dataset", path(&essays), "--seed", "3", "--out", path(out)],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("report_baseline_trait.json")).unwrap()
    };
    let a = run(&dir.path().join("a"));
    let b = run(&dir.path().join("b"));
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_slice(&a).unwrap();
    let targets = report["targets"].as_object().unwrap();
    let mut keys: Vec<&str> = targets.keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["A", "C", "E", "N", "O"]);
    assert_eq!(report["folds"].as_array().unwrap().len(), 10);
    assert!(dir.path().join("a/report_baseline_trait.txt").exists());
}

#[test]
fn tpot_eval_is_byte_identical_across_runs_and_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let essays = sample("essays.jsonl");
    let topics = format!("test:1:{}", path(&sample("topics.json")));
    let run = |name: &str, jobs: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["eval", "--model", "m2", "--level", "facet", "--jobs", jobs, "--dump-relevance"];
        args.extend(with_dataset(quick(&topics, path(&out)), path(&essays)));
        let o = tpot(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            std::fs::read(out.join("report_m2_facet.json")).unwrap(),
            std::fs::read(out.join("relevance_m2_facet.jsonl")).unwrap(),
        )
    };
    let a = run("a", "1");
    assert_eq!(a, run("b", "1"));
    assert_eq!(a, run("c", "3"));
    let first: serde_json::Value =
        serde_json::from_str(String::from_utf8(a.1).unwrap().lines().next().unwrap()).unwrap();
    for key in ["author_id", "target", "alphas", "kept", "n_used"] {
        assert!(first.get(key).is_some(), "relevance line lacks {key}");
    }
}

#[test]
fn train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let essays = sample("essays.jsonl");
    let topics = format!("test:1:{}", path(&sample("topics.json")));
    let out = dir.path().join("run");
    let mut args = vec!["train", "--model", "m2", "--level", "facet"];
    args.extend(with_dataset(quick(&topics, path(&out)), path(&essays)));
    let o = tpot(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let count = walk(&out.join("checkpoints"));
    assert_eq!(count, 150);

    let off = dir.path().join("off.jsonl");
    std::fs::write(
        &off,
        "{\"author_id\":\"x1\",\"text\":\"The bus was late. We had pasta on Sunday.\"}\n",
    )
    .unwrap();
    let predict = |fold: &str| {
        let mut args = vec!["predict", "--model", "m2", "--level", "facet", "--fold", fold];
        args.extend(with_dataset(quick(&topics, path(&out)), path(&off)));
        tpot(dir.path(), &args)
    };
    let o = predict("2");
    assert!(o.status.success(), "{}", stderr(&o));
    let line = std::fs::read_to_string(out.join("predictions_m2_facet.jsonl")).unwrap();
    let pred: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(pred["facet_scores"].as_array().unwrap().len(), 15);
    assert_eq!(pred["trait_scores"].as_array().unwrap().len(), 5);
    let used = pred["n_sentences_used"].as_object().unwrap();
    assert_eq!(used.len(), 15);
    assert!(used.values().all(|v| v == 0));

    let o = predict("11");
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("fold 11") && err.contains("O_Int"), "{err}");
}

fn walk(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "ckpt"))
            }
        })
        .sum()
}

#[test]
fn catalog_archive_must_match_backend() {
    let dir = tempfile::tempdir().unwrap();
    let archive = dir.path().join("items.bin");
    let o = tpot(
        dir.path(),
        &["embed-catalog", "--backend", "test:1", "--dim", "8", "--archive", path(&archive), "--out", path(dir.path())],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(archive.exists());

    let essays = sample("essays.jsonl");
    let o = tpot(
        dir.path(),
        &[
            "eval", "--model", "m2", "--dataset", path(&essays), "--backend", "test:1", "--dim", "32",
            "--archive", path(&archive), "--out", path(dir.path()),
        ],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("dim 8"), "{}", stderr(&o));
}

#[test]
fn unreachable_backend_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = format!("http:127.0.0.1:{port}");
    let o = tpot(dir.path(), &["embed-catalog", "--backend", &backend, "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn help_documents_seed_derivation() {
    let dir = tempfile::tempdir().unwrap();
    let o = tpot(dir.path(), &["--help"]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("seed + 1000 * f"), "{text}");
}

#[test]
fn synth_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    let o = tpot(dir.path(), &["synth", "--authors", "30", "--seed", "2", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let data = out.join("synthetic.jsonl");
    assert_eq!(std::fs::read_to_string(&data).unwrap().lines().count(), 30);

    let topics = format!("test:1:{}", path(&out.join("topics.json")));
    for model in ["baseline", "m1"] {
        let mut args = vec!["eval", "--model", model, "--folds", "3"];
        args.extend(with_dataset(quick(&topics, path(&out)), path(&data)));
        let o = tpot(dir.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = tpot(
        dir.path(),
        &[
            "compare",
            path(&out.join("report_baseline_trait.json")),
            path(&out.join("report_m1_trait.json")),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.starts_with("| target | baseline | m1 |"), "{table}");
    assert_eq!(table.lines().count(), 7);
    assert!(table.contains("**"));

    let o = tpot(dir.path(), &["compare", path(&out.join("missing.json"))]);
    assert_eq!(o.status.code(), Some(3));
}
