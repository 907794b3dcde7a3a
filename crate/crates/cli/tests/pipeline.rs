mod common;

use common::*;
use lail_core::synthetic::SyntheticSpec;
use serde_json::json;

fn small(name: &str) -> SyntheticSpec {
    SyntheticSpec {
        name: name.into(),
        train: 60,
        test: 20,
        ..Default::default()
    }
}

#[test]
fn end_to_end_writes_reports_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let (data, corpus) = write_corpus(dir.path(), &small("tiny"));
    let cfg = write_config(dir.path(), &data, "tiny", json!({"train": {"epochs": 2}}));
    let out = dir.path().join("out");
    full_pipeline(&cfg, &out, &corpus.dataset.test);
    for f in [
        "labels.jsonl",
        "checkpoint.json",
        "index.json",
        "selections.jsonl",
        "comparison.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
        assert!(out.join(format!("{f}.meta.json")).exists(), "{f} meta");
    }
    for s in ["trained", "random", "bm25", "embed_topk", "uncertainty"] {
        let p = pass_at(&read_report(&out, s), 1);
        assert!((0.0..=1.0).contains(&p));
    }
    let again = run_ok(&["label", "--config", cfg.to_str().unwrap()]);
    assert!(again.contains("cached"), "{again}");
    let again = run_ok(&["eval", "--config", cfg.to_str().unwrap()]);
    assert!(again.contains("cached"), "{again}");
    let report = run_ok(&["report", "--config", cfg.to_str().unwrap(), "--baseline", "bm25"]);
    assert!(report.contains("trained"), "{report}");
}

#[test]
fn config_change_invalidates_downstream_stage() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = write_corpus(dir.path(), &small("inv"));
    let cfg = write_config(dir.path(), &data, "inv", json!({}));
    let c = cfg.to_str().unwrap();
    run_ok(&["label", "--config", c]);
    let before = std::fs::read(dir.path().join("out/labels.jsonl")).unwrap();
    let out = run_ok(&["label", "--config", c, "--set", "label.z=3"]);
    assert!(!out.contains("cached"));
    let after = std::fs::read(dir.path().join("out/labels.jsonl")).unwrap();
    assert_ne!(before, after);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = write_corpus(dir.path(), &small("codes"));
    let cfg = write_config(dir.path(), &data, "codes", json!({}));
    let c = cfg.to_str().unwrap();

    assert_eq!(lail(&["train", "--config", c]).status.code(), Some(2));
    assert_eq!(lail(&["index", "--config", c]).status.code(), Some(2));
    assert_eq!(
        lail(&["label", "--config", c, "--set", "selection.r=17"]).status.code(),
        Some(1)
    );
    assert_eq!(
        lail(&["label", "--config", c, "--set", "nonsense=1"]).status.code(),
        Some(1)
    );
    assert_eq!(lail(&["label", "--config", "/nonexistent.json"]).status.code(), Some(1));
    assert_eq!(lail(&["bogus"]).status.code(), Some(1));
    assert_eq!(lail(&["--help"]).status.code(), Some(0));
    let transfer = lail(&["transfer-eval", "--config", c]);
    assert_eq!(transfer.status.code(), Some(1));

    // An http provider that cannot be reached is a provider failure.
    let unreachable = lail(&[
        "label",
        "--config",
        c,
        "--set",
        r#"providers.scorer={"kind":"http","endpoint":"http://127.0.0.1:9","model_name":"m","timeout_secs":1,"retry":{"max_attempts":1,"backoff_base_ms":0}}"#,
    ]);
    assert_eq!(
        unreachable.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&unreachable.stderr)
    );
    let meta = std::fs::read_to_string(dir.path().join("out/labels.jsonl.meta.json")).unwrap();
    assert!(
        meta.contains("\"complete\": false") || meta.contains("\"complete\":false"),
        "{meta}"
    );
}

#[test]
fn subprocess_verdicts_need_consent() {
    let dir = tempfile::tempdir().unwrap();
    let (data, mut corpus) = write_corpus(dir.path(), &small("sub"));
    for t in &mut corpus.dataset.test {
        t.tests = vec!["true".into()];
    }
    corpus.dataset.export(&data).unwrap();
    let cfg = write_config(
        dir.path(),
        &data,
        "sub",
        json!({
            "selection": {"strategies": ["random", "bm25"]},
            "eval": {"verdicts": {"kind": "subprocess_runner", "command": ["sh", "-c", "exit 0"], "file_extension": "sh"}},
        }),
    );
    let c = cfg.to_str().unwrap();
    run_ok(&["retrieve", "--config", c]);
    assert_eq!(lail(&["eval", "--config", c]).status.code(), Some(1));
    run_ok(&["eval", "--config", c, "--i-understand-execution-risk"]);
    let report = read_report(&dir.path().join("out"), "bm25");
    assert_eq!(pass_at(&report, 1), 1.0);
}
