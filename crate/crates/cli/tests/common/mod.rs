#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lail_core::corpus::Example;
use lail_core::evaluation::{SampleRecord, Verdict};
use lail_core::jsonl;
use lail_core::synthetic::{generate, SyntheticCorpus, SyntheticSpec};
use serde_json::{json, Value};

pub fn lail(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lail"))
        .args(args)
        .output()
        .expect("spawn lail")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = lail(args);
    assert!(
        out.status.success(),
        "lail {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes the corpus under `dir/<name>/` and returns that directory.
pub fn write_corpus(dir: &Path, spec: &SyntheticSpec) -> (PathBuf, SyntheticCorpus) {
    let corpus = generate(spec);
    let data = dir.join(&spec.name);
    std::fs::create_dir_all(&data).unwrap();
    corpus.dataset.export(&data).unwrap();
    (data, corpus)
}

/// Config for `data` with `extra` merged over the top level.
pub fn write_config(dir: &Path, data: &Path, name: &str, extra: Value) -> PathBuf {
    let mut cfg = json!({
        "seed": 7,
        "output_dir": "out",
        "dataset": {
            "name": name,
            "train": data.join("train.jsonl"),
            "test": data.join("test.jsonl"),
        },
        "eval": {"ks": [1], "generation": {"n_samples": 1}},
    });
    merge(&mut cfg, extra);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn merge(base: &mut Value, extra: Value) {
    match (base, extra) {
        (Value::Object(b), Value::Object(e)) => {
            for (k, v) in e {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, e) => *b = e,
    }
}

/// Writes `verdicts/<stem>.jsonl` for every sample file, passing a sample
/// exactly when its program equals the test's ground-truth code.
pub fn exact_match_verdicts(out_dir: &Path, tests: &[Example]) -> usize {
    let truth: HashMap<&str, &str> = tests.iter().map(|t| (t.id.as_str(), t.code.as_str())).collect();
    let vdir = out_dir.join("verdicts");
    std::fs::create_dir_all(&vdir).unwrap();
    let mut files = 0;
    for entry in std::fs::read_dir(out_dir.join("samples")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "jsonl") {
            continue;
        }
        let records: Vec<SampleRecord> = jsonl::read_jsonl(&path).unwrap();
        let verdicts: Vec<Verdict> = records
            .iter()
            .map(|r| Verdict {
                test_id: r.test_id.clone(),
                sample_index: r.sample_index,
                pass: truth[r.test_id.as_str()] == r.program,
                reason: "exact match".into(),
            })
            .collect();
        jsonl::write_jsonl(&vdir.join(path.file_name().unwrap()), &verdicts).unwrap();
        files += 1;
    }
    files
}

/// Runs label through eval, supplying exact-match verdicts when eval asks for them.
pub fn full_pipeline(config: &Path, out_dir: &Path, tests: &[Example]) {
    let c = config.to_str().unwrap();
    for stage in ["validate", "label", "train", "index", "retrieve"] {
        run_ok(&[stage, "--config", c]);
    }
    let first = lail(&["eval", "--config", c]);
    assert_eq!(
        first.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert!(exact_match_verdicts(out_dir, tests) > 0);
    run_ok(&["eval", "--config", c]);
}

/// Every regular file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn read_report(out_dir: &Path, strategy: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out_dir.join("reports").join(format!("{strategy}.json"))).unwrap())
        .unwrap()
}

pub fn pass_at(report: &Value, k: usize) -> f64 {
    report["pass_at"][k.to_string()].as_f64().unwrap()
}
