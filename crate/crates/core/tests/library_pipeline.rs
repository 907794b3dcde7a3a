use lail_core::evaluation::{compare_report, obtain_verdicts, run_generation, EvalReport, Verdict, VerdictProvider};
use lail_core::gateway::{GenerationParams, HashEmbedder, MockGenerator, MockScorer};
use lail_core::jsonl;
use lail_core::labeling::{build_labeled_dataset, read_labels, Estimator, LabelConfig, ScorerKind};
use lail_core::selection::{build_embedding_index, Selector, ShotOrder};
use lail_core::synthetic::{generate, SyntheticSpec};
use lail_core::training::{train_retriever, Provenance, RetrieverCheckpoint, TrainConfig, TrainError};
use serde_json::json;

fn corpus() -> lail_core::synthetic::SyntheticCorpus {
    generate(&SyntheticSpec {
        name: "lib".into(),
        train: 80,
        test: 20,
        seed: 11,
        ..Default::default()
    })
}

#[test]
fn labels_train_select_generate_report() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let pool = &c.dataset.train;
    let tests = &c.dataset.test;

    let labels_path = dir.path().join("labels.jsonl");
    let scorer = MockScorer::default();
    let labeled = build_labeled_dataset(
        pool,
        &LabelConfig::default(),
        Estimator::Probability(&scorer),
        Some(&labels_path),
    )
    .unwrap();
    assert_eq!(read_labels(&labels_path).unwrap(), labeled.labels);
    assert!(labeled.labels.iter().all(|l| l.check().is_ok()));

    let embedder = HashEmbedder::new(256).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 11,
        ..Default::default()
    };
    let ck = train_retriever(&labeled.labels, pool, &embedder, &cfg, &Provenance::default(), None).unwrap();
    let ck_path = dir.path().join("checkpoint.json");
    ck.save(&ck_path, None).unwrap();
    let loaded = RetrieverCheckpoint::load(&ck_path).unwrap();
    assert_eq!(loaded, ck);

    let index = build_embedding_index(pool, &embedder, &loaded, false, None).unwrap();
    assert_eq!(index.len(), pool.len());
    let generator = MockGenerator::from_prompt_shots();
    let params = GenerationParams {
        n_samples: 2,
        ..Default::default()
    };
    let mut reports = Vec::new();
    for (name, selector) in [
        ("trained", Selector::trained(index, &loaded, &embedder)),
        ("random", Selector::random(pool, 11)),
    ] {
        let shots = selector.select_all(tests, 3).unwrap();
        assert!(shots.iter().all(|s| s.len() == 3));
        let out = run_generation(tests, &shots, name, pool, ShotOrder::Asc, &generator, &params, None).unwrap();
        assert!(out.failures.is_empty());
        assert_eq!(out.records.len(), tests.len() * 2);

        let verdicts: Vec<Verdict> = out
            .records
            .iter()
            .map(|r| Verdict {
                test_id: r.test_id.clone(),
                sample_index: r.sample_index,
                pass: tests.iter().any(|t| t.id == r.test_id && t.code == r.program),
                reason: String::new(),
            })
            .collect();
        let vpath = dir.path().join(format!("{name}.jsonl"));
        jsonl::write_jsonl(&vpath, &verdicts).unwrap();
        let (matrix, _) = obtain_verdicts(
            &out.records,
            tests,
            &VerdictProvider::ExternalFile { path: vpath },
            false,
        )
        .unwrap();
        reports.push(EvalReport::from_runs(name, &[matrix], &[1, 2], json!({})).unwrap());
    }
    let cmp = compare_report(&reports, None).unwrap();
    assert_eq!(cmp.baseline, "random");
    assert!(!cmp.test_set_mismatch);
    assert!(reports.iter().all(EvalReport::is_monotone));
}

#[test]
fn checkpoint_refuses_other_embedder() {
    let c = corpus();
    let pool = &c.dataset.train;
    let labels = build_labeled_dataset(
        pool,
        &LabelConfig::default(),
        Estimator::Probability(&MockScorer::default()),
        None,
    )
    .unwrap()
    .labels;
    let e256 = HashEmbedder::new(256).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..Default::default()
    };
    let ck = train_retriever(&labels, pool, &e256, &cfg, &Provenance::default(), None).unwrap();
    let e128 = HashEmbedder::new(128).unwrap();
    let err = build_embedding_index(pool, &e128, &ck, false, None).unwrap_err();
    assert!(matches!(
        err,
        lail_core::selection::SelectionError::Train(TrainError::FingerprintMismatch { .. })
    ));
}

#[test]
fn match_bleu_labels_use_generator() {
    let c = corpus();
    let pool = &c.dataset.train[..30];
    let generator = MockGenerator::with_pool(pool.to_vec());
    let cfg = LabelConfig {
        t: 10,
        z: 2,
        v: 2,
        scorer_kind: ScorerKind::MatchBleu,
        ..Default::default()
    };
    let out = build_labeled_dataset(pool, &cfg, Estimator::MatchBleu(&generator), None).unwrap();
    assert_eq!(out.labels.len(), pool.len());
    for l in &out.labels {
        assert_eq!(l.scorer_kind, ScorerKind::MatchBleu);
        assert!(l
            .positives
            .iter()
            .chain(&l.negatives)
            .all(|c| (0.0..=1.0).contains(&c.score)));
    }
}
