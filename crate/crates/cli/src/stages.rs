//! One function per subcommand. Every stage writes its outputs under the
//! configured output directory together with a `<output>.meta.json` sidecar
//! holding the stage's config hash and the tool version.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lail_core::corpus::{load_dataset, Dataset, Example};
use lail_core::evaluation::{
    compare_report, obtain_verdicts, run_generation, EvalReport, SampleRecord, VerdictMatrix, VerdictProvider,
};
use lail_core::gateway::{Embedder, Generator, ProviderConfig, Scorer};
use lail_core::jsonl;
use lail_core::labeling::{build_labeled_dataset, read_labels, Estimator, ScorerKind};
use lail_core::rng::substream;
use lail_core::selection::{build_embedding_index, EmbeddingIndex, Selection, Selector, Shot, Strategy};
use lail_core::training::{cache_path, train_retriever, Provenance, RetrieverCheckpoint};
use lail_core::TOOL_VERSION;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::CliError;

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub checkpoint: Option<PathBuf>,
    pub force: bool,
    pub allow_execution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    stage: String,
    config_hash: String,
    tool_version: String,
    complete: bool,
}

enum StageState {
    Cached,
    Resume,
    Fresh,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_value(v: &Value) -> String {
    hex(&Sha256::digest(v.to_string().as_bytes())[..16])
}

fn digest_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|_| CliError::Missing(path.display().to_string()))?;
    Ok(hex(&Sha256::digest(&bytes)[..16]))
}

fn meta_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    output.with_file_name(name)
}

fn read_meta(output: &Path) -> Option<Meta> {
    jsonl::read_json(&meta_path(output)).ok()
}

fn write_meta(output: &Path, stage: &str, hash: &str, complete: bool) -> Result<(), CliError> {
    let meta = Meta {
        stage: stage.into(),
        config_hash: hash.into(),
        tool_version: TOOL_VERSION.into(),
        complete,
    };
    Ok(jsonl::write_json(&meta_path(output), &meta)?)
}

fn remove_path(path: &Path) -> Result<(), CliError> {
    let r = if path.is_dir() {
        std::fs::remove_dir_all(path)
    } else if path.exists() {
        std::fs::remove_file(path)
    } else {
        Ok(())
    };
    r.map_err(|e| CliError::Failed(format!("removing stale {}: {e}", path.display())))
}

/// Decides whether `output` is already up to date, resumable, or stale.
/// Stale outputs are deleted.
fn stage_state(output: &Path, hash: &str) -> Result<StageState, CliError> {
    match read_meta(output) {
        Some(m) if m.config_hash == hash && m.complete && output.exists() => Ok(StageState::Cached),
        Some(m) if m.config_hash == hash => Ok(StageState::Resume),
        Some(_) => {
            remove_path(output)?;
            Ok(StageState::Fresh)
        }
        // No record of what produced the output, so it cannot be trusted.
        None => {
            remove_path(output)?;
            Ok(StageState::Fresh)
        }
    }
}

fn cached_notice(stage: &str, hash: &str) {
    println!("{stage}: cached ({hash})");
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("creating {}: {e}", dir.display())))
}

fn provider_label(p: &ProviderConfig) -> String {
    let kind = serde_json::to_value(p.kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string));
    match (&p.model_name, kind) {
        (Some(m), Some(k)) => format!("{k}:{m}"),
        (None, Some(k)) => k,
        _ => "unknown".into(),
    }
}

struct Loaded {
    dataset: Dataset,
    train_digest: String,
    test_digest: Option<String>,
}

impl Ctx {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn embedding_cache(&self, embedder: &dyn Embedder) -> Result<PathBuf, CliError> {
        let dir = self.out("cache");
        ensure_dir(&dir)?;
        Ok(cache_path(&dir, &embedder.fingerprint()))
    }

    fn load(&self) -> Result<Loaded, CliError> {
        let d = &self.cfg.dataset;
        let dataset = load_dataset(&d.name, &d.language_tag, &d.splits)?;
        let train_digest = digest_file(d.splits.train.as_deref().expect("load_dataset checked train"))?;
        let test_digest = d.splits.test.as_deref().map(digest_file).transpose()?;
        ensure_dir(&self.cfg.output_dir)?;
        Ok(Loaded {
            dataset,
            train_digest,
            test_digest,
        })
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out("checkpoint.json"))
    }

    fn load_checkpoint(&self) -> Result<(RetrieverCheckpoint, String), CliError> {
        let path = self.checkpoint_path();
        if !path.exists() {
            return Err(CliError::Missing(format!("checkpoint {}", path.display())));
        }
        let digest = digest_file(&path)?;
        Ok((RetrieverCheckpoint::load(&path)?, digest))
    }

    fn require_complete(&self, output: &Path, stage: &str) -> Result<String, CliError> {
        match read_meta(output) {
            Some(m) if m.complete && output.exists() => digest_file(output),
            _ => Err(CliError::Missing(format!(
                "{} (run `lail {stage}` first)",
                output.display()
            ))),
        }
    }

    fn embedder(&self) -> Result<Arc<dyn Embedder>, CliError> {
        Ok(self.cfg.providers.embedder.build_embedder()?)
    }

    fn scorer(&self) -> Result<Arc<dyn Scorer>, CliError> {
        Ok(self.cfg.providers.scorer.build_scorer()?)
    }

    fn generator(&self, pool: &[Example]) -> Result<Arc<dyn Generator>, CliError> {
        Ok(self.cfg.providers.generator.build_generator(pool)?)
    }
}

pub fn validate(ctx: &Ctx) -> Result<(), CliError> {
    let loaded = ctx.load()?;
    let d = &loaded.dataset;
    let summary = json!({
        "dataset": d.name,
        "language_tag": d.language_tag,
        "train": d.train.len(),
        "dev": d.dev.len(),
        "test": d.test.len(),
        "train_digest": loaded.train_digest,
        "test_digest": loaded.test_digest,
        "tool_version": TOOL_VERSION,
    });
    jsonl::write_json(&ctx.out("validation.json"), &summary)?;
    println!(
        "validate: {} ok (train {}, dev {}, test {})",
        d.name,
        d.train.len(),
        d.dev.len(),
        d.test.len()
    );
    Ok(())
}

pub fn label(ctx: &Ctx) -> Result<(), CliError> {
    let loaded = ctx.load()?;
    let pool = loaded.dataset.pool();
    let cfg = &ctx.cfg.label;
    let provider = match cfg.scorer_kind {
        ScorerKind::Probability => &ctx.cfg.providers.scorer,
        ScorerKind::MatchBleu => &ctx.cfg.providers.generator,
    };
    let hash = hash_value(&json!({
        "stage": "label",
        "tool_version": TOOL_VERSION,
        "label": cfg,
        "provider": provider,
        "train": loaded.train_digest,
    }));
    let out = ctx.out("labels.jsonl");
    if let StageState::Cached = stage_state(&out, &hash)? {
        cached_notice("label", &hash);
        return Ok(());
    }
    write_meta(&out, "label", &hash, false)?;

    let (scorer, generator);
    let estimator = match cfg.scorer_kind {
        ScorerKind::Probability => {
            scorer = ctx.scorer()?;
            Estimator::Probability(scorer.as_ref())
        }
        ScorerKind::MatchBleu => {
            generator = ctx.generator(pool)?;
            Estimator::MatchBleu(generator.as_ref())
        }
    };
    let outcome = build_labeled_dataset(pool, cfg, estimator, Some(&out))?;
    if !outcome.dropped.is_empty() && outcome.provider_failures > 0 {
        return Err(CliError::Provider(format!(
            "{} anchors dropped after {} failed provider calls; rerun to resume",
            outcome.dropped.len(),
            outcome.provider_failures
        )));
    }
    write_meta(&out, "label", &hash, true)?;
    println!(
        "label: {} anchors labeled ({} resumed, {} dropped) -> {}",
        outcome.labels.len(),
        outcome.resumed,
        outcome.dropped.len(),
        out.display()
    );
    Ok(())
}

pub fn train(ctx: &Ctx) -> Result<(), CliError> {
    let loaded = ctx.load()?;
    let labels_path = ctx.out("labels.jsonl");
    let labels_digest = ctx.require_complete(&labels_path, "label")?;
    let cfg = &ctx.cfg.train;
    let hash = hash_value(&json!({
        "stage": "train",
        "tool_version": TOOL_VERSION,
        "train": cfg,
        "embedder": ctx.cfg.providers.embedder,
        "labels": labels_digest,
        "pool": loaded.train_digest,
    }));
    let out = ctx.out("checkpoint.json");
    if let StageState::Cached = stage_state(&out, &hash)? {
        cached_notice("train", &hash);
        return Ok(());
    }
    write_meta(&out, "train", &hash, false)?;

    let labels = read_labels(&labels_path)?;
    let embedder = ctx.embedder()?;
    let provenance = Provenance {
        source_dataset: loaded.dataset.name.clone(),
        source_scorer: match ctx.cfg.label.scorer_kind {
            ScorerKind::Probability => format!("probability:{}", provider_label(&ctx.cfg.providers.scorer)),
            ScorerKind::MatchBleu => format!("match_bleu:{}", provider_label(&ctx.cfg.providers.generator)),
        },
    };
    let cache = ctx.embedding_cache(embedder.as_ref())?;
    let ck = train_retriever(
        &labels,
        loaded.dataset.pool(),
        embedder.as_ref(),
        cfg,
        &provenance,
        Some(&cache),
    )?;
    ck.save(&out, Some(&hash))?;
    write_meta(&out, "train", &hash, true)?;
    println!(
        "train: {} anchors, {} epochs, loss {:.4} -> {:.4} -> {}",
        labels.len(),
        ck.epoch_losses.len(),
        ck.epoch_losses.first().copied().unwrap_or(f64::NAN),
        ck.epoch_losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct IndexRow {
    id: String,
    vector: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    checkpoint_fingerprint: String,
    config_hash: String,
    tool_version: String,
    rows: Vec<IndexRow>,
}

fn read_index(path: &Path) -> Result<EmbeddingIndex, CliError> {
    let file: IndexFile = jsonl::read_json(path)?;
    let (ids, vectors) = file.rows.into_iter().map(|r| (r.id, r.vector)).unzip();
    Ok(EmbeddingIndex {
        ids,
        vectors,
        checkpoint_fingerprint: file.checkpoint_fingerprint,
    })
}

pub fn index(ctx: &Ctx) -> Result<(), CliError> {
    let loaded = ctx.load()?;
    let (ck, ck_digest) = ctx.load_checkpoint()?;
    let hash = hash_value(&json!({
        "stage": "index",
        "tool_version": TOOL_VERSION,
        "checkpoint": ck_digest,
        "embedder": ctx.cfg.providers.embedder,
        "pool": loaded.train_digest,
        "force": ctx.force,
    }));
    let out = ctx.out("index.json");
    if let StageState::Cached = stage_state(&out, &hash)? {
        cached_notice("index", &hash);
        return Ok(());
    }
    let embedder = ctx.embedder()?;
    let cache = ctx.embedding_cache(embedder.as_ref())?;
    let idx = build_embedding_index(loaded.dataset.pool(), embedder.as_ref(), &ck, ctx.force, Some(&cache))?;
    let zero = idx.zero_rows().len();
    if zero > 0 {
        tracing::warn!(rows = zero, "index rows with vanishing projection");
    }
    let file = IndexFile {
        checkpoint_fingerprint: idx.checkpoint_fingerprint.clone(),
        config_hash: hash.clone(),
        tool_version: TOOL_VERSION.into(),
        rows: idx
            .ids
            .into_iter()
            .zip(idx.vectors)
            .map(|(id, vector)| IndexRow { id, vector })
            .collect(),
    };
    jsonl::write_json(&out, &file)?;
    write_meta(&out, "index", &hash, true)?;
    println!("index: {} rows -> {}", file.rows.len(), out.display());
    Ok(())
}

pub fn retrieve(ctx: &Ctx) -> Result<(), CliError> {
    let loaded = ctx.load()?;
    let tests = &loaded.dataset.test;
    if tests.is_empty() {
        return Err(CliError::Config(format!(
            "dataset {} has no test split",
            loaded.dataset.name
        )));
    }
    let pool = loaded.dataset.pool();
    let sel = &ctx.cfg.selection;
    let trained = sel.strategies.contains(&Strategy::Trained);
    let (index_digest, ck) = if trained {
        let digest = ctx.require_complete(&ctx.out("index.json"), "index")?;
        (Some(digest), Some(ctx.load_checkpoint()?))
    } else {
        (None, None)
    };
    let hash = hash_value(&json!({
        "stage": "retrieve",
        "tool_version": TOOL_VERSION,
        "seed": ctx.cfg.seed,
        "r": sel.r,
        "strategies": sel.strategies,
        "pool": loaded.train_digest,
        "tests": loaded.test_digest,
        "embedder": ctx.cfg.providers.embedder,
        "scorer": ctx.cfg.providers.scorer,
        "index": index_digest,
        "checkpoint": ck.as_ref().map(|c| &c.1),
        "force": ctx.force,
    }));
    let out = ctx.out("selections.jsonl");
    if let StageState::Cached = stage_state(&out, &hash)? {
        cached_notice("retrieve", &hash);
        return Ok(());
    }

    let embedder = ctx.embedder()?;
    let mut selections = Vec::new();
    for &strategy in &sel.strategies {
        let selector = match strategy {
            Strategy::Trained => {
                let (ck, _) = ck.as_ref().expect("loaded above");
                ck.check_fingerprint(&embedder.fingerprint(), ctx.force)?;
                let index = read_index(&ctx.out("index.json"))?;
                Selector::trained(index, ck, embedder.as_ref())
            }
            Strategy::Random => Selector::random(pool, ctx.cfg.seed),
            Strategy::Bm25 => Selector::bm25(pool)?,
            Strategy::EmbedTopk => {
                let cache = ctx.embedding_cache(embedder.as_ref())?;
                Selector::embed_topk(pool, embedder.as_ref(), Some(&cache))?
            }
            Strategy::Uncertainty => Selector::uncertainty(pool, ctx.scorer()?.as_ref())?,
        };
        let shots = selector.select_all(tests, sel.r)?;
        selections.extend(tests.iter().zip(shots).map(|(t, shots)| Selection {
            test_id: t.id.clone(),
            strategy,
            shots,
        }));
    }
    jsonl::write_jsonl(&out, &selections)?;
    write_meta(&out, "retrieve", &hash, true)?;
    println!(
        "retrieve: {} strategies x {} tests, r = {} -> {}",
        sel.strategies.len(),
        tests.len(),
        sel.r,
        out.display()
    );
    Ok(())
}

fn verdict_file(ctx: &Ctx, template: &Path, strategy: &str, run: usize) -> PathBuf {
    let text = template
        .to_string_lossy()
        .replace("{strategy}", strategy)
        .replace("{run}", &run.to_string());
    ctx.cfg.output_dir.join(text)
}

fn run_seed(seed: u64, run: usize) -> u64 {
    substream(seed, &["generation", &run.to_string()]).next_u64()
}

pub fn eval(ctx: &Ctx) -> Result<(), CliError> {
    let loaded = ctx.load()?;
    let tests = &loaded.dataset.test;
    let pool = loaded.dataset.pool();
    let selections_path = ctx.out("selections.jsonl");
    let selections_digest = ctx.require_complete(&selections_path, "retrieve")?;
    let selections: Vec<Selection> = jsonl::read_jsonl(&selections_path)?;
    let ecfg = &ctx.cfg.eval;
    let order = ctx.cfg.selection.shot_order;

    let mut strategies: Vec<Strategy> = Vec::new();
    let mut shots_by: HashMap<(Strategy, &str), &Vec<Shot>> = HashMap::new();
    for s in &selections {
        if !strategies.contains(&s.strategy) {
            strategies.push(s.strategy);
        }
        shots_by.insert((s.strategy, s.test_id.as_str()), &s.shots);
    }

    let generation_hash = hash_value(&json!({
        "stage": "generate",
        "tool_version": TOOL_VERSION,
        "seed": ctx.cfg.seed,
        "selections": selections_digest,
        "generator": ctx.cfg.providers.generator,
        "generation": ecfg.generation,
        "runs": ecfg.runs,
        "shot_order": order,
        "pool": loaded.train_digest,
        "tests": loaded.test_digest,
    }));
    let verdict_inputs: Vec<Option<String>> = match &ecfg.verdicts {
        VerdictProvider::ExternalFile { path } => strategies
            .iter()
            .flat_map(|s| (0..ecfg.runs).map(move |r| (s, r)))
            .map(|(s, r)| digest_file(&verdict_file(ctx, path, s.as_str(), r)).ok())
            .collect(),
        VerdictProvider::SubprocessRunner { .. } => Vec::new(),
    };
    let hash = hash_value(&json!({
        "stage": "eval",
        "generation": generation_hash,
        "verdicts": ecfg.verdicts,
        "verdict_files": verdict_inputs,
        "ks": ecfg.ks,
        "baseline": ecfg.baseline,
    }));
    let comparison_path = ctx.out("comparison.json");
    if let StageState::Cached = stage_state(&comparison_path, &hash)? {
        cached_notice("eval", &hash);
        return Ok(());
    }
    write_meta(&comparison_path, "eval", &hash, false)?;

    // Generation, resumable on its own hash so new verdicts do not discard samples.
    let samples_dir = ctx.out("samples");
    let state = stage_state(&samples_dir, &generation_hash)?;
    ensure_dir(&samples_dir)?;
    let sample_file = |s: Strategy, r: usize| samples_dir.join(format!("{s}-run{r}.jsonl"));
    let mut records: BTreeMap<(Strategy, usize), Vec<SampleRecord>> = BTreeMap::new();
    let mut missing_generation: BTreeMap<(Strategy, usize), Vec<String>> = BTreeMap::new();
    if let StageState::Cached = state {
        cached_notice("generate", &generation_hash);
        for &s in &strategies {
            for r in 0..ecfg.runs {
                let recs: Vec<SampleRecord> = jsonl::read_jsonl(&sample_file(s, r))?;
                let have: std::collections::BTreeSet<&str> = recs.iter().map(|x| x.test_id.as_str()).collect();
                let gaps = tests
                    .iter()
                    .filter(|t| !have.contains(t.id.as_str()))
                    .map(|t| t.id.clone())
                    .collect();
                missing_generation.insert((s, r), gaps);
                records.insert((s, r), recs);
            }
        }
    } else {
        write_meta(&samples_dir, "generate", &generation_hash, false)?;
        let generator = ctx.generator(pool)?;
        let mut provider_failures = 0usize;
        for &s in &strategies {
            let shots: Vec<Vec<Shot>> = tests
                .iter()
                .map(|t| {
                    shots_by
                        .get(&(s, t.id.as_str()))
                        .map(|v| (*v).clone())
                        .ok_or_else(|| CliError::Missing(format!("no {s} selection for test {}", t.id)))
                })
                .collect::<Result<_, _>>()?;
            for r in 0..ecfg.runs {
                let mut params = ecfg.generation.clone();
                params.seed = Some(run_seed(ctx.cfg.seed, r));
                let outcome = run_generation(
                    tests,
                    &shots,
                    s.as_str(),
                    pool,
                    order,
                    generator.as_ref(),
                    &params,
                    Some(&sample_file(s, r)),
                )?;
                provider_failures += outcome.failures.iter().filter(|f| f.provider_failure).count();
                missing_generation.insert((s, r), outcome.failures.iter().map(|f| f.test_id.clone()).collect());
                records.insert((s, r), outcome.records);
            }
        }
        if provider_failures > 0 {
            return Err(CliError::Provider(format!(
                "{provider_failures} generation requests failed; rerun to resume"
            )));
        }
        write_meta(&samples_dir, "generate", &generation_hash, true)?;
    }

    // Verdicts.
    let n = ecfg.generation.n_samples;
    let mut matrices: BTreeMap<Strategy, Vec<VerdictMatrix>> = BTreeMap::new();
    let mut absent = Vec::new();
    for (&(s, r), recs) in &records {
        let provider = match &ecfg.verdicts {
            VerdictProvider::ExternalFile { path } => {
                let file = verdict_file(ctx, path, s.as_str(), r);
                if !file.exists() {
                    absent.push(file.display().to_string());
                    continue;
                }
                VerdictProvider::ExternalFile { path: file }
            }
            other => other.clone(),
        };
        let (mut matrix, verdicts) = obtain_verdicts(recs, tests, &provider, ctx.allow_execution)?;
        if let VerdictProvider::SubprocessRunner { .. } = provider {
            let dir = ctx.out("verdicts");
            ensure_dir(&dir)?;
            jsonl::write_jsonl(&dir.join(format!("{s}-run{r}.jsonl")), &verdicts)?;
        }
        for id in &missing_generation[&(s, r)] {
            tracing::warn!(test = %id, strategy = %s, "no samples; counted as unsolved");
            matrix.rows.insert(id.clone(), vec![false; n]);
        }
        matrices.entry(s).or_default().push(matrix);
    }
    if !absent.is_empty() {
        return Err(CliError::Missing(format!(
            "verdict files {}; samples are in {}",
            absent.join(", "),
            samples_dir.display()
        )));
    }

    let snapshot = json!({
        "config_hash": hash,
        "tool_version": TOOL_VERSION,
        "seed": ctx.cfg.seed,
        "dataset": loaded.dataset.name,
        "tests": loaded.test_digest,
        "generator": ctx.cfg.providers.generator,
        "generation": ecfg.generation,
        "r": ctx.cfg.selection.r,
        "shot_order": order,
        "runs": ecfg.runs,
    });
    let reports_dir = ctx.out("reports");
    ensure_dir(&reports_dir)?;
    let mut reports = Vec::new();
    for &s in &strategies {
        let report = EvalReport::from_runs(s.as_str(), &matrices[&s], &ecfg.ks, snapshot.clone())?;
        jsonl::write_json(&reports_dir.join(format!("{s}.json")), &report)?;
        reports.push(report);
    }
    let comparison = compare_report(&reports, ecfg.baseline.as_deref())?;
    jsonl::write_json(&comparison_path, &comparison)?;
    write_meta(&comparison_path, "eval", &hash, true)?;
    print!("{}", comparison.table);
    if comparison.test_set_mismatch {
        println!("warning: reports cover different test sets");
    }
    println!("eval: {} reports -> {}", reports.len(), reports_dir.display());
    Ok(())
}

pub fn report(ctx: &Ctx) -> Result<(), CliError> {
    let dir = ctx.out("reports");
    let entries =
        std::fs::read_dir(&dir).map_err(|_| CliError::Missing(format!("{} (run `lail eval` first)", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".meta.json"))
        .collect();
    paths.sort();
    let mut reports: Vec<EvalReport> = paths
        .iter()
        .map(|p| jsonl::read_json(p).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    if reports.is_empty() {
        return Err(CliError::Missing(format!("no reports in {}", dir.display())));
    }
    let rank = |name: &str| {
        ctx.cfg
            .selection
            .strategies
            .iter()
            .position(|s| s.as_str() == name)
            .unwrap_or(usize::MAX)
    };
    reports.sort_by(|a, b| {
        rank(&a.strategy)
            .cmp(&rank(&b.strategy))
            .then_with(|| a.strategy.cmp(&b.strategy))
    });
    let comparison = compare_report(&reports, ctx.cfg.eval.baseline.as_deref())?;
    let out = ctx.out("comparison.json");
    jsonl::write_json(&out, &comparison)?;
    let hash = hash_value(&serde_json::to_value(&reports).map_err(|e| CliError::Failed(e.to_string()))?);
    write_meta(&out, "report", &hash, true)?;
    print!("{}", comparison.table);
    if comparison.test_set_mismatch {
        println!("warning: reports cover different test sets");
    }
    Ok(())
}

/// Indexes, retrieves and evaluates with a checkpoint trained elsewhere,
/// writing into `<output_dir>/transfer/<dataset>`.
pub fn transfer_eval(ctx: &mut Ctx) -> Result<(), CliError> {
    if ctx.checkpoint.is_none() {
        return Err(CliError::Config("transfer-eval requires --checkpoint".into()));
    }
    let name = ctx.cfg.dataset.name.clone();
    ctx.cfg.output_dir = ctx.cfg.output_dir.join("transfer").join(&name);
    if !ctx.cfg.selection.strategies.contains(&Strategy::Trained) {
        ctx.cfg.selection.strategies.insert(0, Strategy::Trained);
    }
    index(ctx)?;
    retrieve(ctx)?;
    eval(ctx)
}
