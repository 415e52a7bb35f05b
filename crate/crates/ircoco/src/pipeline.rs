//! Pipeline stages. Each stage reads the artifacts of earlier stages, writes
//! its own into a directory, and records a stamp keyed by everything it
//! depends on; rerunning a stage whose stamp matches does nothing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ircoco_core::corpus::{
    build_vocab, corpus_stats, normalize_literals, split_example, tokenize_with, chunk_lines, CompletionExample,
    LexOptions, LiteralTable, StatsReport, Vocab,
};
use ircoco_core::critic::{build_evaluator_dataset, encode_evaluator, train_critic, EvaluatorExample};
use ircoco_core::drl::{train_ircoco, AlignConfig, AlignData};
use ircoco_core::eval::{check_disjoint, complete_all};
use ircoco_core::metrics::MetricAccumulator;
use ircoco_core::lm::{DecoderLM, HeadKind};
use ircoco_core::metrics::MetricReport;
use ircoco_core::rng;
use ircoco_core::sft::{encode_all, train_sft, EncodedExample};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{hash_bytes, hash_parts, CorpusConfig, ExperimentConfig};
use crate::error::{Error, Result};
use crate::jsonl;

/// A complete tokenized code fragment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub tokens: Vec<String>,
}

pub const TRAIN: &str = "train.jsonl";
pub const VALID: &str = "valid.jsonl";
pub const TEST: &str = "test.jsonl";
pub const SAMPLES_TRAIN: &str = "samples_train.jsonl";
pub const SAMPLES_VALID: &str = "samples_valid.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const LITERALS: &str = "literals.json";
pub const STATS: &str = "stats.json";
pub const MANIFEST: &str = "manifest.json";
pub const ACTOR: &str = "actor.ckpt";
pub const CRITIC: &str = "critic.ckpt";
pub const EVAL_TRAIN: &str = "evaluator_train.jsonl";
pub const EVAL_VALID: &str = "evaluator_valid.jsonl";
pub const START: &str = "start.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus_hash: String,
    pub files: usize,
    pub samples: usize,
    pub skipped: usize,
    pub unterminated_strings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub train: StatsReport,
    pub valid: StatsReport,
    pub test: StatsReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

fn stamp_path(dir: &Path, stage: &str) -> PathBuf {
    dir.join(format!("{stage}.stamp.json"))
}

fn up_to_date(dir: &Path, stage: &str, key: &str, outputs: &[&str]) -> bool {
    let Ok(stamp) = jsonl::read_json::<Stamp>(&stamp_path(dir, stage)) else {
        return false;
    };
    stamp.key == key && outputs.iter().all(|o| dir.join(o).exists())
}

fn finish_stage(dir: &Path, stage: &str, key: &str, started: Instant) -> Result<Outcome> {
    jsonl::write_json(
        &dir.join(format!("{stage}.timing.json")),
        &serde_json::json!({ "stage": stage, "seconds": started.elapsed().as_secs_f64() }),
    )?;
    jsonl::write_json(
        &stamp_path(dir, stage),
        &Stamp {
            stage: stage.into(),
            key: key.into(),
        },
    )?;
    Ok(Outcome::Ran)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hash_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

// ---------------------------------------------------------------- ingest

/// Source files under `paths` with one of `extensions`, in a stable order,
/// each with the path used in sample ids.
pub fn collect_files(paths: &[PathBuf], extensions: &[String]) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for root in paths {
        if root.is_file() {
            out.push((file_name(root), root.clone()));
            continue;
        }
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            let entry = entry.map_err(|e| Error::format(root, None, e.to_string()))?;
            let p = entry.path();
            let ext_ok = p
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| extensions.iter().any(|x| x == e));
            if entry.file_type().is_file() && ext_ok {
                let rel = p.strip_prefix(root).unwrap_or(p);
                out.push((rel.to_string_lossy().replace('\\', "/"), p.to_path_buf()));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Tokenized samples: every file is cut into chunks of `chunk_lines`
/// non-blank lines.
pub fn ingest(corpus: &CorpusConfig) -> Result<(Vec<Sample>, usize, usize)> {
    let files = collect_files(&corpus.paths, &corpus.extensions)?;
    if files.is_empty() {
        return Err(Error::Config("no source files found in the corpus paths".into()));
    }
    let opts = LexOptions::for_language(&corpus.language);
    let mut samples = Vec::new();
    let mut unterminated = 0;
    for (name, path) in &files {
        let source = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (k, chunk) in chunk_lines(&source, corpus.chunk_lines).iter().enumerate() {
            if chunk.trim().is_empty() {
                continue;
            }
            let lexed = tokenize_with(chunk, opts);
            unterminated += lexed.unterminated_strings;
            samples.push(Sample {
                id: format!("{name}#{k}"),
                tokens: lexed.tokens,
            });
        }
    }
    Ok((samples, files.len(), unterminated))
}

// --------------------------------------------------------------- prepare

/// Ingests, tokenizes, splits into train/valid/test samples, normalizes
/// literals and builds the vocabulary from the training split only, then
/// cuts every sample into a (prefix, 10-token reference) example.
pub fn prepare(corpus: &CorpusConfig, seed: u64, out: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let files = collect_files(&corpus.paths, &corpus.extensions)?;
    let mut key_parts: Vec<Vec<u8>> = vec![serde_json::to_vec(corpus).expect("config"), seed.to_le_bytes().to_vec()];
    for (name, path) in &files {
        key_parts.push(name.as_bytes().to_vec());
        key_parts.push(fs::read(path).map_err(|e| Error::io(path, e))?);
    }
    let key = hash_parts(&key_parts.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let outputs = [TRAIN, VALID, TEST, SAMPLES_TRAIN, SAMPLES_VALID, VOCAB, LITERALS, STATS, MANIFEST];
    if up_to_date(out, "prepare", &key, &outputs) {
        return Ok(Outcome::UpToDate);
    }
    create_dir(out)?;

    let (mut samples, n_files, unterminated) = ingest(corpus)?;
    let mut split_rng = rng::stream(seed, rng::STREAM_SPLIT);
    samples.shuffle(&mut split_rng);
    let n = samples.len();
    let n_test = (n as f64 * corpus.test_fraction).round() as usize;
    let n_valid = (n as f64 * corpus.valid_fraction).round() as usize;
    let mut train = samples.split_off(n_test + n_valid);
    let mut valid = samples.split_off(n_test);
    let mut test = samples;

    let table = LiteralTable::from_training(
        train.iter().map(|s| s.tokens.as_slice()),
        corpus.top_strings,
        corpus.top_numbers,
    );
    for s in train.iter_mut().chain(valid.iter_mut()).chain(test.iter_mut()) {
        s.tokens = normalize_literals(&s.tokens, &table);
    }
    let vocab = build_vocab(
        train.iter().map(|s| s.tokens.as_slice()),
        corpus.min_freq,
        corpus.vocab_cap,
    )?;

    let mut skipped = 0;
    let mut cut = |set: &[Sample]| -> Vec<CompletionExample> {
        set.iter()
            .filter_map(|s| {
                let ex = split_example(&s.id, &s.tokens, &mut split_rng);
                skipped += usize::from(ex.is_none());
                ex
            })
            .collect()
    };
    let (train_ex, valid_ex, test_ex) = (cut(&train), cut(&valid), cut(&test));
    if train_ex.is_empty() || valid_ex.is_empty() || test_ex.is_empty() {
        return Err(Error::Config("corpus too small: a split has no usable examples".into()));
    }
    let keep_long = |v: Vec<Sample>| -> Vec<Sample> {
        v.into_iter()
            .filter(|s| s.tokens.len() >= ircoco_core::corpus::MIN_SAMPLE_TOKENS)
            .collect()
    };
    // Critic data draws fresh splits, so only samples long enough to split are kept.
    train = keep_long(train);
    valid = keep_long(valid);

    jsonl::write(&out.join(TRAIN), &train_ex)?;
    jsonl::write(&out.join(VALID), &valid_ex)?;
    jsonl::write(&out.join(TEST), &test_ex)?;
    jsonl::write(&out.join(SAMPLES_TRAIN), &train)?;
    jsonl::write(&out.join(SAMPLES_VALID), &valid)?;
    jsonl::write_json(&out.join(VOCAB), &vocab)?;
    jsonl::write_json(&out.join(LITERALS), &table)?;
    let stats = SplitStats {
        train: corpus_stats(&train_ex, 0)?,
        valid: corpus_stats(&valid_ex, 0)?,
        test: corpus_stats(&test_ex, 0)?,
    };
    jsonl::write_json(&out.join(STATS), &stats)?;
    let mut hashed = Vec::new();
    for f in [TRAIN, VALID, TEST, SAMPLES_TRAIN, SAMPLES_VALID, VOCAB] {
        hashed.push(fs::read(out.join(f)).map_err(|e| Error::io(&out.join(f), e))?);
    }
    let manifest = Manifest {
        corpus_hash: hash_parts(&hashed.iter().map(Vec::as_slice).collect::<Vec<_>>()),
        files: n_files,
        samples: n,
        skipped,
        unterminated_strings: unterminated,
    };
    jsonl::write_json(&out.join(MANIFEST), &manifest)?;
    finish_stage(out, "prepare", &key, started)
}

/// Everything `prepare` wrote.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocab,
    pub train: Vec<CompletionExample>,
    pub valid: Vec<CompletionExample>,
    pub test: Vec<CompletionExample>,
    pub manifest: Manifest,
}

pub fn load_prepared(dir: &Path) -> Result<Prepared> {
    let manifest: Manifest = jsonl::read_json(&dir.join(MANIFEST))?;
    Ok(Prepared {
        vocab: jsonl::read_json(&dir.join(VOCAB))?,
        train: jsonl::read(&dir.join(TRAIN))?,
        valid: jsonl::read(&dir.join(VALID))?,
        test: jsonl::read(&dir.join(TEST))?,
        manifest,
    })
}

// ------------------------------------------------------------------- sft

/// Trains the actor from scratch: an optional whole-sequence language-model
/// pass, then supervised training on the references.
pub fn run_sft(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let prepared = load_prepared(data)?;
    let key = hash_parts(&[
        b"sft",
        prepared.manifest.corpus_hash.as_bytes(),
        &serde_json::to_vec(&(&cfg.actor, &cfg.pretrain, &cfg.sft)).expect("config"),
    ]);
    if up_to_date(out, "sft", &key, &[ACTOR]) {
        return Ok(Outcome::UpToDate);
    }
    create_dir(out)?;
    let mcfg = cfg.actor.with_vocab(prepared.vocab.len(), HeadKind::Vocabulary);
    let mut actor = DecoderLM::new(mcfg, &mut rng::stream(cfg.seed, rng::STREAM_INIT))?;
    let train = encode_all(&prepared.vocab, &prepared.train, mcfg.max_len)?;
    let valid = encode_all(&prepared.vocab, &prepared.valid, mcfg.max_len)?;
    if cfg.pretrain.epochs > 0 {
        let pre = ircoco_core::sft::SftConfig {
            full_sequence: true,
            ..cfg.pretrain
        };
        let log = train_sft(&mut actor, &train, &valid, &pre)?;
        jsonl::write(&out.join("pretrain_log.jsonl"), &log)?;
    }
    let log = train_sft(&mut actor, &train, &valid, &cfg.sft)?;
    jsonl::write(&out.join("sft_log.jsonl"), &log)?;
    checkpoint::save(&out.join(ACTOR), &actor)?;
    finish_stage(out, "sft", &key, started)
}

// ---------------------------------------------------------------- critic

/// Labels fresh random splits of complete training (and validation)
/// samples with the metric of the actor's greedy completion.
pub fn run_build_critic_data(cfg: &ExperimentConfig, data: &Path, actor_path: &Path, out: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let manifest: Manifest = jsonl::read_json(&data.join(MANIFEST))?;
    let actor_hash = file_hash(actor_path)?;
    let key = hash_parts(&[
        b"critic-data",
        manifest.corpus_hash.as_bytes(),
        actor_hash.as_bytes(),
        &serde_json::to_vec(&(&cfg.critic_data, cfg.seed)).expect("config"),
    ]);
    if up_to_date(out, "critic-data", &key, &[EVAL_TRAIN, EVAL_VALID]) {
        return Ok(Outcome::UpToDate);
    }
    create_dir(out)?;
    let vocab: Vocab = jsonl::read_json(&data.join(VOCAB))?;
    let actor = checkpoint::load(actor_path, None)?;
    let mut r = rng::stream(cfg.seed, rng::STREAM_DATA);
    for (src, dst) in [(SAMPLES_TRAIN, EVAL_TRAIN), (SAMPLES_VALID, EVAL_VALID)] {
        let samples: Vec<Sample> = jsonl::read(&data.join(src))?;
        let pairs: Vec<(String, Vec<String>)> = samples.into_iter().map(|s| (s.id, s.tokens)).collect();
        let built = build_evaluator_dataset(
            &actor,
            &vocab,
            &pairs,
            cfg.critic_data.metric,
            cfg.critic_data.splits_per_sample,
            &mut r,
        )?;
        jsonl::write(&out.join(dst), &built.examples)?;
    }
    finish_stage(out, "critic-data", &key, started)
}

pub fn run_train_critic(cfg: &ExperimentConfig, data: &Path, critic_data: &Path, out: &Path) -> Result<Outcome> {
    let started = Instant::now();
    let key = hash_parts(&[
        b"critic",
        file_hash(&data.join(VOCAB))?.as_bytes(),
        file_hash(&critic_data.join(EVAL_TRAIN))?.as_bytes(),
        file_hash(&critic_data.join(EVAL_VALID))?.as_bytes(),
        &serde_json::to_vec(&(&cfg.critic_model, &cfg.critic)).expect("config"),
    ]);
    if up_to_date(out, "critic", &key, &[CRITIC]) {
        return Ok(Outcome::UpToDate);
    }
    create_dir(out)?;
    let vocab: Vocab = jsonl::read_json(&data.join(VOCAB))?;
    let mcfg = cfg.critic_model.with_vocab(vocab.len(), HeadKind::Scalar);
    let train_raw: Vec<EvaluatorExample> = jsonl::read(&critic_data.join(EVAL_TRAIN))?;
    let valid_raw: Vec<EvaluatorExample> = jsonl::read(&critic_data.join(EVAL_VALID))?;
    let train = encode_evaluator(&vocab, &train_raw, mcfg.max_len);
    let valid = encode_evaluator(&vocab, &valid_raw, mcfg.max_len);
    let mut critic = DecoderLM::new(mcfg, &mut rng::stream(cfg.seed ^ 0x5eed, rng::STREAM_INIT))?;
    let log = train_critic(&mut critic, &train, &valid, &cfg.critic)?;
    jsonl::write(&out.join("critic_log.jsonl"), &log)?;
    checkpoint::save(&out.join(CRITIC), &critic)?;
    finish_stage(out, "critic", &key, started)
}

// ----------------------------------------------------------------- align

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartRecord {
    /// Hash of the supervised checkpoint alignment started from.
    pub start_checkpoint: String,
}

pub fn alignment_sets(cfg: &ExperimentConfig, prepared: &Prepared, max_len: usize) -> Result<(Vec<EncodedExample>, Vec<EncodedExample>)> {
    let mut train = encode_all(&prepared.vocab, &prepared.train, max_len)?;
    if let Some(n) = cfg.align_train_limit {
        train.truncate(n);
    }
    let mut valid = encode_all(&prepared.vocab, &prepared.valid, max_len)?;
    valid.truncate(cfg.align_eval_limit.unwrap_or(0));
    Ok((train, valid))
}

pub fn run_align(
    cfg: &ExperimentConfig,
    align: &AlignConfig,
    data: &Path,
    actor_path: &Path,
    critic_path: Option<&Path>,
    out: &Path,
) -> Result<Outcome> {
    let started = Instant::now();
    let prepared = load_prepared(data)?;
    if align.loss_mode != ircoco_core::drl::LossMode::SftOnly && align.schedule.needs_critic() && critic_path.is_none() {
        return Err(Error::Config(format!(
            "the {:?} schedule needs a critic checkpoint",
            align.schedule
        )));
    }
    let start = file_hash(actor_path)?;
    let critic_hash = critic_path.map(file_hash).transpose()?.unwrap_or_default();
    let key = hash_parts(&[
        b"align",
        prepared.manifest.corpus_hash.as_bytes(),
        start.as_bytes(),
        critic_hash.as_bytes(),
        &serde_json::to_vec(&(align, cfg.align_train_limit, cfg.align_eval_limit)).expect("config"),
    ]);
    if up_to_date(out, "align", &key, &[ACTOR, START]) {
        return Ok(Outcome::UpToDate);
    }
    create_dir(out)?;
    let mut actor = checkpoint::load(actor_path, None)?;
    let critic = critic_path.map(|p| checkpoint::load(p, None)).transpose()?;
    let (train, valid) = alignment_sets(cfg, &prepared, actor.config().max_len)?;
    let data_in = AlignData {
        vocab: &prepared.vocab,
        train: &train,
        valid: &valid,
    };
    let log = train_ircoco(&mut actor, critic.as_ref(), &data_in, align)?;
    jsonl::write(&out.join("align_log.jsonl"), &log)?;
    checkpoint::save(&out.join(ACTOR), &actor)?;
    jsonl::write_json(&out.join(START), &StartRecord { start_checkpoint: start })?;
    finish_stage(out, "align", &key, started)
}

// -------------------------------------------------------------- evaluate

/// Scores of one method plus what is needed to compare it with others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub method: String,
    pub report: MetricReport,
    pub corpus_hash: String,
    pub config_hash: String,
    pub start_checkpoint: String,
}

/// Hash of the supervised checkpoint a model descends from: recorded next
/// to aligned checkpoints, or the checkpoint itself otherwise.
pub fn start_checkpoint_of(actor_path: &Path) -> Result<String> {
    let rec = actor_path.parent().map(|d| d.join(START));
    match rec.filter(|p| p.exists()) {
        Some(p) => Ok(jsonl::read_json::<StartRecord>(&p)?.start_checkpoint),
        None => file_hash(actor_path),
    }
}

/// Greedy evaluation with the test set split across threads. Completions
/// are gathered in input order, so the report does not depend on the
/// thread count.
pub fn evaluate_parallel(actor: &DecoderLM, vocab: &Vocab, test: &[EncodedExample]) -> Result<MetricReport> {
    if test.is_empty() {
        return Err(ircoco_core::Error::Contract("evaluation on an empty test set".into()).into());
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = test.len().div_ceil(threads);
    let parts: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = test
            .chunks(chunk)
            .map(|part| s.spawn(move || complete_all(actor, vocab, part)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation thread")).collect()
    });
    let mut acc = MetricAccumulator::new();
    let mut examples = test.iter();
    for part in parts {
        for cand in part? {
            let e = examples.next().expect("one completion per example");
            acc.add(cand.as_slice(), e.reference.as_slice());
        }
    }
    Ok(acc.finish())
}

pub fn run_evaluate(
    method: &str,
    config_hash: &str,
    data: &Path,
    actor_path: &Path,
    out_file: &Path,
) -> Result<ResultsBundle> {
    let prepared = load_prepared(data)?;
    let actor = checkpoint::load(actor_path, None)?;
    let test = encode_all(&prepared.vocab, &prepared.test, actor.config().max_len)?;
    check_disjoint(prepared.train.iter().map(|e| e.id.as_str()), &test)?;
    check_disjoint(prepared.valid.iter().map(|e| e.id.as_str()), &test)?;
    let bundle = ResultsBundle {
        method: method.to_string(),
        report: evaluate_parallel(&actor, &prepared.vocab, &test)?,
        corpus_hash: prepared.manifest.corpus_hash,
        config_hash: config_hash.to_string(),
        start_checkpoint: start_checkpoint_of(actor_path)?,
    };
    if let Some(dir) = out_file.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    jsonl::write_json(out_file, &bundle)?;
    Ok(bundle)
}
