//! Stage runners behind the command-line tool. Each stage reads its inputs,
//! writes its outputs to `<out>/<stage>/` together with the resolved config
//! and a manifest, and leaves nothing behind when it fails.

mod config;
mod stage;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

pub use config::{
    derive_seed, AnnotationConfig, BalanceConfig, BalanceSetting, ConfigError, DataConfig, EvalConfig, FeatureConfig,
    FilterConfig, IngestConfig, OutputConfig, Overrides, PipelineConfig, RuleConfig, SimulationConfig, SourceSpec,
    SplitConfig, MAX_SEED,
};
pub use stage::{sha256_hex, Manifest, Stage, CONFIG_FILE, MANIFEST_FILE};

use crate::annotation::{
    AgreementReport, AnnotationService, Annotator, ManualClock, MemoryStore, Role, ServiceError, SnapshotStore,
    StoreError, VoteRequest,
};
use crate::balance::{balance_dataset, oversample_duplicates, BalanceError};
use crate::eval::{
    compare as compare_models, evaluate as evaluate_model, stratified_split, Comparison, EvalError, EvalReport,
    SplitIndices,
};
use crate::features::{
    build_vocab, tfidf, to_sequences, train_embeddings, FeatureError, SequenceBatch, SparseRow, TfidfMatrix, Vocabulary,
};
use crate::ingest::{
    consolidate_with_stats, fetch_all, keyword_filter, language_filter_with, AdapterError, EthiopicScriptDetector,
    FileAdapter, KeywordLexicon, LexiconError, PoolRecord, RawPost, RetryPolicy, SourceAdapter, SourceQuery,
};
use crate::jsonl::{parse_jsonl, to_jsonl, JsonlError};
use crate::label::{Label, LabeledExample};
use crate::models::{
    load_model_expecting, model_from_str, model_to_string, train_sbilstm, Classifier, LinearModel, ModelError,
    ModelKind, RuleModel, Validation,
};
use crate::synth::{generate, TruthRecord};
use crate::textnorm::{CleanDocument, NormalizationTable, Normalizer, TableError};

use stage::read_file;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Data { path: String, reason: String },
    #[error("normalization table {path}: {source}")]
    Table {
        path: String,
        #[source]
        source: TableError,
    },
    #[error("lexicon {path}: {source}")]
    Lexicon {
        path: String,
        #[source]
        source: LexiconError,
    },
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    /// Whether the failure is the caller's configuration rather than the run.
    pub fn is_config(&self) -> bool {
        matches!(self, PipelineError::Config(_))
    }
}

fn missing(key: &str) -> PipelineError {
    PipelineError::Config(ConfigError::Invalid(format!("{key} is not set")))
}

fn parse_records<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<Vec<T>, PipelineError> {
    parse_jsonl(text).map_err(|e: JsonlError| PipelineError::Data {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializes");
    s.push('\n');
    s.into_bytes()
}

/// The built-in homophone table, extended by `filter.normalization_table`.
pub fn normalizer(config: &PipelineConfig, stage: Option<&mut Stage>) -> Result<Normalizer, PipelineError> {
    let mut table = NormalizationTable::default();
    if let Some(path) = &config.filter.normalization_table {
        let text = match stage {
            Some(s) => s.input_text("normalization_table", path)?,
            None => String::from_utf8_lossy(&read_file(path)?).into_owned(),
        };
        table.extend_from_tsv(&text).map_err(|source| PipelineError::Table {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(Normalizer::new(table))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub fetched: usize,
    pub malformed: usize,
    pub out_of_window: usize,
    pub duplicate_text: usize,
    pub duplicate_id: usize,
    pub posts: usize,
}

/// Fetches every configured source and writes the consolidated posts.
pub fn ingest(config: &PipelineConfig) -> Result<IngestSummary, PipelineError> {
    if config.ingest.sources.is_empty() {
        return Err(missing("ingest.sources"));
    }
    let mut stage = Stage::begin(&config.output.dir, "ingest")?;
    let normalizer = normalizer(config, Some(&mut stage))?;
    let adapters: Vec<Box<dyn SourceAdapter>> = config
        .ingest
        .sources
        .iter()
        .enumerate()
        .map(|(i, spec)| match spec {
            SourceSpec::File { path, page_size } => {
                stage.input(&format!("source{i}"), path)?;
                Ok(Box::new(FileAdapter::with_page_size(path, *page_size)) as Box<dyn SourceAdapter>)
            }
        })
        .collect::<Result<_, PipelineError>>()?;
    let query = SourceQuery::new(config.ingest.date_from, config.ingest.date_to, config.ingest.max_items);
    let retry = RetryPolicy {
        max_retries: config.ingest.max_retries,
        base_delay: Duration::from_millis(config.ingest.retry_delay_ms),
    };
    let fetched = fetch_all(&adapters, &query, retry)?;
    let mut summary = IngestSummary {
        fetched: 0,
        malformed: 0,
        out_of_window: 0,
        duplicate_text: 0,
        duplicate_id: 0,
        posts: 0,
    };
    let mut streams = Vec::with_capacity(fetched.len());
    for (posts, stats) in fetched {
        summary.fetched += stats.yielded;
        summary.malformed += stats.malformed;
        summary.out_of_window += stats.out_of_window;
        streams.push(posts);
    }
    let (posts, stats) = consolidate_with_stats(streams, &normalizer);
    summary.duplicate_text = stats.duplicate_text;
    summary.duplicate_id = stats.duplicate_id;
    summary.posts = posts.len();
    stage.write("posts.jsonl", to_jsonl(&posts).as_bytes())?;
    stage.write("stats.json", &pretty(&summary))?;
    stage.finish(config)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterSummary {
    pub input: usize,
    pub rejected_language: usize,
    pub rejected_undetectable: usize,
    pub rejected_no_keyword: usize,
    pub pool: usize,
    pub theme_counts: BTreeMap<String, usize>,
}

/// Language and keyword filtering of the ingested posts into the candidate pool.
pub fn filter(config: &PipelineConfig) -> Result<FilterSummary, PipelineError> {
    let lexicon_path = config
        .filter
        .keyword_lexicon
        .as_ref()
        .ok_or_else(|| missing("filter.keyword_lexicon"))?;
    let mut stage = Stage::begin(&config.output.dir, "filter")?;
    let normalizer = normalizer(config, Some(&mut stage))?;
    let lexicon_text = stage.input_text("keyword_lexicon", lexicon_path)?;
    let lexicon = KeywordLexicon::from_tsv(&lexicon_text, &normalizer).map_err(|source| PipelineError::Lexicon {
        path: lexicon_path.display().to_string(),
        source,
    })?;
    let posts_path = config.posts_path();
    let posts: Vec<RawPost> = parse_records(posts_path, &stage.input_text("posts", posts_path)?)?;
    let input = posts.len();
    let lang = language_filter_with(posts, &EthiopicScriptDetector::new(config.filter.language_threshold));
    let kw = keyword_filter(lang.kept, &lexicon, &normalizer).map_err(|source| PipelineError::Lexicon {
        path: lexicon_path.display().to_string(),
        source,
    })?;
    let summary = FilterSummary {
        input,
        rejected_language: lang.rejected_other,
        rejected_undetectable: lang.rejected_undetectable,
        rejected_no_keyword: kw.dropped,
        pool: kw.pool.len(),
        theme_counts: kw
            .theme_counts
            .iter()
            .map(|(t, n)| (t.as_str().to_string(), *n))
            .collect(),
    };
    stage.write("pool.jsonl", to_jsonl(&kw.pool).as_bytes())?;
    stage.write("stats.json", &pretty(&summary))?;
    stage.finish(config)?;
    Ok(summary)
}

/// Annotation service over the configured snapshot store with `annotators`
/// registered.
pub fn annotation_service(
    config: &PipelineConfig,
    annotators: Vec<Annotator>,
) -> Result<AnnotationService, PipelineError> {
    let store_path = config.store_path();
    if let Some(parent) = store_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| PipelineError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let store = SnapshotStore::open(store_path)?;
    let service = AnnotationService::new(Arc::new(store))
        .with_required_votes(config.annotation.required_votes)
        .with_lease(Duration::from_secs(config.annotation.lease_minutes * 60))
        .with_normalizer(normalizer(config, None)?);
    for annotator in annotators {
        service.register_annotator(annotator)?;
    }
    Ok(service)
}

/// Accounts from `annotation.annotators`, or none.
pub fn load_annotators(config: &PipelineConfig) -> Result<Vec<Annotator>, PipelineError> {
    let Some(path) = &config.annotation.annotators else {
        return Ok(Vec::new());
    };
    serde_json::from_slice(&read_file(path)?).map_err(|e| PipelineError::Data {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GoldSummary {
    pub datasets: usize,
    pub records: usize,
    pub by_label: BTreeMap<Label, usize>,
}

fn gold_summary(datasets: usize, gold: &[LabeledExample]) -> GoldSummary {
    let mut by_label: BTreeMap<Label, usize> = Label::ALL.into_iter().map(|l| (l, 0)).collect();
    for g in gold {
        *by_label.entry(g.label).or_default() += 1;
    }
    GoldSummary {
        datasets,
        records: gold.len(),
        by_label,
    }
}

/// Exports every complete item in the annotation store, ordered by id.
pub fn export_gold(config: &PipelineConfig) -> Result<GoldSummary, PipelineError> {
    let store_path = config.store_path();
    if !store_path.exists() {
        return Err(PipelineError::Data {
            path: store_path.display().to_string(),
            reason: "annotation store does not exist".into(),
        });
    }
    let mut stage = Stage::begin(&config.output.dir, "gold")?;
    stage.input("store", store_path)?;
    let service = AnnotationService::new(Arc::new(SnapshotStore::open(store_path)?));
    let datasets = service.datasets();
    let mut gold = Vec::new();
    for d in &datasets {
        gold.extend(service.export_gold(&d.id)?);
    }
    gold.sort_by(|a, b| a.id.cmp(&b.id));
    let summary = gold_summary(datasets.len(), &gold);
    stage.write("gold.jsonl", to_jsonl(&gold).as_bytes())?;
    stage.write("stats.json", &pretty(&summary))?;
    stage.finish(config)?;
    Ok(summary)
}

/// Gold data split and featurized the same way for every model.
struct Prepared {
    docs: Vec<CleanDocument>,
    labels: Vec<Label>,
    split: SplitIndices,
    fingerprint: String,
    vocab: Vocabulary,
}

impl Prepared {
    fn load(config: &PipelineConfig, stage: &mut Stage) -> Result<Prepared, PipelineError> {
        let path = config.gold_path();
        let gold: Vec<LabeledExample> = parse_records(path, &stage.input_text("gold", path)?)?;
        let docs: Vec<CleanDocument> = gold
            .iter()
            .map(|g| CleanDocument {
                id: g.id.clone(),
                raw_text: g.text.clone(),
                norm_text: g.tokens.join(" "),
                tokens: g.tokens.clone(),
            })
            .collect();
        let labels: Vec<Label> = gold.iter().map(|g| g.label).collect();
        let split = stratified_split(&labels, config.split.ratios(), config.split.seed)?;
        let ids: Vec<&str> = gold.iter().map(|g| g.id.as_str()).collect();
        let fingerprint = split.fingerprint(&ids);
        let train_docs: Vec<CleanDocument> = split.train.iter().map(|&i| docs[i].clone()).collect();
        let vocab = build_vocab(&train_docs, config.features.min_df)?;
        Ok(Prepared {
            docs,
            labels,
            split,
            fingerprint,
            vocab,
        })
    }

    fn part(&self, indices: &[usize]) -> (Vec<CleanDocument>, Vec<Label>) {
        (
            indices.iter().map(|&i| self.docs[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    fn split_json(&self, seed: u64) -> Vec<u8> {
        let ids = |ix: &[usize]| ix.iter().map(|&i| self.docs[i].id.clone()).collect::<Vec<_>>();
        pretty(&json!({
            "fingerprint": self.fingerprint,
            "seed": seed,
            "train": ids(&self.split.train),
            "val": ids(&self.split.val),
            "test": ids(&self.split.test),
        }))
    }
}

fn rule_model(config: &PipelineConfig, stage: &mut Stage) -> Result<RuleModel, PipelineError> {
    let path = config.rule.lexicon.as_ref().ok_or_else(|| missing("rule.lexicon"))?;
    let text = stage.input_text("rule_lexicon", path)?;
    let normalizer = normalizer(config, Some(stage))?;
    Ok(RuleModel::from_tsv(&text, config.rule.precedence.clone(), &normalizer)?)
}

fn sparse(dense: &[f64]) -> SparseRow {
    let (indices, values) = dense
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .unzip();
    SparseRow { indices, values }
}

/// Location of a trained model inside the output directory.
pub fn model_path(config: &PipelineConfig, kind: ModelKind) -> PathBuf {
    config.output.dir.join("train").join(kind.as_str()).join("model.json")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub model: ModelKind,
    pub train_examples: usize,
    pub balanced_examples: usize,
    pub vocab_size: usize,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

/// Trains one model on the training split of the gold data.
pub fn train(config: &PipelineConfig, kind: ModelKind) -> Result<TrainSummary, PipelineError> {
    let mut stage = Stage::begin(&config.output.dir, &format!("train/{kind}"))?;
    let (model, summary) = match kind {
        ModelKind::Rule => {
            let rule = rule_model(config, &mut stage)?;
            let summary = TrainSummary {
                model: kind,
                train_examples: 0,
                balanced_examples: 0,
                vocab_size: rule.entries().len(),
                epochs: 0,
                final_loss: None,
            };
            (Classifier::Rule(rule), summary)
        }
        ModelKind::Linear => {
            let data = Prepared::load(config, &mut stage)?;
            let (docs, labels) = data.part(&data.split.train);
            let x = tfidf(&docs, &data.vocab);
            let (x, y) = match config.balance.mode.for_vectors() {
                Some(mode) => {
                    let examples: Vec<(Label, Vec<f64>)> =
                        labels.iter().zip(x.dense_rows()).map(|(l, r)| (*l, r)).collect();
                    let balanced =
                        balance_dataset(&examples, &Label::ALL, mode, config.balance.k, config.balance.seed)?;
                    let rows = balanced.iter().map(|b| sparse(&b.features)).collect();
                    let y = balanced.iter().map(|b| b.label).collect();
                    (TfidfMatrix { n_cols: x.n_cols, rows }, y)
                }
                None => (x, labels.clone()),
            };
            let trained = LinearModel::train(data.vocab.clone(), &x, &y, config.linear.clone())?;
            stage.write("split.json", &data.split_json(config.split.seed))?;
            stage.write("loss_trace.json", &pretty(&trained.loss_trace))?;
            let summary = TrainSummary {
                model: kind,
                train_examples: labels.len(),
                balanced_examples: y.len(),
                vocab_size: data.vocab.len(),
                epochs: config.linear.epochs,
                final_loss: trained.loss_trace.last().copied(),
            };
            (Classifier::Linear(trained.model), summary)
        }
        ModelKind::Sbilstm => {
            let data = Prepared::load(config, &mut stage)?;
            let cfg = &config.sbilstm;
            let (docs, labels) = data.part(&data.split.train);
            let seqs = to_sequences(&docs, &data.vocab, cfg.max_len)?;
            let (seqs, y) = if config.balance.mode.for_sequences() {
                let examples: Vec<(Label, usize)> = labels.iter().copied().zip(0..).collect();
                let balanced = oversample_duplicates(&examples, &Label::ALL, config.balance.seed)?;
                let batch = SequenceBatch {
                    max_len: seqs.max_len,
                    ids: balanced.iter().map(|b| seqs.ids[b.features].clone()).collect(),
                    lengths: balanced.iter().map(|b| seqs.lengths[b.features]).collect(),
                };
                (batch, balanced.iter().map(|b| b.label).collect())
            } else {
                (seqs, labels.clone())
            };
            let embeddings = if config.features.pretrained_embeddings {
                let tokens: Vec<&[String]> = docs.iter().map(|d| d.tokens.as_slice()).collect();
                let tokens: Vec<Vec<&str>> = tokens.iter().map(|t| t.iter().map(String::as_str).collect()).collect();
                Some(train_embeddings(&tokens, &config.embeddings)?)
            } else {
                None
            };
            let (val_docs, val_labels) = data.part(&data.split.val);
            let val_seqs = to_sequences(&val_docs, &data.vocab, cfg.max_len)?;
            let validation = (!val_docs.is_empty()).then_some(Validation {
                batch: &val_seqs,
                labels: &val_labels,
            });
            let trained = train_sbilstm(
                data.vocab.clone(),
                &seqs,
                &y,
                embeddings.as_ref(),
                validation,
                cfg.clone(),
            )?;
            stage.write("split.json", &data.split_json(config.split.seed))?;
            stage.write("epochs.jsonl", to_jsonl(&trained.epochs).as_bytes())?;
            let summary = TrainSummary {
                model: kind,
                train_examples: labels.len(),
                balanced_examples: y.len(),
                vocab_size: data.vocab.len(),
                epochs: trained.epochs.len(),
                final_loss: trained
                    .epochs
                    .get(trained.best_epoch.saturating_sub(1))
                    .map(|e| e.train_loss),
            };
            (Classifier::Sbilstm(trained.model), summary)
        }
    };
    stage.write("model.json", model_to_string(&model)?.as_bytes())?;
    stage.write("summary.json", &pretty(&summary))?;
    stage.finish(config)?;
    Ok(summary)
}

fn load_trained(
    config: &PipelineConfig,
    kind: ModelKind,
    data: &Prepared,
    stage: &mut Stage,
) -> Result<Classifier, PipelineError> {
    let path = model_path(config, kind);
    stage.input(&format!("model.{kind}"), &path)?;
    let model = match kind {
        ModelKind::Rule => {
            let text = String::from_utf8_lossy(&read_file(&path)?).into_owned();
            model_from_str(&text)?
        }
        // the vocabulary must be the one this split produces
        _ => load_model_expecting(&path, &data.vocab.fingerprint())?,
    };
    if model.kind() != kind {
        return Err(PipelineError::Data {
            path: path.display().to_string(),
            reason: format!("holds a {} model, expected {kind}", model.kind()),
        });
    }
    Ok(model)
}

/// Scores a trained model on the test split.
pub fn evaluate(config: &PipelineConfig, kind: ModelKind) -> Result<EvalReport, PipelineError> {
    let mut stage = Stage::begin(&config.output.dir, &format!("evaluate/{kind}"))?;
    let data = Prepared::load(config, &mut stage)?;
    let model = load_trained(config, kind, &data, &mut stage)?;
    let (docs, labels) = data.part(&data.split.test);
    let report = evaluate_model(
        kind.as_str(),
        &model,
        &docs,
        &labels,
        &data.fingerprint,
        config.split.seed,
        config.eval.averaging,
    )?;
    stage.write("report.json", report.to_json().as_bytes())?;
    stage.write("report.txt", report.to_text().as_bytes())?;
    stage.finish(config)?;
    Ok(report)
}

/// Evaluates every trained model on the same test split.
pub fn compare(config: &PipelineConfig) -> Result<Comparison, PipelineError> {
    let mut stage = Stage::begin(&config.output.dir, "compare")?;
    let data = Prepared::load(config, &mut stage)?;
    let models = ModelKind::ALL
        .into_iter()
        .map(|k| Ok((k, load_trained(config, k, &data, &mut stage)?)))
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let named: Vec<(&str, &Classifier)> = models.iter().map(|(k, m)| (k.as_str(), m)).collect();
    let (docs, labels) = data.part(&data.split.test);
    let comparison = compare_models(
        &named,
        &docs,
        &labels,
        &data.fingerprint,
        config.split.seed,
        config.eval.averaging,
    )?;
    stage.write("comparison.json", comparison.to_json().as_bytes())?;
    stage.write("comparison.txt", comparison.to_text().as_bytes())?;
    stage.finish(config)?;
    Ok(comparison)
}

/// Paths of a written synthetic corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthFiles {
    pub posts: PathBuf,
    pub truth: PathBuf,
    pub keyword_lexicon: PathBuf,
    pub rule_lexicon: PathBuf,
}

/// Generates the synthetic corpus described by `config.synth`.
pub fn synth(config: &PipelineConfig) -> Result<SynthFiles, PipelineError> {
    let corpus = generate(&config.synth);
    let mut stage = Stage::begin(&config.output.dir, "synth")?;
    stage.write("posts.jsonl", to_jsonl(&corpus.posts).as_bytes())?;
    stage.write("truth.jsonl", to_jsonl(&corpus.truth).as_bytes())?;
    stage.write("keywords.tsv", corpus.lexicon.keyword_tsv().as_bytes())?;
    stage.write("rules.tsv", corpus.lexicon.rule_tsv().as_bytes())?;
    let dir = stage.dest().to_path_buf();
    stage.finish(config)?;
    Ok(SynthFiles {
        posts: dir.join("posts.jsonl"),
        truth: dir.join("truth.jsonl"),
        keyword_lexicon: dir.join("keywords.tsv"),
        rule_lexicon: dir.join("rules.tsv"),
    })
}

/// Runs the pool through a deterministic in-memory annotation campaign:
/// simulated annotators vote the true label except with probability
/// `simulation.error_rate`, and an adjudicator resolves items without a
/// majority with the true label.
pub fn simulate_annotation(
    config: &PipelineConfig,
    truth_path: &Path,
) -> Result<(GoldSummary, AgreementReport), PipelineError> {
    let mut stage = Stage::begin(&config.output.dir, "gold")?;
    let truth: Vec<TruthRecord> = parse_records(truth_path, &stage.input_text("truth", truth_path)?)?;
    let truth: HashMap<String, Label> = truth.into_iter().map(|t| (t.id, t.label)).collect();
    let pool_path = config.pool_path();
    let pool_text = stage.input_text("pool", pool_path)?;
    let pool: Vec<PoolRecord> = parse_records(pool_path, &pool_text)?;
    if let Some(p) = pool.iter().find(|p| !truth.contains_key(&p.id)) {
        return Err(PipelineError::Data {
            path: truth_path.display().to_string(),
            reason: format!("no true label for pool item {}", p.id),
        });
    }

    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()));
    let service = AnnotationService::new(Arc::new(MemoryStore::new()))
        .with_clock(clock.clone())
        .with_required_votes(config.annotation.required_votes)
        .with_lease(Duration::from_secs(config.annotation.lease_minutes * 60))
        .with_normalizer(normalizer(config, None)?);
    let annotators: Vec<String> = (1..=config.simulation.annotators)
        .map(|i| format!("sim{i:02}"))
        .collect();
    for id in &annotators {
        service.register_annotator(Annotator::new(id.clone(), Role::Annotator))?;
    }
    service.register_annotator(Annotator::new("adjudicator", Role::Admin))?;
    let dataset = service.import_text(&pool_text)?.dataset_id;

    let mut rng = ChaCha8Rng::seed_from_u64(config.simulation.seed);
    loop {
        let mut progress = false;
        for id in &annotators {
            let Some(task) = service.next_task(id)? else {
                continue;
            };
            let true_label = truth[&task.item_id];
            let label = if rng.random_bool(config.simulation.error_rate) {
                let shift = rng.random_range(1..Label::ALL.len());
                Label::ALL[(true_label.index() + shift) % Label::ALL.len()]
            } else {
                true_label
            };
            service.submit_vote(VoteRequest {
                item_id: task.item_id,
                annotator_id: id.clone(),
                label: Some(label),
                skipped: false,
                client_token: None,
            })?;
            clock.advance(Duration::from_secs(7));
            progress = true;
        }
        if !progress {
            break;
        }
    }
    for task in service.adjudication_queue(&dataset)? {
        service.adjudicate(&task.item_id, truth[&task.item_id], "adjudicator")?;
    }
    let agreement = service.agreement_report(&dataset)?;
    let gold = service.export_gold(&dataset)?;
    let summary = gold_summary(1, &gold);
    stage.write("gold.jsonl", to_jsonl(&gold).as_bytes())?;
    stage.write("stats.json", &pretty(&summary))?;
    stage.write("agreement.json", &pretty(&agreement))?;
    stage.finish(config)?;
    Ok((summary, agreement))
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub ingest: IngestSummary,
    pub filter: FilterSummary,
    pub gold: GoldSummary,
    pub agreement: AgreementReport,
    pub comparison: Comparison,
}

/// The whole pipeline on a generated corpus: synth, ingest, filter,
/// simulated annotation, training and evaluation of all three models, and
/// the comparison table.
pub fn benchmark(config: &PipelineConfig) -> Result<BenchmarkOutcome, PipelineError> {
    let files = synth(config)?;
    let mut config = config.clone();
    config.ingest.sources = vec![SourceSpec::File {
        path: files.posts.clone(),
        page_size: crate::ingest::FileAdapter::DEFAULT_PAGE_SIZE,
    }];
    config.filter.keyword_lexicon = Some(files.keyword_lexicon.clone());
    config.rule.lexicon = Some(files.rule_lexicon.clone());
    let out = config.output.dir.clone();
    config.data = DataConfig {
        posts: Some(out.join("ingest").join("posts.jsonl")),
        pool: Some(out.join("filter").join("pool.jsonl")),
        gold: Some(out.join("gold").join("gold.jsonl")),
    };

    let ingest = ingest(&config)?;
    let filter = filter(&config)?;
    let (gold, agreement) = simulate_annotation(&config, &files.truth)?;
    for kind in ModelKind::ALL {
        train(&config, kind)?;
        evaluate(&config, kind)?;
    }
    let comparison = compare(&config)?;
    Ok(BenchmarkOutcome {
        ingest,
        filter,
        gold,
        agreement,
        comparison,
    })
}
