//! Fine-tuning loop, token-level metrics and the comparison benchmark.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, align_labels, Corpus, CorpusError, TagScheme, IGNORE};
use crate::model::{Adam, AdamConfig, Batch, HeadKind, Model, ModelConfig, ModelError};
use crate::tokenize::{Tokenizer, TokenizerError, TokenizerKind, TokenizerSpec, UnigramParams};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("model predicts {model} tags but the corpus scheme has {corpus}")]
    SchemeMismatch { model: usize, corpus: usize },
    #[error("tokenizer has {tokenizer} ids but the model embeds {model}")]
    VocabMismatch { model: usize, tokenizer: usize },
    #[error("{pred} predictions for {gold} gold tags")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("no baseline row for {0}")]
    MissingBaseline(String),
    #[error("bad training configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 3e-5, batch_size: 16, epochs: 10, seed: 0, shuffle: true }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TrainError::BadConfig("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-tag confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Percentages in `[0, 100]`, kept at full precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Token accuracy over all tokens, `O` included.
    pub accuracy: f64,
    /// Token accuracy over tokens whose gold tag is not `O`.
    pub accuracy_excluding_o: f64,
    pub n_tokens: u64,
    pub per_tag: BTreeMap<String, TagCounts>,
}

impl EvalResult {
    /// A result known only by its headline scores, e.g. a published row.
    pub fn from_scores(precision: f64, recall: f64, f1: f64, accuracy: f64) -> EvalResult {
        EvalResult {
            precision,
            recall,
            f1,
            accuracy,
            accuracy_excluding_o: 0.0,
            n_tokens: 0,
            per_tag: BTreeMap::new(),
        }
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Rounds to one decimal place, halves away from zero.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Token-level metrics, micro-averaged over non-`O` tags.
pub fn token_metrics(pred: &[usize], gold: &[usize], scheme: &TagScheme) -> Result<EvalResult, TrainError> {
    if pred.len() != gold.len() {
        return Err(TrainError::LengthMismatch { pred: pred.len(), gold: gold.len() });
    }
    let o = scheme.outside_id();
    let mut per_tag: BTreeMap<String, TagCounts> = BTreeMap::new();
    let (mut correct, mut entity_gold, mut entity_correct) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.iter().zip(gold) {
        if p == g {
            correct += 1;
        }
        if g != o {
            entity_gold += 1;
            if p == g {
                entity_correct += 1;
                per_tag.entry(scheme.tag(g).to_string()).or_default().tp += 1;
            } else {
                per_tag.entry(scheme.tag(g).to_string()).or_default().fn_ += 1;
            }
        }
        if p != o && p != g {
            per_tag.entry(scheme.tag(p).to_string()).or_default().fp += 1;
        }
    }
    let tp: u64 = per_tag.values().map(|c| c.tp).sum();
    let fp: u64 = per_tag.values().map(|c| c.fp).sum();
    let fn_: u64 = per_tag.values().map(|c| c.fn_).sum();
    let precision = percent(tp, tp + fp);
    let recall = percent(tp, tp + fn_);
    Ok(EvalResult {
        precision,
        recall,
        f1: f1_score(precision, recall),
        accuracy: percent(correct, pred.len() as u64),
        accuracy_excluding_o: percent(entity_correct, entity_gold),
        n_tokens: pred.len() as u64,
        per_tag,
    })
}

/// A sentence as model input: piece ids, first-subword labels and word starts.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSentence {
    pub ids: Vec<usize>,
    pub labels: Vec<usize>,
    /// Gold tag id of every word, including words cut off by truncation.
    pub word_tags: Vec<usize>,
    /// Piece position of each word's first piece, for the words that fit.
    pub word_starts: Vec<usize>,
}

/// Tokenizes and aligns a corpus. Sequences longer than `max_len` are truncated.
pub fn encode_corpus(
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    scheme: &TagScheme,
    max_len: usize,
) -> Result<Vec<EncodedSentence>, TrainError> {
    corpus
        .sentences()
        .iter()
        .map(|s| {
            let enc = tokenizer.encode(&s.text());
            let mut labels = align_labels(s, &enc, scheme)?;
            let mut ids = enc.ids;
            ids.truncate(max_len);
            labels.truncate(max_len);
            let word_starts = labels.iter().enumerate().filter(|(_, &l)| l != IGNORE).map(|(i, _)| i).collect();
            let word_tags = s
                .tags()
                .map(|t| scheme.id(t).ok_or_else(|| CorpusError::UnknownTag(t.to_string())))
                .collect::<Result<_, _>>()?;
            Ok(EncodedSentence { ids, labels, word_tags, word_starts })
        })
        .collect()
}

fn check_compat(model: &Model, scheme: &TagScheme, tokenizer: &Tokenizer) -> Result<(), TrainError> {
    let cfg = model.config();
    if cfg.n_tags != scheme.len() {
        return Err(TrainError::SchemeMismatch { model: cfg.n_tags, corpus: scheme.len() });
    }
    if tokenizer.vocab_size() > cfg.vocab_size {
        return Err(TrainError::VocabMismatch { model: cfg.vocab_size, tokenizer: tokenizer.vocab_size() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-token training loss over the epoch.
    pub train_loss: f64,
    pub validation: Option<EvalResult>,
}

/// Fine-tunes the adapters and head. Returns the final-epoch model.
pub fn train(
    model: Model,
    train: &Corpus,
    val: &Corpus,
    tokenizer: &Tokenizer,
    cfg: &TrainConfig,
) -> Result<(Model, Vec<EpochRecord>), TrainError> {
    train_with(model, train, val, tokenizer, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut model: Model,
    train: &Corpus,
    val: &Corpus,
    tokenizer: &Tokenizer,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model, Vec<EpochRecord>), TrainError> {
    cfg.validate()?;
    let scheme = train.scheme();
    check_compat(&model, scheme, tokenizer)?;
    if val.scheme() != scheme && !val.is_empty() {
        return Err(TrainError::SchemeMismatch { model: scheme.len(), corpus: val.scheme().len() });
    }
    let data = encode_corpus(train, tokenizer, scheme, model.config().max_seq_len)?;
    let mut optimizer = Adam::new(&model, AdamConfig { lr: cfg.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let (mut loss_sum, mut n_sup) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<(Vec<usize>, Vec<usize>)> =
                chunk.iter().map(|&i| (data[i].ids.clone(), data[i].labels.clone())).collect();
            let batch = Batch::from_sequences(&seqs)?;
            let n = batch.n_supervised();
            if n == 0 {
                continue;
            }
            let (loss, grads) = model.loss_and_gradients(&batch)?;
            optimizer.step(&mut model, &grads)?;
            loss_sum += loss * n as f64;
            n_sup += n;
        }
        let train_loss = if n_sup == 0 { 0.0 } else { loss_sum / n_sup as f64 };
        let validation = if val.is_empty() { None } else { Some(evaluate(&model, val, tokenizer)?) };
        let record = EpochRecord { epoch, train_loss, validation };
        on_epoch(&record);
        history.push(record);
    }
    Ok((model, history))
}

/// Predicted tag id for every word, from the argmax at its first piece.
/// Words cut off by truncation are predicted `O`.
pub fn predict(model: &Model, data: &[EncodedSentence], outside: usize) -> Result<Vec<Vec<usize>>, TrainError> {
    data.par_iter()
        .map(|s| {
            let logits = model.forward(&Batch::from_ids(std::slice::from_ref(&s.ids)))?;
            let mut tags: Vec<usize> = s
                .word_starts
                .iter()
                .map(|&p| {
                    let row = logits.slice(ndarray::s![0, p, ..]);
                    // First maximum wins, so ties resolve to the lower tag id.
                    let mut best = 0;
                    for (k, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = k;
                        }
                    }
                    best
                })
                .collect();
            tags.resize(s.word_tags.len(), outside);
            Ok(tags)
        })
        .collect()
}

pub fn evaluate(model: &Model, corpus: &Corpus, tokenizer: &Tokenizer) -> Result<EvalResult, TrainError> {
    let scheme = corpus.scheme();
    check_compat(model, scheme, tokenizer)?;
    let data = encode_corpus(corpus, tokenizer, scheme, model.config().max_seq_len)?;
    let pred: Vec<usize> = predict(model, &data, scheme.outside_id())?.into_iter().flatten().collect();
    let gold: Vec<usize> = data.iter().flat_map(|s| s.word_tags.iter().copied()).collect();
    token_metrics(&pred, &gold, scheme)
}

/// Evaluation of an untouched model; the adapters stay at their initial state.
pub fn zero_shot_eval(model: &Model, corpus: &Corpus, tokenizer: &Tokenizer) -> Result<EvalResult, TrainError> {
    evaluate(model, corpus, tokenizer)
}

/// Model family of a benchmark row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Zero-initialized adapters plus a linear head, fine-tuned.
    Proposed,
    /// Same architecture, evaluated without any training step.
    ZeroShot,
    /// Frozen encoder without adapters plus a trained MLP head.
    Mlp,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Proposed, Variant::ZeroShot, Variant::Mlp];

    pub fn display_name(self) -> &'static str {
        match self {
            Variant::Proposed => "Proposed",
            Variant::ZeroShot => "Zero-shot",
            Variant::Mlp => "MLP",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Variant, String> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(Variant::Proposed),
            "zero-shot" | "zeroshot" => Ok(Variant::ZeroShot),
            "mlp" => Ok(Variant::Mlp),
            _ => Err(format!("unknown model variant {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_name: String,
    pub tokenization_method: String,
    pub result: EvalResult,
}

/// Settings shared by every benchmark row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub train: TrainConfig,
    /// Encoder shape; vocabulary size, tag count, adapter flag and head are set per row.
    pub model: ModelConfig,
    pub tokenizer_vocab_size: usize,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
}

impl BenchmarkConfig {
    pub fn desk(seed: u64) -> BenchmarkConfig {
        BenchmarkConfig {
            train: TrainConfig { seed, ..TrainConfig::default() },
            model: ModelConfig { seed, ..ModelConfig::desk(1, 1) },
            tokenizer_vocab_size: 4000,
            ratios: corpus::DEFAULT_RATIOS,
            seed,
        }
    }
}

/// Runs every `(variant, tokenizer)` pair: train the tokenizer on the corpus
/// text, split, fine-tune (unless zero-shot) and score the test split.
pub fn benchmark(
    corpus: &Corpus,
    configs: &[(Variant, TokenizerKind)],
    cfg: &BenchmarkConfig,
) -> Result<Vec<ComparisonRow>, TrainError> {
    let (train_set, val_set, test_set) = corpus::split(corpus, cfg.ratios, cfg.seed)?;
    let texts = corpus.texts();
    let mut tokenizers: BTreeMap<TokenizerKind, Tokenizer> = BTreeMap::new();
    let mut rows = Vec::with_capacity(configs.len());
    for &(variant, kind) in configs {
        if let Entry::Vacant(e) = tokenizers.entry(kind) {
            let spec = TokenizerSpec { kind, vocab_size: cfg.tokenizer_vocab_size, unigram: UnigramParams::default() };
            e.insert(spec.train(&texts)?);
        }
        let tokenizer = &tokenizers[&kind];
        let model_cfg = ModelConfig {
            vocab_size: tokenizer.vocab_size(),
            n_tags: corpus.scheme().len(),
            adapter_enabled: variant != Variant::Mlp,
            head_kind: if variant == Variant::Mlp { HeadKind::Mlp } else { HeadKind::Linear },
            ..cfg.model
        };
        let model = Model::init(model_cfg)?;
        let result = match variant {
            Variant::ZeroShot => zero_shot_eval(&model, &test_set, tokenizer)?,
            Variant::Proposed | Variant::Mlp => {
                let (model, _) = train(model, &train_set, &val_set, tokenizer, &cfg.train)?;
                evaluate(&model, &test_set, tokenizer)?
            }
        };
        rows.push(ComparisonRow {
            model_name: variant.display_name().to_string(),
            tokenization_method: kind.display_name().to_string(),
            result,
        });
    }
    Ok(rows)
}

/// The full grid, variants outermost.
pub fn benchmark_grid() -> Vec<(Variant, TokenizerKind)> {
    Variant::ALL
        .iter()
        .flat_map(|&v| TokenizerKind::ALL.iter().map(move |&k| (v, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub comparison: String,
    pub tokenization: String,
    /// Proposed F1 minus baseline F1, rounded to one decimal.
    pub delta_f1: f64,
}

/// F1 gain of `proposed` over every other row with the same tokenization.
pub fn improvement_table(rows: &[ComparisonRow], proposed: &ComparisonRow) -> Result<Vec<Improvement>, TrainError> {
    let out: Vec<Improvement> = rows
        .iter()
        .filter(|r| r.tokenization_method == proposed.tokenization_method && r.model_name != proposed.model_name)
        .map(|r| Improvement {
            comparison: format!("{} vs. {}", proposed.model_name, r.model_name),
            tokenization: r.tokenization_method.clone(),
            delta_f1: round1(proposed.result.f1 - r.result.f1),
        })
        .collect();
    if out.is_empty() {
        return Err(TrainError::MissingBaseline(proposed.tokenization_method.clone()));
    }
    Ok(out)
}

/// Improvement rows for every tokenization that has a proposed row.
pub fn improvements(rows: &[ComparisonRow]) -> Result<Vec<Improvement>, TrainError> {
    let mut out = Vec::new();
    for p in rows.iter().filter(|r| r.model_name == Variant::Proposed.display_name()) {
        out.extend(improvement_table(rows, p)?);
    }
    Ok(out)
}

pub const TABLE6_COLUMNS: [&str; 6] = ["model", "tokenization", "precision", "recall", "f1", "accuracy"];
pub const TABLE7_COLUMNS: [&str; 3] = ["comparison", "tokenization", "delta_f1"];

pub fn table6_tsv(rows: &[ComparisonRow]) -> String {
    let mut out = TABLE6_COLUMNS.join("\t") + "\n";
    for r in rows {
        let e = &r.result;
        out += &format!(
            "{}\t{}\t{:.1}\t{:.1}\t{:.1}\t{:.1}\n",
            r.model_name,
            r.tokenization_method,
            round1(e.precision),
            round1(e.recall),
            round1(e.f1),
            round1(e.accuracy)
        );
    }
    out
}

#[derive(Serialize)]
struct Table6Json<'a> {
    model: &'a str,
    tokenization: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    accuracy: f64,
    accuracy_excluding_o: f64,
    n_tokens: u64,
    per_tag: &'a BTreeMap<String, TagCounts>,
}

pub fn table6_json(rows: &[ComparisonRow]) -> String {
    let rows: Vec<Table6Json> = rows
        .iter()
        .map(|r| Table6Json {
            model: &r.model_name,
            tokenization: &r.tokenization_method,
            precision: round1(r.result.precision),
            recall: round1(r.result.recall),
            f1: round1(r.result.f1),
            accuracy: round1(r.result.accuracy),
            accuracy_excluding_o: round1(r.result.accuracy_excluding_o),
            n_tokens: r.result.n_tokens,
            per_tag: &r.result.per_tag,
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("report serializes") + "\n"
}

pub fn table7_tsv(rows: &[Improvement]) -> String {
    let mut out = TABLE7_COLUMNS.join("\t") + "\n";
    for r in rows {
        out += &format!("{}\t{}\t{:+.1}\n", r.comparison, r.tokenization, r.delta_f1);
    }
    out
}

pub fn table7_json(rows: &[Improvement]) -> String {
    serde_json::to_string_pretty(rows).expect("report serializes") + "\n"
}
