mod common;

use kner::corpus::{parse_corpus, Corpus, TagScheme};
use kner::model::{HeadKind, Model, ModelConfig};
use kner::synthetic;
use kner::tokenize::{Tokenizer, TokenizerKind, TokenizerSpec, UnigramParams};
use kner::trainer::*;
use proptest::prelude::*;
use rand::Rng;

fn scheme(tags: &[&str]) -> TagScheme {
    let tags: Vec<_> = tags.iter().map(|t| t.parse().unwrap()).collect();
    TagScheme::from_tags(&tags)
}

fn word_tokenizer(corpus: &Corpus) -> Tokenizer {
    TokenizerSpec { kind: TokenizerKind::Word, vocab_size: 4000, unigram: UnigramParams::default() }
        .train(&corpus.texts())
        .unwrap()
}

fn small_model(corpus: &Corpus, tok: &Tokenizer, seed: u64) -> Model {
    Model::init(ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        d_ffn: 32,
        vocab_size: tok.vocab_size(),
        n_tags: corpus.scheme().len(),
        max_seq_len: 32,
        adapter_enabled: true,
        head_kind: HeadKind::Linear,
        seed,
    })
    .unwrap()
}

fn empty_like(c: &Corpus) -> Corpus {
    Corpus::with_scheme(vec![], c.scheme().clone()).unwrap()
}

#[test]
fn published_f1_example() {
    assert_eq!(round1(f1_score(93.2, 92.6)), 92.9);
    assert_eq!(f1_score(0.0, 0.0), 0.0);
}

#[test]
fn perfect_predictions_score_100() {
    let s = scheme(&["O", "B-per", "B-loc"]);
    let gold = [0, 1, 2, 0, 1];
    let e = token_metrics(&gold, &gold, &s).unwrap();
    assert_eq!((e.precision, e.recall, e.f1, e.accuracy), (100.0, 100.0, 100.0, 100.0));
}

#[test]
fn all_outside_predictions() {
    let s = scheme(&["O", "B-per"]);
    let gold = [0, 1, 0, 0, 1];
    let e = token_metrics(&[0; 5], &gold, &s).unwrap();
    assert_eq!((e.precision, e.recall, e.f1), (0.0, 0.0, 0.0));
    assert_eq!(e.accuracy, 60.0);
    assert_eq!(e.accuracy_excluding_o, 0.0);

    let e = token_metrics(&[0; 3], &[0; 3], &s).unwrap();
    assert_eq!((e.accuracy, e.precision, e.recall, e.f1), (100.0, 0.0, 0.0, 0.0));
}

#[test]
fn length_mismatch() {
    let s = scheme(&["O"]);
    assert_eq!(token_metrics(&[0], &[0, 0], &s), Err(TrainError::LengthMismatch { pred: 1, gold: 2 }));
}

#[test]
fn metrics_match_hand_counted_confusion() {
    let s = scheme(&["O", "B-per", "I-per", "B-loc"]);
    let mut r = common::rng(17);
    for _ in 0..20 {
        let gold: Vec<usize> = (0..50).map(|_| r.random_range(0..4)).collect();
        let pred: Vec<usize> = (0..50).map(|_| r.random_range(0..4)).collect();
        let (mut tp, mut fp, mut fn_, mut correct) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..50 {
            let (p, g) = (pred[i], gold[i]);
            correct += (p == g) as u64;
            tp += (p == g && g != 0) as u64;
            fp += (p != 0 && p != g) as u64;
            fn_ += (g != 0 && p != g) as u64;
        }
        let e = token_metrics(&pred, &gold, &s).unwrap();
        assert_eq!(e.per_tag.values().map(|c| c.tp).sum::<u64>(), tp);
        assert_eq!(e.per_tag.values().map(|c| c.fp).sum::<u64>(), fp);
        assert_eq!(e.per_tag.values().map(|c| c.fn_).sum::<u64>(), fn_);
        assert_eq!(e.precision, 100.0 * tp as f64 / (tp + fp) as f64);
        assert_eq!(e.recall, 100.0 * tp as f64 / (tp + fn_) as f64);
        assert_eq!(e.accuracy, 100.0 * correct as f64 / 50.0);
    }
}

proptest! {
    #[test]
    fn metrics_are_bounded_and_f1_is_harmonic(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 0..80)
    ) {
        let s = scheme(&["O", "B-a", "B-b", "I-a"]);
        let (pred, gold): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let e = token_metrics(&pred, &gold, &s).unwrap();
        for v in [e.precision, e.recall, e.f1, e.accuracy, e.accuracy_excluding_o] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
        prop_assert_eq!(e.f1, f1_score(e.precision, e.recall));
    }
}

fn row(model: &str, tok: &str, f1: f64) -> ComparisonRow {
    ComparisonRow {
        model_name: model.into(),
        tokenization_method: tok.into(),
        result: EvalResult::from_scores(0.0, 0.0, f1, 0.0),
    }
}

#[test]
fn improvement_examples() {
    let proposed = row("Proposed", "Sentence-piece", 92.9);
    let rows = vec![proposed.clone(), row("Zero-shot", "Sentence-piece", 80.1), row("MLP", "Sentence-piece", 81.3), row("MLP", "BPE", 80.1)];
    let table = improvement_table(&rows, &proposed).unwrap();
    let deltas: Vec<(String, f64)> = table.iter().map(|i| (i.comparison.clone(), i.delta_f1)).collect();
    assert_eq!(deltas, [("Proposed vs. Zero-shot".to_string(), 12.8), ("Proposed vs. MLP".to_string(), 11.6)]);

    let same = row("Proposed-copy", "Sentence-piece", 92.9);
    assert_eq!(improvement_table(&[same], &proposed).unwrap()[0].delta_f1, 0.0);
    assert_eq!(
        improvement_table(&rows, &row("Proposed", "Word-level", 90.0)),
        Err(TrainError::MissingBaseline("Word-level".into()))
    );
    assert!(table7_tsv(&table).contains("Proposed vs. Zero-shot\tSentence-piece\t+12.8\n"));
}

#[test]
fn evaluation_of_untrained_model_is_zero_shot() {
    let corpus = synthetic::corpus(12, 3);
    let tok = word_tokenizer(&corpus);
    let model = small_model(&corpus, &tok, 1);
    let before = model.clone();
    let e = zero_shot_eval(&model, &corpus, &tok).unwrap();
    assert_eq!(e, evaluate(&model, &corpus, &tok).unwrap());
    assert_eq!(model, before);
    assert_eq!(e.n_tokens as usize, corpus.n_tokens());
}

#[test]
fn zero_epochs_leave_the_model_unchanged() {
    let corpus = synthetic::corpus(10, 4);
    let tok = word_tokenizer(&corpus);
    let model = small_model(&corpus, &tok, 2);
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let (trained, history) = train(model.clone(), &corpus, &empty_like(&corpus), &tok, &cfg).unwrap();
    assert_eq!(trained, model);
    assert!(history.is_empty());
}

#[test]
fn training_is_deterministic_and_validates_per_epoch() {
    let corpus = synthetic::corpus(24, 5);
    let (tr, va, _) = kner::corpus::split(&corpus, (0.7, 0.3, 0.0), 1).unwrap();
    let tok = word_tokenizer(&corpus);
    let cfg = TrainConfig { epochs: 3, learning_rate: 1e-3, batch_size: 5, seed: 9, shuffle: true };
    let run = || train(small_model(&corpus, &tok, 3), &tr, &va, &tok, &cfg).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(ha.len(), 3);
    assert!(ha.iter().all(|h| h.train_loss.is_finite() && h.train_loss >= 0.0 && h.validation.is_some()));
}

#[test]
fn scheme_mismatch_is_reported() {
    let corpus = synthetic::corpus(10, 6);
    let tok = word_tokenizer(&corpus);
    let mut cfg = *small_model(&corpus, &tok, 0).config();
    cfg.n_tags += 1;
    let model = Model::init(cfg).unwrap();
    let err = train(model, &corpus, &empty_like(&corpus), &tok, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, TrainError::SchemeMismatch { .. }));
}

#[test]
fn loss_starts_near_uniform_and_falls() {
    let corpus = synthetic::corpus(20, 7);
    let tok = word_tokenizer(&corpus);
    let model = small_model(&corpus, &tok, 4);
    let cfg = TrainConfig { epochs: 30, learning_rate: 1e-3, ..TrainConfig::default() };
    let (_, history) = train(model, &corpus, &empty_like(&corpus), &tok, &cfg).unwrap();
    let ln_k = (corpus.scheme().len() as f64).ln();
    assert!(history[0].train_loss <= ln_k + 0.1);
    assert!(history.last().unwrap().train_loss < history[0].train_loss);
}

#[test]
fn benchmark_grid_and_reports() {
    let corpus = synthetic::corpus(40, 8);
    let mut cfg = BenchmarkConfig::desk(3);
    cfg.model = ModelConfig { d_model: 16, n_heads: 2, n_layers: 1, d_ffn: 32, max_seq_len: 32, ..cfg.model };
    cfg.train.epochs = 2;
    cfg.tokenizer_vocab_size = 120;
    let grid = benchmark_grid();
    assert_eq!(grid.len(), 9);
    let rows = benchmark(&corpus, &grid, &cfg).unwrap();
    assert_eq!(rows.len(), 9);
    let methods: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.tokenization_method.as_str()).collect();
    assert_eq!(methods, ["BPE", "Sentence-piece", "Word-level"].into_iter().collect());

    let tsv = table6_tsv(&rows);
    assert_eq!(tsv.lines().next().unwrap(), "model\ttokenization\tprecision\trecall\tf1\taccuracy");
    assert_eq!(tsv.lines().count(), 10);
    assert_eq!(improvements(&rows).unwrap().len(), 6);

    let again = benchmark(&corpus, &grid, &cfg).unwrap();
    assert_eq!(table6_json(&rows), table6_json(&again));
}

#[test]
fn evaluate_table3_with_word_tokenizer() {
    let corpus = parse_corpus(common::TABLE3.as_bytes()).unwrap();
    let tok = word_tokenizer(&corpus);
    let model = small_model(&corpus, &tok, 0);
    let e = evaluate(&model, &corpus, &tok).unwrap();
    assert_eq!(e.n_tokens, 8);
}
