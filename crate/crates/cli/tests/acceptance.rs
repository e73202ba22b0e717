//! Acceptance checks, one PASS/FAIL line each. Exits non-zero if any fails.

use std::collections::BTreeSet;
use std::process::Command;
use std::time::Instant;

use kner::corpus::{self, parse_corpus, AnnotatedSentence, Corpus, DEFAULT_RATIOS, IGNORE};
use kner::model::{Adam, AdamConfig, Batch, HeadKind, Model, ModelConfig};
use kner::synthetic;
use kner::text::normalize;
use kner::tokenize::{train_bpe, train_unigram, TokenizerKind, TokenizerSpec, UnigramModel, UnigramParams};
use kner::trainer::{self, f1_score, improvement_table, ComparisonRow, EvalResult, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TABLE3: &str = include_str!("../../core/tests/fixtures/table3.tsv");
const FIXTURE_1000: &[u8] = include_bytes!("../../core/tests/fixtures/synthetic_1000.tsv");

/// Published comparison results: model, tokenization, P, R, F1.
const TABLE6: [(&str, &str, f64, f64, f64); 13] = [
    ("Proposed", "BPE", 92.4, 91.8, 92.1),
    ("Proposed", "Sentence-piece", 93.2, 92.6, 92.9),
    ("Proposed", "Word-level", 88.3, 87.5, 87.9),
    ("Zero-shot", "BPE", 79.5, 78.3, 78.9),
    ("Zero-shot", "Sentence-piece", 80.6, 79.7, 80.1),
    ("LSTM", "Word-level", 83.7, 82.5, 83.1),
    ("LSTM", "BPE", 84.2, 83.1, 83.6),
    ("LSTM", "Sentence-piece", 85.3, 84.5, 84.9),
    ("SVM", "Word-level", 77.2, 76.1, 76.6),
    ("SVM", "BPE", 78.4, 77.3, 77.8),
    ("SVM", "Sentence-piece", 79.6, 78.8, 79.2),
    ("MLP", "BPE", 80.3, 79.9, 80.1),
    ("MLP", "Sentence-piece", 81.5, 81.0, 81.3),
];
const F1_TOL: f64 = 0.05;
const ZERO_INIT_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const OVERFIT_ACCURACY: f64 = 99.0;
const OVERFIT_EPOCHS: usize = 200;
/// The default 3e-5 needs thousands of epochs at batch 16; see README.
const OVERFIT_LR: f64 = 1e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = fn() -> Outcome;

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny(seed: u64, n_layers: usize, n_heads: usize, head_kind: HeadKind) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads,
        n_layers,
        d_ffn: 16,
        vocab_size: 20,
        n_tags: 5,
        max_seq_len: 12,
        adapter_enabled: true,
        head_kind,
        seed,
    }
}

fn random_batch(r: &mut impl Rng, cfg: &ModelConfig, n: usize) -> Batch {
    let seqs: Vec<(Vec<usize>, Vec<usize>)> = (0..n)
        .map(|_| {
            let len = r.random_range(1..=cfg.max_seq_len);
            let ids = (0..len).map(|_| r.random_range(0..cfg.vocab_size)).collect();
            let labels =
                (0..len).map(|_| if r.random_bool(0.2) { IGNORE } else { r.random_range(0..cfg.n_tags) }).collect();
            (ids, labels)
        })
        .collect();
    let mut batch = Batch::from_sequences(&seqs).unwrap();
    if batch.n_supervised() == 0 {
        batch.labels[0][0] = 0;
    }
    batch
}

fn table6_arithmetic() -> Outcome {
    let mut misses = Vec::new();
    for (m, t, p, r, f1) in TABLE6 {
        let got = f1_score(p, r);
        if (got - f1).abs() > F1_TOL {
            misses.push(format!("{m}/{t}: {p}/{r} gives {got:.4}, printed {f1}"));
        }
    }
    let detail = if misses.is_empty() { "13/13 rows within ±0.05".into() } else { misses.join("; ") };
    outcome(misses.is_empty(), detail)
}

/// Whether some (P, R) that rounds to the printed pair gives an F1 that rounds to the printed F1.
fn rounding_consistent(p: f64, r: f64, f1: f64) -> bool {
    let (lo, hi) = (f1_score(p - 0.05, r - 0.05), f1_score(p + 0.05, r + 0.05));
    lo < f1 + 0.05 && hi >= f1 - 0.05
}

fn table7_arithmetic() -> Outcome {
    let row = |m: &str, f1: f64| ComparisonRow {
        model_name: m.into(),
        tokenization_method: "Sentence-piece".into(),
        result: EvalResult::from_scores(0.0, 0.0, f1, 0.0),
    };
    let rows: Vec<ComparisonRow> = TABLE6
        .iter()
        .filter(|r| r.1 == "Sentence-piece")
        .map(|&(m, _, _, _, f1)| row(m, f1))
        .collect();
    let deltas: Vec<f64> = improvement_table(&rows, &rows[0]).unwrap().iter().map(|i| i.delta_f1).collect();
    let want = [12.8, 8.0, 13.7, 11.6];
    outcome(deltas == want, format!("deltas {deltas:?}"))
}

fn zero_init_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut r = rng(100);
    for seed in 0..100 {
        let heads = [1, 2, 4][seed as usize % 3];
        let kind = if seed % 2 == 0 { HeadKind::Linear } else { HeadKind::Mlp };
        let model = Model::init(tiny(seed, 1 + seed as usize % 3, heads, kind)).unwrap();
        let batch = random_batch(&mut r, model.config(), 1 + seed as usize % 5);
        let a = model.forward(&batch).unwrap();
        let b = model.without_adapters().forward(&batch).unwrap();
        worst = a.iter().zip(&b).fold(worst, |w, (x, y)| w.max((x - y).abs()));
    }
    outcome(worst <= ZERO_INIT_TOL, format!("max abs diff {worst:e} over 100 seeds"))
}

fn freeze_contract() -> Outcome {
    let mut r = rng(4);
    let mut model = Model::init(tiny(3, 2, 2, HeadKind::Linear)).unwrap();
    let before = model.clone();
    let batch = random_batch(&mut r, model.config(), 4);
    let mut opt = Adam::new(&model, AdamConfig::default());
    for _ in 0..10 {
        let (_, g) = model.loss_and_gradients(&batch).unwrap();
        opt.step(&mut model, &g).unwrap();
    }
    let (mut frozen_moved, mut adapter_moved, mut head_moved) = (0, 0, 0);
    for (a, b) in before.tensors().iter().zip(model.tensors()) {
        let changed = a.data.iter().zip(b.data).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        if !a.trainable {
            frozen_moved += changed;
        } else if a.name.starts_with("head") {
            head_moved += changed;
        } else {
            adapter_moved += changed;
        }
    }
    outcome(
        frozen_moved == 0 && adapter_moved >= 1 && head_moved >= 1,
        format!("frozen changed {frozen_moved}, adapter changed {adapter_moved}, head changed {head_moved}"),
    )
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut r = rng(5);
    for kind in [HeadKind::Linear, HeadKind::Mlp] {
        let mut model = Model::init(tiny(11, 1, 1, kind)).unwrap();
        // Move adapters off zero so query/key/value gradients are exercised too.
        for s in model.trainable_slices_mut() {
            for v in s.iter_mut() {
                *v += r.random_range(-0.2..0.2);
            }
        }
        let batch = random_batch(&mut r, model.config(), 3);
        let (_, grads) = model.loss_and_gradients(&batch).unwrap();
        let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
        let loss = |m: &Model| kner::model::cross_entropy(&m.forward(&batch).unwrap(), &batch).unwrap();
        for (t, g) in analytic.iter().enumerate() {
            for (i, &a) in g.iter().enumerate() {
                let orig = model.trainable_slices_mut()[t][i];
                model.trainable_slices_mut()[t][i] = orig + GRAD_EPS;
                let up = loss(&model);
                model.trainable_slices_mut()[t][i] = orig - GRAD_EPS;
                let down = loss(&model);
                model.trainable_slices_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * GRAD_EPS);
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }
    outcome(worst <= GRAD_TOL, format!("max relative error {worst:e}"))
}

fn overfit() -> Outcome {
    let corpus = synthetic::corpus(20, 6);
    let tok = TokenizerSpec { kind: TokenizerKind::Word, vocab_size: 4000, unigram: UnigramParams::default() }
        .train(&corpus.texts())
        .unwrap();
    let model = Model::init(ModelConfig::desk(tok.vocab_size(), corpus.scheme().len())).unwrap();
    let cfg = TrainConfig { learning_rate: OVERFIT_LR, epochs: OVERFIT_EPOCHS, ..TrainConfig::default() };
    let mut reached = None;
    let (model, _) = trainer::train_with(model, &corpus, &corpus, &tok, &cfg, |rec| {
        if reached.is_none() && rec.validation.as_ref().is_some_and(|v| v.accuracy >= OVERFIT_ACCURACY) {
            reached = Some(rec.epoch);
        }
    })
    .unwrap();
    let acc = trainer::evaluate(&model, &corpus, &tok).unwrap().accuracy;
    let detail = match reached {
        Some(e) => format!("≥{OVERFIT_ACCURACY}% first at epoch {e}, final {acc:.1}%"),
        None => format!("final accuracy {acc:.1}% after {OVERFIT_EPOCHS} epochs"),
    };
    outcome(reached.is_some(), detail)
}

fn exhaustive_best(model: &UnigramModel, word: &[char]) -> Option<f64> {
    if word.is_empty() {
        return Some(0.0);
    }
    let mut best: Option<f64> = None;
    for len in 1..=word.len() {
        let head: String = word[..len].iter().collect();
        if let (Some(lp), Some(rest)) = (model.log_prob(&head), exhaustive_best(model, &word[len..])) {
            best = Some(best.map_or(lp + rest, |b: f64| b.max(lp + rest)));
        }
    }
    best
}

fn tokenizer_roundtrip() -> Outcome {
    let texts = parse_corpus(FIXTURE_1000).unwrap().texts();
    let bpe = train_bpe(&texts, 600).unwrap();
    let uni = train_unigram(&texts, 600, UnigramParams::default()).unwrap();
    let failures = texts
        .iter()
        .filter(|s| bpe.encode(s).decode().as_ref() != Ok(*s) || uni.encode(s).decode().as_ref() != Ok(*s))
        .count();
    let words: BTreeSet<Vec<char>> = texts
        .iter()
        .flat_map(|s| s.split_whitespace().map(|w| w.chars().collect::<Vec<_>>()))
        .filter(|w| w.len() <= 10)
        .collect();
    let viterbi_misses = words
        .iter()
        .filter(|w| exhaustive_best(&uni, w).is_none_or(|best| (uni.viterbi(w).score - best).abs() > 1e-9))
        .count();
    outcome(
        texts.len() == 1000 && failures == 0 && viterbi_misses == 0,
        format!(
            "{} sentences, {failures} roundtrip failures; {} words, {viterbi_misses} Viterbi mismatches",
            texts.len(),
            words.len()
        ),
    )
}

fn normalization() -> Outcome {
    let pool: Vec<char> = "ابپتجچحخدرڕزژسشعغفڤقکگلڵمنوۆهەیێئيىكۀabcXYZ0123456789٠١٢٣٤٥٦٧٨٩۰۱۲۳۴۵۶۷۸۹.,;:!?،؛؟«»()\u{200c}  \t\n\u{a0}\u{654}\u{64e}\u{651}\u{301}"
        .chars()
        .collect();
    let mut r = rng(8);
    let mut failures = 0;
    for _ in 0..1000 {
        let len = r.random_range(0..60);
        let s: String = (0..len).map(|_| pool[r.random_range(0..pool.len())]).collect();
        let once = normalize(&s);
        if normalize(&once).as_str() != once.as_str() {
            failures += 1;
        }
    }
    let digits = normalize("٦٧٠٠").into_string();
    outcome(failures == 0 && digits == "6700", format!("{failures}/1000 not idempotent; ٦٧٠٠ → {digits}"))
}

fn corpus_pipeline() -> Outcome {
    let c = parse_corpus(TABLE3.as_bytes()).unwrap();
    let st = corpus::stats(&c);
    let counts: Vec<(&str, usize)> = st.tag_counts.iter().map(|(t, n)| (t.as_str(), *n)).collect();
    let stats_ok = st.n_sentences == 2 && st.n_tokens == 8 && counts == [("B-ani", 2), ("B-per", 1), ("O", 5)];

    let sentences: Vec<AnnotatedSentence> = (0..1472)
        .map(|i| AnnotatedSentence { id: format!("Sentence {}", i + 1), tokens: vec![("w".into(), "O".parse().unwrap())] })
        .collect();
    let big = Corpus::new(sentences).unwrap();
    let (a, b, t) = corpus::split(&big, DEFAULT_RATIOS, 0).unwrap();
    let ids = |x: &Corpus| x.sentences().iter().map(|s| s.id.clone()).collect::<BTreeSet<_>>();
    let (ia, ib, it) = (ids(&a), ids(&b), ids(&t));
    let disjoint = ia.is_disjoint(&ib) && ia.is_disjoint(&it) && ib.is_disjoint(&it);
    let exhaustive = ia.len() + ib.len() + it.len() == 1472 && ia.union(&ib).chain(&it).count() == 1472;
    let sizes = (a.len(), b.len(), t.len());
    outcome(
        stats_ok && sizes == (1030, 220, 222) && disjoint && exhaustive,
        format!("table3 {}/{} {counts:?}; split {sizes:?}, disjoint {disjoint}, exhaustive {exhaustive}", st.n_sentences, st.n_tokens),
    )
}

fn benchmark_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_kner");
    let run = |args: &[&str]| Command::new(bin).args(args).current_dir(dir.path()).output().unwrap();
    let synth = run(&["synth", "--sentences", "80", "--seed", "3", "--out", "c.tsv"]);
    if !synth.status.success() {
        return outcome(false, String::from_utf8_lossy(&synth.stderr));
    }
    for out in ["a", "b"] {
        let r = run(&["benchmark", "--corpus", "c.tsv", "--seed", "7", "--out", out]);
        if !r.status.success() {
            return outcome(false, String::from_utf8_lossy(&r.stderr));
        }
    }
    let files = ["table6.tsv", "table6.json", "table7.tsv", "table7.json"];
    let read = |d: &str, f: &str| std::fs::read(dir.path().join(d).join(f)).unwrap();
    let differing: Vec<&str> = files.iter().copied().filter(|f| read("a", f) != read("b", f)).collect();
    let rows = String::from_utf8(read("a", "table6.tsv")).unwrap().lines().count() - 1;
    outcome(differing.is_empty() && rows == 9, format!("{rows} rows; differing files {differing:?}"))
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("comparison table F1 arithmetic", table6_arithmetic),
        ("improvement table arithmetic", table7_arithmetic),
        ("zero-init adapter equivalence", zero_init_equivalence),
        ("freeze contract under Adam", freeze_contract),
        ("gradient check", gradient_check),
        ("overfit sanity", overfit),
        ("tokenizer roundtrip and Viterbi", tokenizer_roundtrip),
        ("normalization", normalization),
        ("corpus pipeline", corpus_pipeline),
        ("benchmark determinism", benchmark_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {:>2} {name} ({:.1}s): {}", i + 1, start.elapsed().as_secs_f64(), o.detail);
    }
    let (_, _, p, r, f1) = TABLE6[12];
    let consistent = rounding_consistent(p, r, f1);
    println!(
        "{} note: MLP/Sentence-piece F1 {f1} is reachable from unrounded P, R (max {:.4})",
        if consistent { "PASS" } else { "FAIL" },
        f1_score(p + 0.05, r + 0.05)
    );
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
