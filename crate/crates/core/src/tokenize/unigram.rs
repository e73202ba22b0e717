//! Unigram language-model tokenizer (the "sentence-piece" scheme).
//!
//! Training seeds a large substring vocabulary and then alternates EM
//! re-estimation (forward-backward over each word's segmentation lattice)
//! with pruning of the pieces whose removal costs the least likelihood.
//! Single codepoints are never pruned, so every training word stays
//! segmentable.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::encoding::{split_words, Encoding, SPECIAL_TOKENS, UNK_ID, UNK_TOKEN};
use super::{word_counts, TokenizerError};

/// Longest seed substring, in codepoints.
pub const MAX_PIECE_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnigramParams {
    /// Seed vocabulary cap, as a multiple of the target vocabulary.
    pub seed_multiplier: usize,
    /// Fraction of the vocabulary kept by each pruning round.
    pub prune_keep: f64,
    /// EM iterations between pruning rounds.
    pub em_iters: usize,
}

impl Default for UnigramParams {
    fn default() -> Self {
        UnigramParams { seed_multiplier: 4, prune_keep: 0.75, em_iters: 4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnigramModel {
    pieces: Vec<(String, f64)>,
    ids: HashMap<String, usize>,
    max_len: usize,
}

impl UnigramModel {
    /// Builds a model from `(piece, log-probability)` pairs. Piece `i` gets id `4 + i`.
    pub fn from_pieces(pieces: Vec<(String, f64)>) -> Result<UnigramModel, TokenizerError> {
        let mut ids = HashMap::with_capacity(pieces.len());
        let mut max_len = 0;
        for (i, (piece, lp)) in pieces.iter().enumerate() {
            if piece.is_empty() || piece.chars().any(char::is_whitespace) {
                return Err(TokenizerError::Format(format!("invalid piece {piece:?}")));
            }
            if !lp.is_finite() || *lp > 0.0 {
                return Err(TokenizerError::Format(format!(
                    "piece {piece:?} has log-probability {lp}"
                )));
            }
            if SPECIAL_TOKENS.contains(&piece.as_str())
                || ids.insert(piece.clone(), i + SPECIAL_TOKENS.len()).is_some()
            {
                return Err(TokenizerError::Format(format!("duplicate piece {piece:?}")));
            }
            max_len = max_len.max(piece.chars().count());
        }
        Ok(UnigramModel { pieces, ids, max_len })
    }

    pub fn pieces(&self) -> &[(String, f64)] {
        &self.pieces
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len() + SPECIAL_TOKENS.len()
    }

    pub fn token_to_id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn log_prob(&self, piece: &str) -> Option<f64> {
        self.ids.get(piece).map(|&id| self.pieces[id - SPECIAL_TOKENS.len()].1)
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let mut enc = Encoding::default();
        for (w, word) in split_words(text).into_iter().enumerate() {
            let chars: Vec<char> = word.text.chars().collect();
            let mut i = 0;
            while i < chars.len() {
                if !self.ids.contains_key(chars[i].to_string().as_str()) {
                    let at = word.start + i;
                    enc.push(UNK_TOKEN.to_string(), UNK_ID, (at, at + 1), w);
                    i += 1;
                    continue;
                }
                let mut end = i;
                while end < chars.len() && self.ids.contains_key(chars[end].to_string().as_str()) {
                    end += 1;
                }
                let mut pos = i;
                for len in self.viterbi(&chars[i..end]).lengths {
                    let piece: String = chars[pos..pos + len].iter().collect();
                    let id = self.ids[&piece];
                    let at = word.start + pos;
                    enc.push(piece, id, (at, at + len), w);
                    pos += len;
                }
                i = end;
            }
        }
        enc
    }

    /// Best segmentation of a run of known codepoints.
    ///
    /// Ties on score go to fewer pieces, then to the longer leftmost piece.
    pub fn viterbi(&self, chars: &[char]) -> Segmentation {
        let n = chars.len();
        // best[i]: (score, pieces, first piece length) for the suffix starting at i
        let mut best: Vec<Option<(f64, usize, usize)>> = vec![None; n + 1];
        best[n] = Some((0.0, 0, 0));
        for i in (0..n).rev() {
            let mut piece = String::new();
            for j in i + 1..=n.min(i + self.max_len) {
                piece.push(chars[j - 1]);
                let (Some(lp), Some((rest, count, _))) = (self.log_prob(&piece), best[j]) else {
                    continue;
                };
                let cand = (lp + rest, count + 1, j - i);
                let better = match best[i] {
                    None => true,
                    Some((s, c, l)) => {
                        cand.0 > s || (cand.0 == s && (cand.1 < c || (cand.1 == c && cand.2 > l)))
                    }
                };
                if better {
                    best[i] = Some(cand);
                }
            }
        }
        let mut lengths = Vec::new();
        let mut i = 0;
        while i < n {
            let (_, _, len) = best[i].expect("known codepoints are always segmentable");
            lengths.push(len);
            i += len;
        }
        Segmentation { score: best[0].map_or(0.0, |b| b.0), lengths }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub score: f64,
    /// Piece lengths in codepoints, left to right.
    pub lengths: Vec<usize>,
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, log_add)
}

/// One edge of a word's segmentation lattice: codepoints `start..end` form `piece`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Edge {
    start: usize,
    end: usize,
    piece: usize,
}

/// Working state of the trainer: a piece table plus the word list.
#[derive(Debug, Clone)]
pub struct PieceTable {
    pub pieces: Vec<String>,
    pub log_probs: Vec<f64>,
    index: HashMap<String, usize>,
    is_char: Vec<bool>,
}

impl PieceTable {
    pub fn new(pieces: Vec<(String, f64)>) -> PieceTable {
        let index = pieces.iter().enumerate().map(|(i, (p, _))| (p.clone(), i)).collect();
        let is_char = pieces.iter().map(|(p, _)| p.chars().count() == 1).collect();
        let (pieces, log_probs) = pieces.into_iter().unzip();
        PieceTable { pieces, log_probs, index, is_char }
    }

    fn lattice(&self, word: &[char]) -> Vec<Edge> {
        let mut edges = Vec::new();
        for start in 0..word.len() {
            let mut s = String::new();
            for end in start + 1..=word.len().min(start + MAX_PIECE_LEN) {
                s.push(word[end - 1]);
                if let Some(&piece) = self.index.get(&s) {
                    edges.push(Edge { start, end, piece });
                }
            }
        }
        edges
    }

    /// Log marginal likelihood of the word, optionally with one piece removed.
    fn log_marginal(&self, n: usize, edges: &[Edge], without: Option<usize>) -> f64 {
        let mut alpha = vec![f64::NEG_INFINITY; n + 1];
        alpha[0] = 0.0;
        for e in edges {
            if Some(e.piece) == without {
                continue;
            }
            alpha[e.end] = log_add(alpha[e.end], alpha[e.start] + self.log_probs[e.piece]);
        }
        alpha[n]
    }

    /// Expected piece counts over all segmentations (E-step) and the corpus log-likelihood.
    pub fn expected_counts(&self, words: &[(Vec<char>, u64)]) -> (Vec<f64>, f64) {
        let mut counts = vec![0.0; self.pieces.len()];
        let mut loglik = 0.0;
        for (word, freq) in words {
            let n = word.len();
            let edges = self.lattice(word);
            let mut alpha = vec![f64::NEG_INFINITY; n + 1];
            let mut beta = vec![f64::NEG_INFINITY; n + 1];
            alpha[0] = 0.0;
            beta[n] = 0.0;
            for e in &edges {
                alpha[e.end] = log_add(alpha[e.end], alpha[e.start] + self.log_probs[e.piece]);
            }
            for e in edges.iter().rev() {
                beta[e.start] = log_add(beta[e.start], self.log_probs[e.piece] + beta[e.end]);
            }
            let z = alpha[n];
            let f = *freq as f64;
            loglik += f * z;
            for e in &edges {
                let post = (alpha[e.start] + self.log_probs[e.piece] + beta[e.end] - z).exp();
                counts[e.piece] += f * post;
            }
        }
        (counts, loglik)
    }

    /// Replaces log-probabilities with normalized counts (M-step).
    pub fn maximize(&mut self, counts: &[f64]) {
        let clamped: Vec<f64> = counts.iter().map(|&c| c.max(f64::MIN_POSITIVE)).collect();
        let log_total = clamped.iter().sum::<f64>().ln();
        for (lp, c) in self.log_probs.iter_mut().zip(&clamped) {
            *lp = c.ln() - log_total;
        }
    }

    /// Likelihood lost by removing each piece; zero for single codepoints.
    pub fn removal_losses(&self, words: &[(Vec<char>, u64)]) -> Vec<f64> {
        let mut losses = vec![0.0; self.pieces.len()];
        for (word, freq) in words {
            let edges = self.lattice(word);
            let z = self.log_marginal(word.len(), &edges, None);
            let present: BTreeSet<usize> =
                edges.iter().map(|e| e.piece).filter(|&p| !self.is_char[p]).collect();
            for p in present {
                let without = self.log_marginal(word.len(), &edges, Some(p));
                losses[p] += *freq as f64 * (z - without);
            }
        }
        losses
    }

    fn retain(&mut self, keep: &[bool]) {
        let kept: Vec<(String, f64)> = self
            .pieces
            .iter()
            .zip(&self.log_probs)
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|((p, &lp), _)| (p.clone(), lp))
            .collect();
        let norm = log_sum_exp(kept.iter().map(|(_, lp)| *lp));
        *self = PieceTable::new(kept.into_iter().map(|(p, lp)| (p, lp - norm)).collect());
    }

    /// Log-sum-exp of all log-probabilities; zero for a normalized table.
    pub fn log_mass(&self) -> f64 {
        log_sum_exp(self.log_probs.iter().copied())
    }
}

/// Seed vocabulary: every codepoint, plus the most frequent substrings of
/// length 2..=8 occurring at least twice, up to `cap` pieces in total.
pub fn seed_pieces(words: &[(Vec<char>, u64)], cap: usize) -> Vec<(String, u64)> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for (word, freq) in words {
        for start in 0..word.len() {
            let mut s = String::new();
            for end in start + 1..=word.len().min(start + MAX_PIECE_LEN) {
                s.push(word[end - 1]);
                *counts.entry(s.clone()).or_default() += freq;
            }
        }
    }
    let mut chars: Vec<(String, u64)> = Vec::new();
    let mut longer: Vec<(String, u64)> = Vec::new();
    for (s, n) in counts {
        if s.chars().count() == 1 {
            chars.push((s, n));
        } else if n >= 2 {
            longer.push((s, n));
        }
    }
    chars.sort();
    longer.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    longer.truncate(cap.saturating_sub(chars.len()));
    chars.extend(longer);
    chars
}

pub(crate) fn training_words<S: AsRef<str>>(sentences: &[S]) -> Vec<(Vec<char>, u64)> {
    word_counts(sentences).into_iter().map(|(w, n)| (w.chars().collect(), n)).collect()
}

/// Trains a unigram model whose vocabulary (specials included) is at most `target_vocab`.
pub fn train_unigram<S: AsRef<str>>(
    sentences: &[S],
    target_vocab: usize,
    params: UnigramParams,
) -> Result<UnigramModel, TokenizerError> {
    if !(params.prune_keep > 0.0 && params.prune_keep < 1.0) {
        return Err(TokenizerError::BadParameter(format!(
            "prune_keep must lie in (0, 1), got {}",
            params.prune_keep
        )));
    }
    if params.seed_multiplier == 0 {
        return Err(TokenizerError::BadParameter("seed_multiplier must be positive".into()));
    }
    let words = training_words(sentences);
    if words.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let n_chars = words.iter().flat_map(|(w, _)| w.iter()).collect::<BTreeSet<_>>().len();
    let needed = n_chars + SPECIAL_TOKENS.len();
    if target_vocab < needed {
        return Err(TokenizerError::VocabTooSmall { needed, requested: target_vocab });
    }
    let target = target_vocab - SPECIAL_TOKENS.len();

    let seeds = seed_pieces(&words, params.seed_multiplier * target_vocab);
    let total: u64 = seeds.iter().map(|(_, n)| n).sum();
    let log_total = (total as f64).ln();
    let mut table = PieceTable::new(
        seeds.into_iter().map(|(p, n)| (p, (n as f64).ln() - log_total)).collect(),
    );

    loop {
        for _ in 0..params.em_iters {
            let (counts, _) = table.expected_counts(&words);
            table.maximize(&counts);
        }
        let size = table.pieces.len();
        if size <= target {
            break;
        }
        let new_size = target.max((size as f64 * params.prune_keep).floor() as usize);
        let losses = table.removal_losses(&words);
        let mut removable: Vec<usize> = (0..size).filter(|&i| !table.is_char[i]).collect();
        removable.sort_by(|&a, &b| {
            losses[b]
                .total_cmp(&losses[a])
                .then_with(|| table.log_probs[b].total_cmp(&table.log_probs[a]))
                .then_with(|| table.pieces[a].cmp(&table.pieces[b]))
        });
        let mut keep = table.is_char.clone();
        for &i in removable.iter().take(new_size - n_chars) {
            keep[i] = true;
        }
        table.retain(&keep);
    }

    let mut pieces: Vec<(String, f64)> =
        table.pieces.into_iter().zip(table.log_probs).collect();
    pieces.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    UnigramModel::from_pieces(pieces)
}

/// Sorted `(piece, count)` view of a seed vocabulary, for inspection.
pub fn seed_vocabulary<S: AsRef<str>>(sentences: &[S], cap: usize) -> BTreeMap<String, u64> {
    seed_pieces(&training_words(sentences), cap).into_iter().collect()
}
