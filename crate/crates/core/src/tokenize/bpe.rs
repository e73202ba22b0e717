//! Codepoint-level byte-pair encoding, trained within whitespace words.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use super::encoding::{split_words, Encoding, SPECIAL_TOKENS, UNK_ID, UNK_TOKEN};
use super::{word_counts, TokenizerError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    alphabet: Vec<char>,
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    ids: HashMap<String, usize>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    /// Builds a model by replaying `merges` on top of `alphabet`.
    ///
    /// Fails if a merge refers to a symbol that does not exist yet.
    pub fn from_merges(
        alphabet: Vec<char>,
        merges: Vec<(String, String)>,
    ) -> Result<BpeModel, TokenizerError> {
        let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut ids = HashMap::new();
        for (i, tok) in vocab.iter().enumerate() {
            ids.insert(tok.clone(), i);
        }
        for c in &alphabet {
            let s = c.to_string();
            if ids.contains_key(&s) {
                return Err(TokenizerError::Format(format!("duplicate alphabet symbol {s:?}")));
            }
            ids.insert(s.clone(), vocab.len());
            vocab.push(s);
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (left, right)) in merges.iter().enumerate() {
            // special tokens are never merge operands
            for part in [left, right] {
                if ids.get(part).is_none_or(|&id| id < SPECIAL_TOKENS.len()) {
                    return Err(TokenizerError::Format(format!(
                        "merge {rank} uses unknown symbol {part:?}"
                    )));
                }
            }
            let joined = format!("{left}{right}");
            if !ids.contains_key(&joined) {
                ids.insert(joined.clone(), vocab.len());
                vocab.push(joined);
            }
            ranks.insert((left.clone(), right.clone()), rank);
        }
        Ok(BpeModel { alphabet, merges, vocab, ids, ranks })
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// Symbols in id order, specials first.
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token_to_id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let mut enc = Encoding::default();
        for (w, word) in split_words(text).into_iter().enumerate() {
            let symbols = self.segment_word(word.text);
            let mut pos = word.start;
            for sym in symbols {
                let len = sym.chars().count();
                match sym.known {
                    true => {
                        let id = self.ids[&sym.text];
                        enc.push(sym.text, id, (pos, pos + len), w);
                    }
                    false => enc.push(UNK_TOKEN.to_string(), UNK_ID, (pos, pos + len), w),
                }
                pos += len;
            }
        }
        enc
    }

    fn segment_word(&self, word: &str) -> Vec<Symbol> {
        let mut symbols: Vec<Symbol> = word
            .chars()
            .map(|c| {
                let text = c.to_string();
                let known = self.ids.contains_key(&text);
                Symbol { text, known }
            })
            .collect();
        // Sequential replay: the lowest rank above the last applied one wins.
        let mut last: Option<usize> = None;
        loop {
            let mut best: Option<usize> = None;
            for pair in symbols.windows(2) {
                if !(pair[0].known && pair[1].known) {
                    continue;
                }
                if let Some(&rank) = self.ranks.get(&(pair[0].text.clone(), pair[1].text.clone()))
                {
                    if last.is_none_or(|l| rank > l) && best.is_none_or(|b| rank < b) {
                        best = Some(rank);
                    }
                }
            }
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_symbols(symbols, left, right);
            last = Some(rank);
        }
        symbols
    }
}

#[derive(Debug, Clone)]
struct Symbol {
    text: String,
    known: bool,
}

impl Symbol {
    fn chars(&self) -> std::str::Chars<'_> {
        self.text.chars()
    }
}

fn merge_symbols(symbols: Vec<Symbol>, left: &str, right: &str) -> Vec<Symbol> {
    let mut out: Vec<Symbol> = Vec::with_capacity(symbols.len());
    let mut iter = symbols.into_iter().peekable();
    while let Some(sym) = iter.next() {
        if sym.known && sym.text == left {
            if let Some(next) = iter.peek() {
                if next.known && next.text == right {
                    let next = iter.next().unwrap();
                    out.push(Symbol { text: sym.text + &next.text, known: true });
                    continue;
                }
            }
        }
        out.push(sym);
    }
    out
}

/// Trains a BPE model: repeatedly merges the most frequent adjacent pair.
///
/// Ties go to the lexicographically smallest concatenation, then to the
/// smallest left symbol. Training stops when the vocabulary (specials included)
/// reaches `target_vocab` or no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(
    sentences: &[S],
    target_vocab: usize,
) -> Result<BpeModel, TokenizerError> {
    let counts = word_counts(sentences);
    if counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let alphabet: Vec<char> = counts
        .keys()
        .flat_map(|w| w.chars())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let needed = alphabet.len() + SPECIAL_TOKENS.len();
    if target_vocab < needed {
        return Err(TokenizerError::VocabTooSmall { needed, requested: target_vocab });
    }

    // Symbol interning keeps the inner loop on integers.
    let mut names: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let mut interned: HashMap<String, u32> =
        names.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect();
    let mut words: Vec<(Vec<u32>, u64)> = counts
        .iter()
        .map(|(w, &n)| (w.chars().map(|c| interned[&c.to_string()]).collect(), n))
        .collect();

    let mut vocab_size = needed;
    let mut merges = Vec::new();
    while vocab_size < target_vocab {
        let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, n) in &words {
            for p in syms.windows(2) {
                *pairs.entry((p[0], p[1])).or_default() += n;
            }
        }
        let top = pairs.values().copied().max().unwrap_or(0);
        if top < 2 {
            break;
        }
        let best = pairs
            .iter()
            .filter(|(_, &n)| n == top)
            .map(|(&(a, b), _)| (format!("{}{}", names[a as usize], names[b as usize]), a, b))
            .min_by(|x, y| x.0.cmp(&y.0).then_with(|| names[x.1 as usize].cmp(&names[y.1 as usize])));
        let Some((_, a, b)) = best else { break };
        let joined = format!("{}{}", names[a as usize], names[b as usize]);
        let new_id = match interned.get(&joined) {
            Some(&id) => id,
            None => {
                let id = names.len() as u32;
                names.push(joined.clone());
                interned.insert(joined, id);
                vocab_size += 1;
                id
            }
        };
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(new_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push((names[a as usize].clone(), names[b as usize].clone()));
    }
    BpeModel::from_merges(alphabet, merges)
}

/// Pair frequencies of a corpus, keyed by symbol pair, for diagnostics.
pub fn pair_counts<S: AsRef<str>>(sentences: &[S]) -> BTreeMap<(String, String), u64> {
    let mut out = BTreeMap::new();
    for (word, n) in word_counts(sentences) {
        let chars: Vec<char> = word.chars().collect();
        for p in chars.windows(2) {
            *out.entry((p[0].to_string(), p[1].to_string())).or_default() += n;
        }
    }
    out
}
