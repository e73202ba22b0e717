//! Whole-word vocabulary tokenizer.

use std::collections::HashMap;

use super::encoding::{split_words, Encoding, SPECIAL_TOKENS, UNK_ID, UNK_TOKEN};
use super::{word_counts, TokenizerError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl WordVocab {
    /// Word `i` gets id `4 + i`.
    pub fn from_words(words: Vec<String>) -> Result<WordVocab, TokenizerError> {
        let mut ids = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(TokenizerError::Format(format!("invalid word {w:?}")));
            }
            if SPECIAL_TOKENS.contains(&w.as_str())
                || ids.insert(w.clone(), i + SPECIAL_TOKENS.len()).is_some()
            {
                return Err(TokenizerError::Format(format!("duplicate word {w:?}")));
            }
        }
        Ok(WordVocab { words, ids })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len() + SPECIAL_TOKENS.len()
    }

    pub fn token_to_id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn encode(&self, text: &str) -> Encoding {
        let mut enc = Encoding::default();
        for (i, word) in split_words(text).into_iter().enumerate() {
            let span = (word.start, word.start + word.text.chars().count());
            match self.ids.get(word.text) {
                Some(&id) => enc.push(word.text.to_string(), id, span, i),
                None => enc.push(UNK_TOKEN.to_string(), UNK_ID, span, i),
            }
        }
        enc
    }
}

/// Keeps the `max_vocab - 4` most frequent words; ties break alphabetically.
pub fn train_word<S: AsRef<str>>(
    sentences: &[S],
    max_vocab: usize,
) -> Result<WordVocab, TokenizerError> {
    let counts = word_counts(sentences);
    if counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }
    let needed = SPECIAL_TOKENS.len() + 1;
    if max_vocab < needed {
        return Err(TokenizerError::VocabTooSmall { needed, requested: max_vocab });
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_vocab - SPECIAL_TOKENS.len());
    WordVocab::from_words(ranked.into_iter().map(|(w, _)| w).collect())
}
