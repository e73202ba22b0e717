//! The three tokenization schemes: BPE, word-level and unigram ("sentence-piece").
//!
//! All of them split on whitespace first and never produce a piece that spans
//! two words, so word-level tags can be projected onto pieces through
//! [`Encoding::word_index`].

mod bpe;
mod encoding;
mod unigram;
mod word;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bpe::{pair_counts, train_bpe, BpeModel};
pub use encoding::{
    Encoding, BOS_ID, BOS_TOKEN, EOS_ID, EOS_TOKEN, PAD_ID, PAD_TOKEN, SPECIAL_TOKENS, UNK_ID,
    UNK_TOKEN,
};
pub use unigram::{
    log_sum_exp, seed_pieces, seed_vocabulary, train_unigram, PieceTable, Segmentation, UnigramModel,
    UnigramParams, MAX_PIECE_LEN,
};
pub use word::{train_word, WordVocab};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum TokenizerError {
    #[error("training corpus contains no words")]
    EmptyCorpus,
    #[error("vocabulary of {requested} is too small; at least {needed} entries are required")]
    VocabTooSmall { needed: usize, requested: usize },
    #[error("encoding contains an unknown piece at position {position}")]
    ContainsUnk { position: usize },
    #[error("invalid tokenizer parameter: {0}")]
    BadParameter(String),
    #[error("malformed tokenizer model: {0}")]
    Format(String),
    #[error("unsupported tokenizer format version {0}")]
    UnsupportedVersion(u32),
}

/// Frequency of every whitespace-delimited word.
pub fn word_counts<S: AsRef<str>>(sentences: &[S]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for w in s.as_ref().split_whitespace() {
            *counts.entry(w.to_string()).or_default() += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerKind {
    Bpe,
    Word,
    Unigram,
}

impl TokenizerKind {
    pub const ALL: [TokenizerKind; 3] = [TokenizerKind::Bpe, TokenizerKind::Word, TokenizerKind::Unigram];

    /// Name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            TokenizerKind::Bpe => "BPE",
            TokenizerKind::Word => "Word-level",
            TokenizerKind::Unigram => "Sentence-piece",
        }
    }
}

impl fmt::Display for TokenizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for TokenizerKind {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bpe" => Ok(TokenizerKind::Bpe),
            "word" | "word-level" => Ok(TokenizerKind::Word),
            "unigram" | "sentence-piece" | "sentencepiece" => Ok(TokenizerKind::Unigram),
            other => Err(TokenizerError::BadParameter(format!("unknown tokenizer method {other:?}"))),
        }
    }
}

/// Everything needed to train one tokenizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenizerSpec {
    pub kind: TokenizerKind,
    pub vocab_size: usize,
    pub unigram: UnigramParams,
}

impl TokenizerSpec {
    pub const DEFAULT_VOCAB: usize = 4000;

    pub fn new(kind: TokenizerKind) -> Self {
        TokenizerSpec { kind, vocab_size: Self::DEFAULT_VOCAB, unigram: UnigramParams::default() }
    }

    pub fn with_vocab(mut self, vocab_size: usize) -> Self {
        self.vocab_size = vocab_size;
        self
    }

    pub fn train<S: AsRef<str>>(&self, sentences: &[S]) -> Result<Tokenizer, TokenizerError> {
        Ok(match self.kind {
            TokenizerKind::Bpe => Tokenizer::Bpe(train_bpe(sentences, self.vocab_size)?),
            TokenizerKind::Word => Tokenizer::Word(train_word(sentences, self.vocab_size)?),
            TokenizerKind::Unigram => {
                Tokenizer::Unigram(train_unigram(sentences, self.vocab_size, self.unigram)?)
            }
        })
    }
}

/// A trained tokenizer of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Tokenizer {
    Bpe(BpeModel),
    Word(WordVocab),
    Unigram(UnigramModel),
}

impl Tokenizer {
    pub fn kind(&self) -> TokenizerKind {
        match self {
            Tokenizer::Bpe(_) => TokenizerKind::Bpe,
            Tokenizer::Word(_) => TokenizerKind::Word,
            Tokenizer::Unigram(_) => TokenizerKind::Unigram,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::Bpe(m) => m.vocab_size(),
            Tokenizer::Word(m) => m.vocab_size(),
            Tokenizer::Unigram(m) => m.vocab_size(),
        }
    }

    pub fn encode(&self, text: &str) -> Encoding {
        match self {
            Tokenizer::Bpe(m) => m.encode(text),
            Tokenizer::Word(m) => m.encode(text),
            Tokenizer::Unigram(m) => m.encode(text),
        }
    }

    pub fn decode(&self, enc: &Encoding) -> Result<String, TokenizerError> {
        enc.decode()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TokenizerFile::from(self)).expect("tokenizer serializes")
    }

    pub fn from_json(src: &str) -> Result<Tokenizer, TokenizerError> {
        let file: TokenizerFile =
            serde_json::from_str(src).map_err(|e| TokenizerError::Format(e.to_string()))?;
        file.try_into()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TokenizerFile {
    Bpe { version: u32, alphabet: Vec<String>, merges: Vec<(String, String)>, vocab: Vec<String> },
    Word { version: u32, words: Vec<String> },
    Unigram { version: u32, pieces: Vec<(String, f64)> },
}

impl From<&Tokenizer> for TokenizerFile {
    fn from(t: &Tokenizer) -> Self {
        match t {
            Tokenizer::Bpe(m) => TokenizerFile::Bpe {
                version: FORMAT_VERSION,
                alphabet: m.alphabet().iter().map(|c| c.to_string()).collect(),
                merges: m.merges().to_vec(),
                vocab: m.vocab().to_vec(),
            },
            Tokenizer::Word(m) => {
                TokenizerFile::Word { version: FORMAT_VERSION, words: m.words().to_vec() }
            }
            Tokenizer::Unigram(m) => {
                TokenizerFile::Unigram { version: FORMAT_VERSION, pieces: m.pieces().to_vec() }
            }
        }
    }
}

fn check_version(v: u32) -> Result<(), TokenizerError> {
    if v == FORMAT_VERSION {
        Ok(())
    } else {
        Err(TokenizerError::UnsupportedVersion(v))
    }
}

impl TryFrom<TokenizerFile> for Tokenizer {
    type Error = TokenizerError;

    fn try_from(file: TokenizerFile) -> Result<Self, Self::Error> {
        match file {
            TokenizerFile::Bpe { version, alphabet, merges, vocab } => {
                check_version(version)?;
                let alphabet = alphabet
                    .iter()
                    .map(|s| {
                        let mut it = s.chars();
                        match (it.next(), it.next()) {
                            (Some(c), None) => Ok(c),
                            _ => Err(TokenizerError::Format(format!("bad alphabet symbol {s:?}"))),
                        }
                    })
                    .collect::<Result<Vec<char>, _>>()?;
                let model = BpeModel::from_merges(alphabet, merges)?;
                if model.vocab() != vocab.as_slice() {
                    return Err(TokenizerError::Format(
                        "vocabulary does not match the replayed merge list".into(),
                    ));
                }
                Ok(Tokenizer::Bpe(model))
            }
            TokenizerFile::Word { version, words } => {
                check_version(version)?;
                Ok(Tokenizer::Word(WordVocab::from_words(words)?))
            }
            TokenizerFile::Unigram { version, pieces } => {
                check_version(version)?;
                Ok(Tokenizer::Unigram(UnigramModel::from_pieces(pieces)?))
            }
        }
    }
}
