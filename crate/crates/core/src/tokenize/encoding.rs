use serde::Serialize;

use super::TokenizerError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Special tokens in id order; every tokenizer reserves ids 0..4 for them.
pub const SPECIAL_TOKENS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// Output of any tokenizer. All four vectors have the same length.
///
/// Offsets are half-open codepoint spans into the encoded text, and
/// `word_index` is the ordinal of the whitespace word a piece came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct Encoding {
    pub pieces: Vec<String>,
    pub ids: Vec<usize>,
    pub offsets: Vec<(usize, usize)>,
    pub word_index: Vec<usize>,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_words(&self) -> usize {
        self.word_index.last().map_or(0, |w| w + 1)
    }

    pub(crate) fn push(&mut self, piece: String, id: usize, span: (usize, usize), word: usize) {
        self.pieces.push(piece);
        self.ids.push(id);
        self.offsets.push(span);
        self.word_index.push(word);
    }

    /// Rebuilds the text by joining pieces within a word and words with single spaces.
    pub fn decode(&self) -> Result<String, TokenizerError> {
        if let Some(position) = self.ids.iter().position(|&id| id == UNK_ID) {
            return Err(TokenizerError::ContainsUnk { position });
        }
        let mut out = String::new();
        let mut current: Option<usize> = None;
        for (piece, &word) in self.pieces.iter().zip(&self.word_index) {
            if current.is_some_and(|w| w != word) {
                out.push(' ');
            }
            current = Some(word);
            out.push_str(piece);
        }
        Ok(out)
    }
}

/// A whitespace-delimited word with its codepoint start offset.
pub(crate) struct Word<'a> {
    pub start: usize,
    pub text: &'a str,
}

pub(crate) fn split_words(text: &str) -> Vec<Word<'_>> {
    let mut words = Vec::new();
    let mut start: Option<(usize, usize)> = None; // (byte, codepoint)
    for (cp, (byte, c)) in text.char_indices().enumerate() {
        if c.is_whitespace() {
            if let Some((b, s)) = start.take() {
                words.push(Word { start: s, text: &text[b..byte] });
            }
        } else if start.is_none() {
            start = Some((byte, cp));
        }
    }
    if let Some((b, s)) = start {
        words.push(Word { start: s, text: &text[b..] });
    }
    words
}
