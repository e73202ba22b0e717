//! Central Kurdish (Sorani) text normalization and sentence segmentation.
//!
//! The normalizer is a fixed pipeline over Unicode text:
//!
//! ```text
//! NFC -> character unification -> digit folding -> ZWNJ removal
//!     -> recomposition -> punctuation/digit spacing -> whitespace collapse
//! ```
//!
//! Character unification is table driven. The default table ships in
//! `data/char_map.tsv` and can be replaced with [`CharMap::parse`].

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;
use std::sync::LazyLock;

use serde::Serialize;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const ZWNJ: char = '\u{200C}';

/// Punctuation that gets surrounded by single spaces.
pub const PUNCTUATION: &[char] = &[
    '.', ',', ';', ':', '!', '?', '،', '؛', '؟', '«', '»', '(', ')', '[', ']', '"', '\'',
];

/// Characters that close a sentence. A newline also closes a sentence.
pub const SENTENCE_TERMINATORS: &[char] = &['.', '!', '?', '؟', '؛'];

const DEFAULT_CHAR_MAP: &str = include_str!("../data/char_map.tsv");

static SORANI_MAP: LazyLock<CharMap> =
    LazyLock::new(|| CharMap::parse(DEFAULT_CHAR_MAP).expect("bundled character map is valid"));

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextError {
    #[error("input is not valid UTF-8 (first invalid byte at offset {offset})")]
    InvalidEncoding { offset: usize },
    #[error("character map line {line}: {reason}")]
    BadMapLine { line: usize, reason: String },
}

/// Text that has passed through [`normalize`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize)]
#[serde(transparent)]
pub struct NormalizedText(String);

impl NormalizedText {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    // Only for substrings of already-normalized text.
    fn from_normalized_slice(s: &str) -> Self {
        NormalizedText(s.to_owned())
    }
}

impl Deref for NormalizedText {
    type Target = str;
    fn deref(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for NormalizedText {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NormalizedText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A 1-to-1 codepoint substitution table.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CharMap {
    map: BTreeMap<char, char>,
}

impl CharMap {
    /// The bundled Sorani unification table.
    pub fn sorani() -> &'static CharMap {
        &SORANI_MAP
    }

    /// Parses a `source_hex<TAB>target_hex` table. Blank lines and `#` comments are skipped.
    pub fn parse(src: &str) -> Result<CharMap, TextError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in src.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| TextError::BadMapLine {
                line: line_no,
                reason: reason.to_owned(),
            };
            let mut cols = line.split('\t');
            let (Some(src_hex), Some(dst_hex), None) = (cols.next(), cols.next(), cols.next())
            else {
                return Err(bad("expected two tab-separated columns"));
            };
            let from = parse_hex_char(src_hex.trim()).ok_or_else(|| bad("bad source codepoint"))?;
            let to = parse_hex_char(dst_hex.trim()).ok_or_else(|| bad("bad target codepoint"))?;
            if map.insert(from, to).is_some() {
                return Err(bad("duplicate source codepoint"));
            }
        }
        Ok(CharMap { map })
    }

    pub fn get(&self, c: char) -> Option<char> {
        self.map.get(&c).copied()
    }

    pub fn contains(&self, c: char) -> bool {
        self.map.contains_key(&c)
    }

    pub fn iter(&self) -> impl Iterator<Item = (char, char)> + '_ {
        self.map.iter().map(|(a, b)| (*a, *b))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn parse_hex_char(s: &str) -> Option<char> {
    let s = s
        .strip_prefix("U+")
        .or_else(|| s.strip_prefix("0x"))
        .unwrap_or(s);
    u32::from_str_radix(s, 16).ok().and_then(char::from_u32)
}

/// Which pipeline stage changed a codepoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Unify,
    Digit,
    Zwnj,
}

/// One audited substitution. `position` is the codepoint index in the stage input;
/// `to` is `None` for a deletion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Substitution {
    pub stage: Stage,
    pub position: usize,
    pub from: char,
    pub to: Option<char>,
}

pub fn is_source_digit(c: char) -> bool {
    matches!(c, '\u{0660}'..='\u{0669}' | '\u{06F0}'..='\u{06F9}')
}

fn is_digit(c: char) -> bool {
    c.is_ascii_digit() || is_source_digit(c)
}

pub fn is_punctuation(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

fn fold_digit(c: char) -> Option<char> {
    let base = match c {
        '\u{0660}'..='\u{0669}' => 0x0660,
        '\u{06F0}'..='\u{06F9}' => 0x06F0,
        _ => return None,
    };
    char::from_digit(c as u32 - base, 10)
}

fn unify_audited(text: &str, map: &CharMap, audit: &mut Vec<Substitution>) -> String {
    text.chars()
        .enumerate()
        .map(|(position, c)| match map.get(c) {
            Some(to) => {
                audit.push(Substitution { stage: Stage::Unify, position, from: c, to: Some(to) });
                to
            }
            None => c,
        })
        .collect()
}

fn digits_audited(text: &str, audit: &mut Vec<Substitution>) -> String {
    text.chars()
        .enumerate()
        .map(|(position, c)| match fold_digit(c) {
            Some(to) => {
                audit.push(Substitution { stage: Stage::Digit, position, from: c, to: Some(to) });
                to
            }
            None => c,
        })
        .collect()
}

fn zwnj_audited(text: &str, audit: &mut Vec<Substitution>) -> String {
    let mut out = String::with_capacity(text.len());
    for (position, c) in text.chars().enumerate() {
        if c == ZWNJ {
            audit.push(Substitution { stage: Stage::Zwnj, position, from: c, to: None });
        } else {
            out.push(c);
        }
    }
    out
}

/// Replaces every codepoint found in the bundled unification table.
pub fn normalize_codepoints(text: &str) -> String {
    normalize_codepoints_with(text, CharMap::sorani())
}

pub fn normalize_codepoints_with(text: &str, map: &CharMap) -> String {
    text.chars().map(|c| map.get(c).unwrap_or(c)).collect()
}

/// Folds Arabic-Indic and Extended Arabic-Indic digits to ASCII.
pub fn normalize_digits(text: &str) -> String {
    text.chars().map(|c| fold_digit(c).unwrap_or(c)).collect()
}

pub fn strip_zwnj(text: &str) -> String {
    text.chars().filter(|&c| c != ZWNJ).collect()
}

/// Surrounds punctuation and digit runs with single spaces and squeezes space runs.
pub fn space_punctuation(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + text.len() / 4);
    let mut prev: Option<char> = None;
    for c in text.chars() {
        if let Some(p) = prev {
            let boundary = !p.is_whitespace()
                && !c.is_whitespace()
                && (is_punctuation(p) || is_punctuation(c) || is_digit(p) != is_digit(c));
            if boundary {
                out.push(' ');
            }
        }
        if c == ' ' && prev == Some(' ') {
            continue;
        }
        out.push(c);
        prev = Some(c);
    }
    out
}

fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Sorani text normalizer bound to a character table.
#[derive(Debug, Clone)]
pub struct Normalizer<'a> {
    map: &'a CharMap,
}

impl Default for Normalizer<'static> {
    fn default() -> Self {
        Normalizer { map: CharMap::sorani() }
    }
}

impl<'a> Normalizer<'a> {
    pub fn new(map: &'a CharMap) -> Self {
        Normalizer { map }
    }

    pub fn normalize(&self, text: &str) -> NormalizedText {
        self.normalize_audited(text).0
    }

    /// Normalizes and returns every substitution made along the way.
    pub fn normalize_audited(&self, text: &str) -> (NormalizedText, Vec<Substitution>) {
        let mut audit = Vec::new();
        let composed: String = text.nfc().collect();
        let unified = unify_audited(&composed, self.map, &mut audit);
        let digits = digits_audited(&unified, &mut audit);
        let mut joined = zwnj_audited(&digits, &mut audit);
        // Removing joiners can bring a base and a mark together, and a mapped
        // target can itself compose with a following mark.
        loop {
            let recomposed: String = joined.nfc().collect();
            let next = unify_audited(&recomposed, self.map, &mut audit);
            if next == joined {
                break;
            }
            joined = next;
        }
        let spaced = space_punctuation(&joined);
        (NormalizedText(collapse_whitespace(&spaced)), audit)
    }

    pub fn normalize_bytes(&self, bytes: &[u8]) -> Result<NormalizedText, TextError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| TextError::InvalidEncoding { offset: e.valid_up_to() })?;
        Ok(self.normalize(text))
    }
}

/// Full normalization with the bundled table.
pub fn normalize(text: &str) -> NormalizedText {
    Normalizer::default().normalize(text)
}

pub fn normalize_bytes(bytes: &[u8]) -> Result<NormalizedText, TextError> {
    Normalizer::default().normalize_bytes(bytes)
}

/// Sentences cut out of a text, with codepoint spans into that text.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SentenceList {
    pub sentences: Vec<NormalizedText>,
    pub boundaries: Vec<(usize, usize)>,
}

impl SentenceList {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Splits after each terminator and at newlines. Terminators stay with the
/// sentence they close; whitespace-only segments are dropped.
pub fn segment_sentences(text: &str) -> SentenceList {
    let chars: Vec<char> = text.chars().collect();
    let mut out = SentenceList::default();
    let mut start: Option<usize> = None;
    let mut last_content = 0;

    let close = |start: &mut Option<usize>, end: usize, out: &mut SentenceList| {
        if let Some(s) = start.take() {
            let piece: String = chars[s..end].iter().collect();
            out.sentences.push(NormalizedText::from_normalized_slice(&piece));
            out.boundaries.push((s, end));
        }
    };

    for (i, &c) in chars.iter().enumerate() {
        if c == '\n' {
            close(&mut start, last_content, &mut out);
            continue;
        }
        if c.is_whitespace() {
            continue;
        }
        if start.is_none() {
            start = Some(i);
        }
        last_content = i + 1;
        if SENTENCE_TERMINATORS.contains(&c) {
            close(&mut start, i + 1, &mut out);
        }
    }
    close(&mut start, last_content, &mut out);
    out
}
