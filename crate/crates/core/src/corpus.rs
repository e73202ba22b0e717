//! Annotated NER corpus: TSV ingestion, tag scheme, validation, statistics,
//! seeded splitting, and projection of word tags onto subword encodings.
//!
//! The on-disk format is a UTF-8 TSV with LF line endings and a header:
//!
//! ```text
//! sentence_id<TAB>word<TAB>tag
//! Sentence 1<TAB>تارا<TAB>B-per
//! ```
//!
//! Rows of one sentence are contiguous.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::tokenize::Encoding;

pub const HEADER: &str = "sentence_id\tword\ttag";

/// Label id for positions excluded from loss and metrics.
pub const IGNORE: usize = usize::MAX;

const DOCUMENTED_TAGS: &str = include_str!("../data/documented_tags.tsv");

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("corpus file is empty")]
    EmptyFile,
    #[error("corpus is not valid UTF-8 (byte {offset})")]
    InvalidEncoding { offset: usize },
    #[error("line {0}: malformed row")]
    MalformedLine(usize),
    #[error("line {0}: invalid tag")]
    InvalidTag(usize),
    #[error("line {line}: sentence {id:?} is not contiguous")]
    NonContiguous { line: usize, id: String },
    #[error("invalid tag {0:?}")]
    BadTag(String),
    #[error("tag {0:?} is not part of the tag scheme")]
    UnknownTag(String),
    #[error("sentence {0:?} is empty or has a word containing whitespace")]
    BadSentence(String),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
    #[error("encoding covers {pieces_words} words but the sentence has {words}")]
    AlignmentMismatch { words: usize, pieces_words: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Prefix {
    B,
    I,
    E,
    O,
}

/// An entity tag such as `B-per`, or the outside tag `O`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag {
    raw: String,
    prefix: Prefix,
    category: String,
}

impl Tag {
    pub fn outside() -> Tag {
        Tag { raw: "O".into(), prefix: Prefix::O, category: String::new() }
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    pub fn prefix(&self) -> Prefix {
        self.prefix
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn is_outside(&self) -> bool {
        self.prefix == Prefix::O
    }
}

impl FromStr for Tag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Tag, CorpusError> {
        if s == "O" {
            return Ok(Tag::outside());
        }
        let bad = || CorpusError::BadTag(s.to_string());
        let (head, category) = s.split_once('-').ok_or_else(bad)?;
        let prefix = match head {
            "B" => Prefix::B,
            "I" => Prefix::I,
            "E" => Prefix::E,
            _ => return Err(bad()),
        };
        if category.is_empty() || category.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        Ok(Tag { raw: s.to_string(), prefix, category: category.to_string() })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.raw)
    }
}

/// Tags listed in the corpus documentation. The scheme itself is built from data.
pub fn documented_tags() -> &'static [Tag] {
    static TAGS: LazyLock<Vec<Tag>> = LazyLock::new(|| {
        DOCUMENTED_TAGS
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .skip(1)
            .map(|l| l.split('\t').next().unwrap().parse().expect("documented tag is valid"))
            .collect()
    });
    &TAGS
}

/// Dense tag ids. `O` is always id 0; the rest follow in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagScheme {
    tags: Vec<Tag>,
    ids: HashMap<String, usize>,
}

impl TagScheme {
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a Tag>) -> TagScheme {
        let mut set: BTreeSet<Tag> = tags.into_iter().cloned().collect();
        set.remove(&Tag::outside());
        let tags: Vec<Tag> = std::iter::once(Tag::outside()).chain(set).collect();
        let ids = tags.iter().enumerate().map(|(i, t)| (t.raw.clone(), i)).collect();
        TagScheme { tags, ids }
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn id(&self, tag: &Tag) -> Option<usize> {
        self.ids.get(&tag.raw).copied()
    }

    pub fn id_of(&self, raw: &str) -> Option<usize> {
        self.ids.get(raw).copied()
    }

    pub fn tag(&self, id: usize) -> &Tag {
        &self.tags[id]
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn outside_id(&self) -> usize {
        0
    }

    /// Tags present in the scheme but absent from the documentation list.
    pub fn undocumented(&self) -> Vec<&Tag> {
        let doc: BTreeSet<&Tag> = documented_tags().iter().collect();
        self.tags.iter().filter(|t| !doc.contains(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotatedSentence {
    pub id: String,
    pub tokens: Vec<(String, Tag)>,
}

impl AnnotatedSentence {
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|(w, _)| w.as_str())
    }

    pub fn tags(&self) -> impl Iterator<Item = &Tag> {
        self.tokens.iter().map(|(_, t)| t)
    }

    /// Words joined with single spaces, the text handed to tokenizers.
    pub fn text(&self) -> String {
        self.words().collect::<Vec<_>>().join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<AnnotatedSentence>,
    scheme: TagScheme,
}

impl Corpus {
    /// Builds a corpus whose scheme is derived from the tags it contains.
    pub fn new(sentences: Vec<AnnotatedSentence>) -> Result<Corpus, CorpusError> {
        let scheme = TagScheme::from_tags(sentences.iter().flat_map(|s| s.tags()));
        Corpus::with_scheme(sentences, scheme)
    }

    /// Builds a corpus against an existing scheme, e.g. a split of a larger corpus.
    pub fn with_scheme(
        sentences: Vec<AnnotatedSentence>,
        scheme: TagScheme,
    ) -> Result<Corpus, CorpusError> {
        for s in &sentences {
            if s.tokens.is_empty()
                || s.words().any(|w| w.is_empty() || w.chars().any(char::is_whitespace))
            {
                return Err(CorpusError::BadSentence(s.id.clone()));
            }
            if let Some(t) = s.tags().find(|t| scheme.id(t).is_none()) {
                return Err(CorpusError::UnknownTag(t.raw.clone()));
            }
        }
        Ok(Corpus { sentences, scheme })
    }

    pub fn sentences(&self) -> &[AnnotatedSentence] {
        &self.sentences
    }

    pub fn scheme(&self) -> &TagScheme {
        &self.scheme
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn n_tokens(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    pub fn texts(&self) -> Vec<String> {
        self.sentences.iter().map(|s| s.text()).collect()
    }
}

pub fn parse_corpus(bytes: &[u8]) -> Result<Corpus, CorpusError> {
    if bytes.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    let src = std::str::from_utf8(bytes)
        .map_err(|e| CorpusError::InvalidEncoding { offset: e.valid_up_to() })?;
    let src = src.strip_suffix('\n').unwrap_or(src);
    let mut lines = src.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((n, _)) => return Err(CorpusError::MalformedLine(n)),
        None => return Err(CorpusError::EmptyFile),
    }

    let mut sentences: Vec<AnnotatedSentence> = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (n, line) in lines {
        let mut cols = line.split('\t');
        let (Some(id), Some(word), Some(raw_tag), None) =
            (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(CorpusError::MalformedLine(n));
        };
        if id.is_empty() || id.contains('\r') || word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(CorpusError::MalformedLine(n));
        }
        let tag: Tag = raw_tag.parse().map_err(|_| CorpusError::InvalidTag(n))?;
        match sentences.last_mut() {
            Some(last) if last.id == id => last.tokens.push((word.to_string(), tag)),
            _ => {
                if !seen.insert(id.to_string()) {
                    return Err(CorpusError::NonContiguous { line: n, id: id.to_string() });
                }
                sentences.push(AnnotatedSentence {
                    id: id.to_string(),
                    tokens: vec![(word.to_string(), tag)],
                });
            }
        }
    }
    if sentences.is_empty() {
        return Err(CorpusError::EmptyFile);
    }
    Corpus::new(sentences)
}

pub fn write_corpus(corpus: &Corpus) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for s in corpus.sentences() {
        for (word, tag) in &s.tokens {
            out.push_str(&s.id);
            out.push('\t');
            out.push_str(word);
            out.push('\t');
            out.push_str(tag.as_str());
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// `I-x` without a preceding `B-x` or `I-x`.
    OrphanInside,
    /// `E-x` without a preceding `B-x` or `I-x`.
    OrphanEnd,
    /// Category is not a plain identifier.
    TagGrammar,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::OrphanInside => "inside tag without a matching begin/inside predecessor",
            Rule::OrphanEnd => "end tag without a matching begin/inside predecessor",
            Rule::TagGrammar => "tag category is not alphanumeric",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub sentence_id: String,
    pub position: usize,
    pub tag: String,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the B/I/E tagging conventions. Violations are reported, never fatal.
pub fn validate(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();
    for s in corpus.sentences() {
        let mut prev: Option<&Tag> = None;
        for (position, tag) in s.tags().enumerate() {
            let mut flag = |rule| {
                report.violations.push(Violation {
                    sentence_id: s.id.clone(),
                    position,
                    tag: tag.raw.clone(),
                    rule,
                })
            };
            if !tag.is_outside()
                && !tag.category.chars().all(|c| c.is_alphanumeric() || c == '_')
            {
                flag(Rule::TagGrammar);
            }
            let continues = prev.is_some_and(|p| {
                matches!(p.prefix, Prefix::B | Prefix::I) && p.category == tag.category
            });
            match tag.prefix {
                Prefix::I if !continues => flag(Rule::OrphanInside),
                Prefix::E if !continues => flag(Rule::OrphanEnd),
                _ => {}
            }
            prev = Some(tag);
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub n_sentences: usize,
    pub n_tokens: usize,
    pub n_unique_tags: usize,
    pub tag_counts: BTreeMap<String, usize>,
}

pub fn stats(corpus: &Corpus) -> CorpusStats {
    let mut tag_counts: BTreeMap<String, usize> = BTreeMap::new();
    for tag in corpus.sentences().iter().flat_map(|s| s.tags()) {
        *tag_counts.entry(tag.raw.clone()).or_default() += 1;
    }
    CorpusStats {
        n_sentences: corpus.len(),
        n_tokens: corpus.n_tokens(),
        n_unique_tags: tag_counts.len(),
        tag_counts,
    }
}

/// Subset sizes for `n` items: floors for the first two, remainder to the third.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize), CorpusError> {
    let (a, b, c) = ratios;
    let valid = [a, b, c].iter().all(|r| r.is_finite() && *r >= 0.0)
        && (a + b + c - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(CorpusError::BadRatios(ratios));
    }
    // 0.7 * 30 evaluates to 20.999999999999996; nudge before flooring
    let floor = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let train = floor(a).min(n);
    let val = floor(b).min(n - train);
    Ok((train, val, n - train - val))
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.70, 0.15, 0.15);

/// Seeded shuffle followed by a train/validation/test cut.
pub fn split(
    corpus: &Corpus,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let (n_train, n_val, _) = split_sizes(corpus.len(), ratios)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| {
        Corpus::with_scheme(
            idx.iter().map(|&i| corpus.sentences[i].clone()).collect(),
            corpus.scheme.clone(),
        )
    };
    Ok((
        take(&order[..n_train])?,
        take(&order[n_train..n_train + n_val])?,
        take(&order[n_train + n_val..])?,
    ))
}

/// Projects word tags onto pieces: the first piece of each word carries the
/// word's tag id, continuation pieces carry [`IGNORE`].
pub fn align_labels(
    sentence: &AnnotatedSentence,
    enc: &Encoding,
    scheme: &TagScheme,
) -> Result<Vec<usize>, CorpusError> {
    let mismatch = || CorpusError::AlignmentMismatch {
        words: sentence.len(),
        pieces_words: enc.n_words(),
    };
    if enc.n_words() != sentence.len() {
        return Err(mismatch());
    }
    let mut labels = Vec::with_capacity(enc.len());
    let mut next_word = 0;
    for &w in &enc.word_index {
        if w == next_word {
            let tag = &sentence.tokens[w].1;
            labels.push(scheme.id(tag).ok_or_else(|| CorpusError::UnknownTag(tag.raw.clone()))?);
            next_word += 1;
        } else if w + 1 == next_word {
            labels.push(IGNORE);
        } else {
            return Err(mismatch());
        }
    }
    Ok(labels)
}
