//! Seeded generator for Sorani-style annotated sentences.
//!
//! Every word always carries the same tag, so a model with enough capacity
//! can fit the data perfectly. Used for fixtures, overfit checks and the
//! benchmark smoke runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{AnnotatedSentence, Corpus, Tag};

const FIRST_NAMES: &[&str] = &["تارا", "ئاراس", "هێمن", "شیرین", "دلێر", "ڕێباز", "نەسرین", "کاروان", "ژیلا", "سۆران"];
const SURNAMES: &[&str] = &["ئەحمەد", "کەریم", "عەزیز", "ڕەشید", "حەمە"];
const PLACES: &[&str] = &["هەولێر", "سلێمانی", "کۆیە", "دهۆک", "کەرکووک", "هەڵەبجە", "ڕانیە"];
const ORG_HEADS: &[&str] = &["زانکۆی", "ڕێکخراوی", "کۆمپانیای"];
const ORG_TAILS: &[&str] = &["سەلاحەددین", "ئاسیا", "کوردستان"];
const ANIMALS: &[&str] = &["مشک", "پشیلە", "سەگ", "ئەسپ", "مەڕ"];
const MONTHS: &[&str] = &["نیسان", "ئایار", "حوزەیران", "تەمموز"];
const NUMBERS: &[&str] = &["6700", "12", "1500", "300", "45"];
const FILLER: &[&str] = &[
    "لە", "بۆ", "کتێبەکەی", "چاپ", "کرد", "هات", "ڕۆیشت", "دەترسێت", "گەورەیە", "جوانە", "نووسی",
    "بینی", "ئەمڕۆ", "دوێنێ", "و", "ماڵەوە", "قوتابخانە", "فەرمانبەر", "تۆمارکراوە", "شار", "زۆر",
    "کەمێک", "نزیک", "لەگەڵ", "دەچێت",
];

fn tag(raw: &str) -> Tag {
    raw.parse().expect("static tag is valid")
}

/// Generates `n` sentences of 3 to 9 words, roughly a third of them entity words.
pub fn sentences(n: usize, seed: u64) -> Vec<AnnotatedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let target = rng.random_range(3..=9);
            let mut tokens: Vec<(String, Tag)> = Vec::with_capacity(target + 2);
            while tokens.len() < target {
                let pick = |rng: &mut ChaCha8Rng, list: &[&str]| list.choose(rng).unwrap().to_string();
                match rng.random_range(0..12) {
                    0 => {
                        tokens.push((pick(&mut rng, FIRST_NAMES), tag("B-per")));
                        if rng.random_bool(0.4) {
                            tokens.push((pick(&mut rng, SURNAMES), tag("I-per")));
                        }
                    }
                    1 => tokens.push((pick(&mut rng, PLACES), tag("B-gpe"))),
                    2 => {
                        tokens.push((pick(&mut rng, ORG_HEADS), tag("B-org")));
                        tokens.push((pick(&mut rng, ORG_TAILS), tag("I-org")));
                    }
                    3 => tokens.push((pick(&mut rng, ANIMALS), tag("B-ani"))),
                    4 if rng.random_bool(0.5) => tokens.push((pick(&mut rng, MONTHS), tag("B-dat"))),
                    4 => tokens.push((pick(&mut rng, NUMBERS), tag("B-num"))),
                    _ => tokens.push((pick(&mut rng, FILLER), Tag::outside())),
                }
            }
            tokens.push((".".to_string(), Tag::outside()));
            AnnotatedSentence { id: format!("s{:05}", i + 1), tokens }
        })
        .collect()
}

pub fn corpus(n: usize, seed: u64) -> Corpus {
    Corpus::new(sentences(n, seed)).expect("generated sentences are well formed")
}
