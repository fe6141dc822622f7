//! Caption → reference-label extraction.
//!
//! The pipeline lowercases the caption, drops a fixed list of noise words,
//! keeps only letters and a handful of punctuation characters (dropping any
//! word that contains a digit), then keeps the words found in a noun lexicon
//! after rule-based lemmatization.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::records::{self, CaptionRecord, ReferenceLabelSet};
use crate::{Error, Result};

/// High-frequency caption words that carry no object content.
pub const NOISE_WORDS: [&str; 11] = [
    "person",
    "persons",
    "stock",
    "image",
    "images",
    "background",
    "ounce",
    "illustration",
    "front",
    "photography",
    "day",
];

const KEPT_PUNCT: &str = ".,&-";

static SHIPPED_LEXICON: &str = include_str!("../data/nouns.txt");

fn is_noise(word: &str) -> bool {
    NOISE_WORDS.contains(&word)
}

fn trim_punct(word: &str) -> &str {
    word.trim_matches(|c| KEPT_PUNCT.contains(c))
}

/// Lowercase, drop noise words and words containing digits, and strip every
/// character other than `a-z`, space, `.`, `,`, `&` and `-`.
///
/// Words are whitespace-separated; the output is re-joined with single
/// spaces, so `clean_caption` is idempotent.
pub fn clean_caption(caption: &str) -> String {
    let mut kept: Vec<String> = Vec::new();
    for raw in caption.split_whitespace() {
        let lower = raw.to_lowercase();
        if lower.chars().any(char::is_numeric) {
            continue;
        }
        let filtered: String = lower
            .chars()
            .filter(|c| c.is_ascii_lowercase() || KEPT_PUNCT.contains(*c))
            .collect();
        if filtered.is_empty() || is_noise(trim_punct(&filtered)) {
            continue;
        }
        kept.push(filtered);
    }
    kept.join(" ")
}

/// Set of known singular nouns.
#[derive(Debug, Clone, Default)]
pub struct NounLexicon {
    words: HashSet<String>,
}

impl NounLexicon {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        NounLexicon { words }
    }

    /// One noun per line.
    pub fn parse(text: &str) -> Self {
        Self::from_words(text.lines())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("noun lexicon {}: {e}", path.display())))?;
        let lex = Self::parse(&text);
        if lex.is_empty() {
            return Err(Error::Config(format!(
                "noun lexicon {} is empty",
                path.display()
            )));
        }
        Ok(lex)
    }

    /// The lexicon bundled with the crate (common nouns plus the synthetic
    /// label vocabulary).
    pub fn shipped() -> Self {
        Self::parse(SHIPPED_LEXICON)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words in sorted order.
    pub fn sorted(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.words.iter().map(String::as_str).collect();
        v.sort_unstable();
        v
    }

    /// Reduce a plural to its lexicon root.
    ///
    /// A word already in the lexicon is its own root. Otherwise the suffix
    /// rules `ses→s`, `ies→y`, `es→∅`, `s→∅` are tried in order and the first
    /// one producing a lexicon word wins; if none does the word is returned
    /// unchanged. Every output is either a lexicon word or an unchanged
    /// non-lexicon word, so the map is a fixpoint after one application.
    pub fn lemmatize<'a>(&self, word: &'a str) -> std::borrow::Cow<'a, str> {
        use std::borrow::Cow;
        if self.contains(word) {
            return Cow::Borrowed(word);
        }
        const RULES: [(&str, &str); 4] = [("ses", "s"), ("ies", "y"), ("es", ""), ("s", "")];
        for (suffix, replacement) in RULES {
            if let Some(stem) = word.strip_suffix(suffix) {
                if stem.is_empty() {
                    continue;
                }
                let candidate = format!("{stem}{replacement}");
                if self.contains(&candidate) {
                    return Cow::Owned(candidate);
                }
            }
        }
        Cow::Borrowed(word)
    }
}

/// Nouns of a cleaned caption, lemmatized, in order of first occurrence.
///
/// Words split on whitespace and commas; leading/trailing `.&-` are trimmed,
/// internal hyphens are kept (`t-shirt` is one word).
pub fn extract_nouns(cleaned: &str, lexicon: &NounLexicon) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for word in cleaned.split(|c: char| c.is_whitespace() || c == ',') {
        let word = trim_punct(word);
        if word.is_empty() {
            continue;
        }
        let lemma = lexicon.lemmatize(word);
        if lexicon.contains(&lemma) && !out.iter().any(|w| *w == lemma) {
            out.push(lemma.into_owned());
        }
    }
    out
}

pub fn caption_to_labels(record: &CaptionRecord, lexicon: &NounLexicon) -> ReferenceLabelSet {
    ReferenceLabelSet {
        image_id: record.image_id.clone(),
        labels: extract_nouns(&clean_caption(&record.caption), lexicon),
    }
}

/// Counts reported after a preprocessing run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetSummary {
    pub records: usize,
    pub distinct_nouns: usize,
    pub empty: usize,
    pub skipped: usize,
}

impl fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "records={} distinct_nouns={} empty={} skipped={}",
            self.records, self.distinct_nouns, self.empty, self.skipped
        )
    }
}

/// Convert caption text (one JSON record per line) to label sets.
/// Malformed lines and records with an empty `image_id` are skipped and
/// counted. Output order follows input order.
pub fn build_label_sets(
    captions_text: &str,
    lexicon: &NounLexicon,
) -> (Vec<ReferenceLabelSet>, DatasetSummary) {
    let (parsed, bad) = records::parse_lines::<CaptionRecord>(captions_text);
    let mut skipped = bad.len();
    let valid: Vec<CaptionRecord> = parsed
        .into_iter()
        .filter(|r| {
            let ok = !r.image_id.is_empty();
            if !ok {
                skipped += 1;
            }
            ok
        })
        .collect();
    let sets: Vec<ReferenceLabelSet> = valid
        .par_iter()
        .map(|r| caption_to_labels(r, lexicon))
        .collect();
    let distinct: HashSet<&str> = sets
        .iter()
        .flat_map(|s| s.labels.iter().map(String::as_str))
        .collect();
    let summary = DatasetSummary {
        records: sets.len(),
        distinct_nouns: distinct.len(),
        empty: sets.iter().filter(|s| s.labels.is_empty()).count(),
        skipped,
    };
    (sets, summary)
}

pub fn build_dataset(
    captions_path: &Path,
    lexicon: &NounLexicon,
    out_path: &Path,
) -> Result<DatasetSummary> {
    let text = fs::read_to_string(captions_path).map_err(|e| Error::io(captions_path, e))?;
    let (sets, summary) = build_label_sets(&text, lexicon);
    records::write_jsonl(out_path, &sets)?;
    Ok(summary)
}
