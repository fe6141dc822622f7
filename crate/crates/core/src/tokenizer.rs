//! Toy merge-based tokenizer.
//!
//! The vocabulary is a base character set, the two specials `[IMG]` and
//! `[SEP]` (the comma), and a list of merged strings learned greedily from a
//! label corpus. Encoding is greedy longest-match over the token strings, so
//! `decode(encode(x)) == x` for any text over the character set.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::records::write_atomic;
use crate::{Error, Result, TokenId};

pub const IMG_STR: &str = "[IMG]";
pub const SEP_STR: &str = ",";
const IMG_SENTINEL: &str = "<IMG>";
const SEP_SENTINEL: &str = "<SEP>";

/// Characters every vocabulary carries regardless of corpus: the alphabet
/// of cleaned captions.
pub const BASE_ALPHABET: &str = "abcdefghijklmnopqrstuvwxyz .&-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    img_id: TokenId,
    sep_id: TokenId,
    /// Text tokens only; the specials are never produced by encoding.
    text_lookup: HashMap<String, TokenId>,
    max_token_chars: usize,
}

impl Vocab {
    /// Assemble a vocabulary from explicit characters and merged strings.
    /// Ids: sorted characters, `[IMG]`, `[SEP]`, then merges in order.
    /// Merges that repeat an existing token are skipped.
    pub fn from_parts<C, M, S>(extra_chars: C, merges: M) -> Self
    where
        C: IntoIterator<Item = char>,
        M: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut chars: Vec<char> = BASE_ALPHABET.chars().chain(extra_chars).collect();
        chars.retain(|&c| c != ',');
        chars.sort_unstable();
        chars.dedup();
        let mut tokens: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        let img_id = tokens.len() as TokenId;
        tokens.push(IMG_STR.to_string());
        let sep_id = tokens.len() as TokenId;
        tokens.push(SEP_STR.to_string());
        for m in merges {
            let m = m.as_ref();
            if !m.is_empty() && !tokens.iter().any(|t| t == m) {
                tokens.push(m.to_string());
            }
        }
        Self::from_tokens(tokens, img_id, sep_id)
    }

    fn from_tokens(tokens: Vec<String>, img_id: TokenId, sep_id: TokenId) -> Self {
        let text_lookup: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| *i as TokenId != img_id && *i as TokenId != sep_id)
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        let max_token_chars = text_lookup.keys().map(|t| t.chars().count()).max().unwrap_or(1);
        Vocab {
            tokens,
            img_id,
            sep_id,
            text_lookup,
            max_token_chars,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn img_id(&self) -> TokenId {
        self.img_id
    }

    pub fn sep_id(&self) -> TokenId {
        self.sep_id
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        id == self.img_id || id == self.sep_id
    }

    pub fn token_str(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::InvalidTokenId {
                id,
                vocab_size: self.len(),
            })
    }

    /// Id of a text token (specials are not looked up here).
    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.text_lookup.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn encode_text(&self, text: &str) -> Result<Vec<TokenId>> {
        let chars: Vec<char> = text.chars().collect();
        let mut out = Vec::new();
        let mut i = 0;
        let mut buf = String::new();
        while i < chars.len() {
            let longest = self.max_token_chars.min(chars.len() - i);
            let mut matched = None;
            for len in (1..=longest).rev() {
                buf.clear();
                buf.extend(&chars[i..i + len]);
                if let Some(&id) = self.text_lookup.get(buf.as_str()) {
                    matched = Some((id, len));
                    break;
                }
            }
            let (id, len) = matched.ok_or(Error::UnknownChar(chars[i]))?;
            out.push(id);
            i += len;
        }
        Ok(out)
    }

    /// Token ids of one label, without the trailing `[SEP]`.
    pub fn encode_label(&self, label: &str) -> Result<Vec<TokenId>> {
        self.encode_text(label)
    }

    /// Token ids of a prompt. Same segmentation as labels.
    pub fn encode_prompt(&self, prompt: &str) -> Result<Vec<TokenId>> {
        self.encode_text(prompt)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            s.push_str(self.token_str(id)?);
        }
        Ok(s)
    }

    /// `V=<count>` then one escaped token per line, specials as sentinels.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("V={}\n", self.len());
        for (i, t) in self.tokens.iter().enumerate() {
            let id = i as TokenId;
            if id == self.img_id {
                out.push_str(IMG_SENTINEL);
            } else if id == self.sep_id {
                out.push_str(SEP_SENTINEL);
            } else {
                for c in t.chars() {
                    match c {
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c => out.push(c),
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let header = lines
            .next()
            .ok_or_else(|| Error::VocabFormat("empty file".into()))?;
        let count: usize = header
            .strip_prefix("V=")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::VocabFormat(format!("bad header {header:?}")))?;
        let mut tokens = Vec::with_capacity(count);
        let mut img = None;
        let mut sep = None;
        for line in lines.take(count) {
            let id = tokens.len() as TokenId;
            if line == IMG_SENTINEL {
                if img.replace(id).is_some() {
                    return Err(Error::VocabFormat("duplicate <IMG>".into()));
                }
                tokens.push(IMG_STR.to_string());
                continue;
            }
            if line == SEP_SENTINEL {
                if sep.replace(id).is_some() {
                    return Err(Error::VocabFormat("duplicate <SEP>".into()));
                }
                tokens.push(SEP_STR.to_string());
                continue;
            }
            let mut tok = String::new();
            let mut chars = line.chars();
            while let Some(c) = chars.next() {
                if c == '\\' {
                    match chars.next() {
                        Some('\\') => tok.push('\\'),
                        Some('n') => tok.push('\n'),
                        other => {
                            return Err(Error::VocabFormat(format!("bad escape \\{other:?}")))
                        }
                    }
                } else {
                    tok.push(c);
                }
            }
            tokens.push(tok);
        }
        if tokens.len() != count {
            return Err(Error::VocabFormat(format!(
                "header says {count} tokens, found {}",
                tokens.len()
            )));
        }
        let (img, sep) = match (img, sep) {
            (Some(i), Some(s)) => (i, s),
            _ => return Err(Error::VocabFormat("missing <IMG> or <SEP>".into())),
        };
        let vocab = Self::from_tokens(tokens, img, sep);
        if vocab.text_lookup.len() + 2 != vocab.len() {
            return Err(Error::VocabFormat("duplicate token strings".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Learn a vocabulary from a corpus of strings.
///
/// Each round merges the most frequent adjacent symbol pair across the
/// corpus (ties: lexicographically smallest merged string), until
/// `max_merges` new tokens exist or no pair occurs at least twice.
/// Commas act as word boundaries.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], max_merges: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    // word -> frequency, ordered for determinism
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for entry in corpus {
        for word in entry.as_ref().split(',') {
            if !word.is_empty() {
                *freq.entry(word).or_default() += 1;
            }
        }
    }
    let corpus_chars: Vec<char> = freq.keys().flat_map(|w| w.chars()).collect();
    let mut words: Vec<(Vec<String>, usize)> = freq
        .iter()
        .map(|(w, &n)| (w.chars().map(|c| c.to_string()).collect(), n))
        .collect();

    let mut vocab = Vocab::from_parts(corpus_chars.iter().copied(), std::iter::empty::<&str>());
    let mut merges: Vec<String> = Vec::new();
    while merges.len() < max_merges {
        let mut pairs: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, n) in &words {
            for w in syms.windows(2) {
                *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
            }
        }
        let best = pairs
            .into_iter()
            .filter(|&(_, n)| n >= 2)
            .map(|((l, r), n)| (n, format!("{l}{r}"), l.to_string(), r.to_string()))
            .min_by(|a, b| {
                b.0.cmp(&a.0)
                    .then_with(|| a.1.cmp(&b.1))
                    .then_with(|| a.2.cmp(&b.2))
            });
        let Some((_, merged, left, right)) = best else {
            break;
        };
        for (syms, _) in &mut words {
            let mut out: Vec<String> = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == left && syms[i + 1] == right {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = out;
        }
        let exists = vocab.id_of(&merged).is_some() || merged == IMG_STR;
        if !exists {
            merges.push(merged);
            vocab = Vocab::from_parts(corpus_chars.iter().copied(), &merges);
        }
    }
    Ok(vocab)
}
