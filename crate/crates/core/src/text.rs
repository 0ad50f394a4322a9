//! Tokenization, vocabulary induction and featurization.
//!
//! Tokenization is NFKC normalization, lowercasing, and splitting into runs
//! of alphanumeric characters; every other visible character becomes its own
//! token. `tests/fixtures/tokenizer.tsv` pins the behaviour.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const OOV: usize = 1;
const RESERVED: usize = 2;

/// Joins the two halves of a bigram in the vocabulary file (ASCII unit separator).
pub const BIGRAM_JOINER: char = '\u{1F}';
const VOCAB_HEADER: &str = "convsim-vocab";
const VOCAB_VERSION: &str = "v1";

pub type TokenSequence = Vec<String>;

/// Normalizes and tokenizes `text`. Deterministic; empty input gives no tokens.
pub fn normalize_tokenize(text: &str) -> TokenSequence {
    let normalized: String = text.nfkc().collect::<String>().to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in normalized.chars() {
        if c.is_alphanumeric() {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        if !(c.is_whitespace() || c.is_control()) {
            tokens.push(c.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Word and bigram id spaces. Ids 0 and 1 of both spaces are PAD and OOV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocabulary {
    words: Vec<String>,
    word_ids: HashMap<String, usize>,
    bigrams: Vec<(String, String)>,
    bigram_ids: HashMap<(String, String), usize>,
}

impl Vocabulary {
    fn from_entries(words: Vec<String>, bigrams: Vec<(String, String)>) -> Self {
        let word_ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i + RESERVED)).collect();
        let bigram_ids = bigrams.iter().enumerate().map(|(i, b)| (b.clone(), i + RESERVED)).collect();
        Self { words, word_ids, bigrams, bigram_ids }
    }

    /// Number of word ids, including the reserved ones.
    pub fn word_size(&self) -> usize {
        self.words.len() + RESERVED
    }

    /// Number of bigram ids, including the reserved ones.
    pub fn bigram_size(&self) -> usize {
        self.bigrams.len() + RESERVED
    }

    pub fn word_id(&self, token: &str) -> usize {
        self.word_ids.get(token).copied().unwrap_or(OOV)
    }

    pub fn bigram_id(&self, first: &str, second: &str) -> usize {
        self.bigram_ids.get(&(first.to_string(), second.to_string())).copied().unwrap_or(OOV)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        id.checked_sub(RESERVED).and_then(|i| self.words.get(i)).map(String::as_str)
    }

    pub fn bigram(&self, id: usize) -> Option<(&str, &str)> {
        id.checked_sub(RESERVED).and_then(|i| self.bigrams.get(i)).map(|(a, b)| (a.as_str(), b.as_str()))
    }

    /// Serializes to the versioned text format.
    pub fn to_text(&self) -> String {
        let mut out =
            format!("{VOCAB_HEADER}\t{VOCAB_VERSION}\twords={}\tbigrams={}\n", self.words.len(), self.bigrams.len());
        for (i, w) in self.words.iter().enumerate() {
            let _ = writeln!(out, "{w}\t{}", i + RESERVED);
        }
        for (i, (a, b)) in self.bigrams.iter().enumerate() {
            let _ = writeln!(out, "{a}{BIGRAM_JOINER}{b}\t{}", i + RESERVED);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty vocabulary file".into()))?;
        let fields: Vec<&str> = header.split('\t').collect();
        let (n_words, n_bigrams) = match fields.as_slice() {
            [VOCAB_HEADER, VOCAB_VERSION, w, b] => {
                let parse = |f: &str, key: &str| -> Result<usize> {
                    f.strip_prefix(key)
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| Error::Format(format!("bad vocabulary header field `{f}`")))
                };
                (parse(w, "words=")?, parse(b, "bigrams=")?)
            }
            [VOCAB_HEADER, v, ..] => return Err(Error::Format(format!("unsupported vocabulary version `{v}`"))),
            _ => return Err(Error::Format("missing vocabulary header".into())),
        };

        let mut entry = |expect_id: usize| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Format("vocabulary file truncated".into()))?;
            let (tok, id) =
                line.rsplit_once('\t').ok_or_else(|| Error::Format(format!("bad vocabulary line `{line}`")))?;
            let id: usize = id.parse().map_err(|_| Error::Format(format!("bad id in `{line}`")))?;
            if id != expect_id {
                return Err(Error::Format(format!("expected id {expect_id}, found {id}")));
            }
            Ok(tok.to_string())
        };

        let mut words = Vec::with_capacity(n_words);
        for i in 0..n_words {
            let tok = entry(i + RESERVED)?;
            if tok.contains(BIGRAM_JOINER) {
                return Err(Error::Format(format!("word entry `{tok}` contains the bigram joiner")));
            }
            words.push(tok);
        }
        let mut bigrams = Vec::with_capacity(n_bigrams);
        for i in 0..n_bigrams {
            let tok = entry(i + RESERVED)?;
            let (a, b) = tok
                .split_once(BIGRAM_JOINER)
                .ok_or_else(|| Error::Format(format!("bigram entry `{tok}` lacks a joiner")))?;
            bigrams.push((a.to_string(), b.to_string()));
        }
        let vocab = Self::from_entries(words, bigrams);
        if vocab.word_ids.len() != vocab.words.len() || vocab.bigram_ids.len() != vocab.bigrams.len() {
            return Err(Error::Format("duplicate vocabulary entries".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn ranked<K: Ord + Clone>(counts: HashMap<K, usize>, min_count: usize, max_size: usize) -> Vec<K> {
    let mut entries: Vec<(K, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    entries.sort_by(|(ka, ca), (kb, cb)| cb.cmp(ca).then_with(|| ka.cmp(kb)));
    entries.truncate(max_size);
    entries.into_iter().map(|(k, _)| k).collect()
}

/// Induces a vocabulary from token sequences. Words and bigrams are each
/// ranked by (frequency desc, token asc) and capped at `max_size` entries
/// excluding the reserved ids.
pub fn build_vocab<I, S>(corpus: I, min_count: usize, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[String]>,
{
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut words: HashMap<String, usize> = HashMap::new();
    let mut bigrams: HashMap<(String, String), usize> = HashMap::new();
    for seq in corpus {
        let seq = seq.as_ref();
        for t in seq {
            *words.entry(t.clone()).or_default() += 1;
        }
        for w in seq.windows(2) {
            *bigrams.entry((w[0].clone(), w[1].clone())).or_default() += 1;
        }
    }
    Ok(Vocabulary::from_entries(ranked(words, min_count, max_size), ranked(bigrams, min_count, max_size)))
}

/// Vocabulary ids for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureSequence {
    pub word_ids: Vec<usize>,
    /// Adjacent-pair ids; empty when bigrams are disabled.
    pub bigram_ids: Vec<usize>,
}

impl FeatureSequence {
    pub fn n_tokens(&self) -> usize {
        self.word_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_ids.is_empty()
    }
}

pub fn featurize(tokens: &[String], vocab: &Vocabulary, use_bigrams: bool) -> FeatureSequence {
    let word_ids = tokens.iter().map(|t| vocab.word_id(t)).collect();
    let bigram_ids =
        if use_bigrams { tokens.windows(2).map(|w| vocab.bigram_id(&w[0], &w[1])).collect() } else { Vec::new() };
    FeatureSequence { word_ids, bigram_ids }
}

/// `featurize(normalize_tokenize(text))`.
pub fn featurize_text(text: &str, vocab: &Vocabulary, use_bigrams: bool) -> FeatureSequence {
    featurize(&normalize_tokenize(text), vocab, use_bigrams)
}
