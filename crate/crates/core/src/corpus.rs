//! Comment filtering, parent/child pair extraction and dataset loaders.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Comments at or above this many characters are dropped.
pub const MAX_COMMENT_CHARS: usize = 350;
/// Comments whose alphabetic share is at or below this percentage are dropped.
pub const MIN_ALPHA_PERCENT: usize = 70;
pub const BANNED_PREFIXES: [&str; 3] = ["https", "/r/", "@"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawComment {
    pub id: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub author: String,
    #[serde(default)]
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationPair {
    pub input_text: String,
    pub response_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooLong,
    LowAlpha,
    BadPrefix,
    BotAuthor,
}

impl RejectReason {
    pub const ALL: [RejectReason; 4] =
        [RejectReason::TooLong, RejectReason::LowAlpha, RejectReason::BadPrefix, RejectReason::BotAuthor];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::TooLong => "too_long",
            RejectReason::LowAlpha => "low_alpha",
            RejectReason::BadPrefix => "bad_prefix",
            RejectReason::BotAuthor => "bot_author",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Reject(RejectReason),
}

/// Applies the noise rules in order: length, alphabetic share, prefix, bot author.
/// Counts are Unicode scalar values; the alphabetic share is taken over all
/// of them, whitespace included.
pub fn filter_comment(c: &RawComment) -> FilterDecision {
    let chars = c.body.chars().count();
    if chars >= MAX_COMMENT_CHARS {
        return FilterDecision::Reject(RejectReason::TooLong);
    }
    let alpha = c.body.chars().filter(|ch| ch.is_alphabetic()).count();
    if chars == 0 || alpha * 100 <= MIN_ALPHA_PERCENT * chars {
        return FilterDecision::Reject(RejectReason::LowAlpha);
    }
    if BANNED_PREFIXES.iter().any(|p| c.body.starts_with(p)) {
        return FilterDecision::Reject(RejectReason::BadPrefix);
    }
    if c.author.to_lowercase().contains("bot") {
        return FilterDecision::Reject(RejectReason::BotAuthor);
    }
    FilterDecision::Keep
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExtractStats {
    pub comments: usize,
    pub malformed: usize,
    pub kept: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
    /// Surviving comments whose parent is absent from the stream.
    pub orphans: usize,
    pub pairs: usize,
}

/// Parses line-delimited JSON comments. Blank lines are ignored; lines that
/// fail to parse, have an empty id, or repeat an earlier id are counted as
/// malformed and skipped.
pub fn read_comments<R: BufRead>(reader: R) -> Result<(Vec<RawComment>, usize)> {
    let mut comments = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut malformed = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RawComment>(&line) {
            Ok(c) if !c.id.is_empty() && seen.insert(c.id.clone()) => comments.push(c),
            _ => malformed += 1,
        }
    }
    Ok((comments, malformed))
}

/// Emits one pair per parent/child edge whose endpoints both survive
/// [`filter_comment`], in the order the children appear. The whole stream is
/// indexed by id first, so parents may follow their children; memory is
/// linear in the number of comments.
pub fn extract_pairs(comments: &[RawComment]) -> (Vec<ConversationPair>, ExtractStats) {
    let mut stats = ExtractStats { comments: comments.len(), ..Default::default() };
    let mut survivors: HashMap<&str, &RawComment> = HashMap::new();
    let mut kept_flags = Vec::with_capacity(comments.len());
    for c in comments {
        match filter_comment(c) {
            FilterDecision::Keep => {
                stats.kept += 1;
                survivors.insert(c.id.as_str(), c);
                kept_flags.push(true);
            }
            FilterDecision::Reject(r) => {
                *stats.rejected.entry(r).or_default() += 1;
                kept_flags.push(false);
            }
        }
    }
    let all_ids: std::collections::HashSet<&str> = comments.iter().map(|c| c.id.as_str()).collect();
    let mut pairs = Vec::new();
    for (c, kept) in comments.iter().zip(kept_flags) {
        if !kept {
            continue;
        }
        let Some(pid) = c.parent_id.as_deref() else { continue };
        match survivors.get(pid) {
            Some(parent) => {
                pairs.push(ConversationPair { input_text: parent.body.clone(), response_text: c.body.clone() })
            }
            None if !all_ids.contains(pid) => stats.orphans += 1,
            None => {}
        }
    }
    stats.pairs = pairs.len();
    (pairs, stats)
}

/// Replaces every run of tabs and line breaks with a single space.
pub fn sanitize_field(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_run = false;
    for c in text.chars() {
        if matches!(c, '\t' | '\n' | '\r') {
            if !in_run {
                out.push(' ');
            }
            in_run = true;
        } else {
            out.push(c);
            in_run = false;
        }
    }
    out
}

pub fn write_pairs<W: Write>(mut w: W, pairs: &[ConversationPair]) -> Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}", sanitize_field(&p.input_text), sanitize_field(&p.response_text))?;
    }
    w.flush()?;
    Ok(())
}

/// Records that survived validation plus the number of skipped lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub dropped: usize,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let reader = open(path)?;
    reader.lines().collect::<std::io::Result<Vec<_>>>().map_err(|e| Error::io(path, e))
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Loaded<ConversationPair>> {
    let mut records = Vec::new();
    let mut dropped = 0;
    for line in read_lines(path.as_ref())? {
        if line.is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((a, b)) if !a.trim().is_empty() && !b.trim().is_empty() && !b.contains('\t') => {
                records.push(ConversationPair { input_text: a.to_string(), response_text: b.to_string() })
            }
            _ => dropped += 1,
        }
    }
    Ok(Loaded { records, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Neutral,
    Contradiction,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [NliLabel::Entailment, NliLabel::Neutral, NliLabel::Contradiction];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "entailment" => Some(NliLabel::Entailment),
            "neutral" => Some(NliLabel::Neutral),
            "contradiction" => Some(NliLabel::Contradiction),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NliExample {
    pub premise: String,
    pub hypothesis: String,
    pub label: NliLabel,
}

#[derive(Deserialize)]
struct NliLine {
    sentence1: String,
    sentence2: String,
    gold_label: String,
}

pub fn parse_nli_line(line: &str) -> Option<NliExample> {
    let raw: NliLine = serde_json::from_str(line).ok()?;
    Some(NliExample { label: NliLabel::parse(&raw.gold_label)?, premise: raw.sentence1, hypothesis: raw.sentence2 })
}

/// Loads line-delimited NLI records; labels outside the 3-way set are dropped.
pub fn load_nli(path: impl AsRef<Path>) -> Result<Loaded<NliExample>> {
    let mut records = Vec::new();
    let mut dropped = 0;
    for line in read_lines(path.as_ref())? {
        if line.trim().is_empty() {
            continue;
        }
        match parse_nli_line(&line) {
            Some(ex) => records.push(ex),
            None => dropped += 1,
        }
    }
    Ok(Loaded { records, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Captions,
    Forums,
    News,
}

impl Genre {
    pub const ALL: [Genre; 3] = [Genre::Captions, Genre::Forums, Genre::News];

    /// Accepts both `captions` and the distribution's `main-captions` spelling.
    pub fn parse(s: &str) -> Option<Self> {
        match s.strip_prefix("main-").unwrap_or(s) {
            "captions" => Some(Genre::Captions),
            "forums" | "forum" => Some(Genre::Forums),
            "news" => Some(Genre::News),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Genre::Captions => "captions",
            Genre::Forums => "forums",
            Genre::News => "news",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    /// Guesses the split from a file name such as `sts-dev.csv`.
    pub fn from_path(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_str()?.to_lowercase();
        if name.contains("train") {
            Some(Split::Train)
        } else if name.contains("dev") {
            Some(Split::Dev)
        } else if name.contains("test") {
            Some(Split::Test)
        } else {
            None
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StsExample {
    pub sentence1: String,
    pub sentence2: String,
    pub gold: f64,
    pub genre: Genre,
    pub split: Split,
}

pub fn parse_sts_line(line: &str, split: Split) -> Option<StsExample> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 7 {
        return None;
    }
    let genre = Genre::parse(cols[0].trim())?;
    let gold: f64 = cols[4].trim().parse().ok()?;
    if !(0.0..=5.0).contains(&gold) {
        return None;
    }
    Some(StsExample { sentence1: cols[5].to_string(), sentence2: cols[6].to_string(), gold, genre, split })
}

/// Loads an STS benchmark file (genre, file, year, id, score, sentence1, sentence2).
pub fn load_sts(path: impl AsRef<Path>, split: Split) -> Result<Loaded<StsExample>> {
    let mut records = Vec::new();
    let mut dropped = 0;
    for line in read_lines(path.as_ref())? {
        if line.trim().is_empty() {
            continue;
        }
        match parse_sts_line(&line, split) {
            Some(ex) => records.push(ex),
            None => dropped += 1,
        }
    }
    Ok(Loaded { records, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relevance {
    PerfectMatch,
    Relevant,
    Irrelevant,
}

impl Relevance {
    /// PerfectMatch and Relevant both count as good.
    pub fn is_good(self) -> bool {
        !matches!(self, Relevance::Irrelevant)
    }
}

pub const MAX_CQA_CANDIDATES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqaCandidate {
    pub text: String,
    pub relevance: Relevance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqaQuery {
    pub original: String,
    pub candidates: Vec<CqaCandidate>,
}

pub fn parse_cqa_line(line: &str) -> Option<CqaQuery> {
    let q: CqaQuery = serde_json::from_str(line).ok()?;
    if q.candidates.is_empty() || q.candidates.len() > MAX_CQA_CANDIDATES {
        return None;
    }
    Some(q)
}

pub fn load_cqa(path: impl AsRef<Path>) -> Result<Loaded<CqaQuery>> {
    let mut records = Vec::new();
    let mut dropped = 0;
    for line in read_lines(path.as_ref())? {
        if line.trim().is_empty() {
            continue;
        }
        match parse_cqa_line(&line) {
            Some(q) => records.push(q),
            None => dropped += 1,
        }
    }
    Ok(Loaded { records, dropped })
}
