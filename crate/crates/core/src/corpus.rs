//! From extracted methods to a filtered, split and persisted dataset of
//! ⟨method, comment⟩ pairs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modalities::{self, GraphRep};
use crate::solc::{self, AstNode, FrontError, MethodKind, MethodRecord, TokenKind};

pub const MIN_COMMENT_WORDS: usize = 4;
pub const MAX_COMMENT_TOKENS: usize = 20;
pub const MIN_SPLIT_POOL: usize = 10;

/// Length caps applied while building a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_sbt: usize,
    pub max_nodes: usize,
    pub max_code: usize,
    pub max_comment: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_sbt: modalities::MAX_SBT,
            max_nodes: modalities::MAX_NODES,
            max_code: modalities::MAX_CODE,
            max_comment: MAX_COMMENT_TOKENS,
        }
    }
}

/// A Solidity file admitted to the corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceUnit {
    pub path: String,
    pub raw: String,
    pub pragma: Option<String>,
}

impl SourceUnit {
    pub fn new(path: impl Into<String>, raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let pragma = raw.lines().find_map(|l| {
            let l = l.trim();
            l.strip_prefix("pragma ")
                .map(|p| p.trim_end_matches(';').trim().to_string())
        });
        Self { path: path.into(), raw, pragma }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        Ok(Self::new(path.display().to_string(), fs::read_to_string(path)?))
    }
}

/// `.sol` files under `dir`, recursively, in sorted path order. Unit paths
/// are relative to `dir` (a single file keeps its given path).
pub fn discover_sources(dir: &Path) -> io::Result<Vec<SourceUnit>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "sol") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    if dir.is_file() {
        paths.push(dir.to_path_buf());
    } else {
        walk(dir, &mut paths)?;
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).ok().filter(|r| !r.as_os_str().is_empty());
            let name = rel.unwrap_or(p.as_path());
            Ok(SourceUnit::new(name.display().to_string(), fs::read_to_string(p)?))
        })
        .collect()
}

/// NatSpec-tagged text plus plain `//` / `/* */` comment text.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CommentDoc {
    pub tagged: BTreeMap<String, String>,
    pub plain: String,
}

fn strip_block(body: &str) -> Vec<String> {
    body.lines()
        .map(|l| {
            let l = l.trim();
            l.strip_prefix('*').unwrap_or(l).trim().to_string()
        })
        .collect()
}

impl CommentDoc {
    /// Parses a raw comment block as attached by `extract_methods`.
    /// Untagged text in a NatSpec comment counts as `@notice`.
    pub fn parse(raw: &str) -> Self {
        let mut doc = CommentDoc::default();
        let Ok(tokens) = solc::tokenize(raw) else {
            doc.plain = raw.trim().to_string();
            return doc;
        };
        let mut plain_lines = Vec::new();
        let mut tag = "@notice".to_string();
        for t in tokens.iter().filter(|t| t.kind.is_comment()) {
            let lex = t.lexeme.as_str();
            let lines = match t.kind {
                TokenKind::DocComment if lex.starts_with("///") => vec![lex[3..].trim().to_string()],
                TokenKind::DocComment => strip_block(&lex[3..lex.len() - 2]),
                TokenKind::LineComment => vec![lex[2..].trim().to_string()],
                _ => strip_block(&lex[2..lex.len() - 2]),
            };
            if t.kind != TokenKind::DocComment {
                plain_lines.extend(lines.into_iter().filter(|l| !l.is_empty()));
                continue;
            }
            if lex.starts_with("/**") {
                tag = "@notice".to_string();
            }
            for line in lines.into_iter().filter(|l| !l.is_empty()) {
                let text = if line.starts_with('@') {
                    let (t, rest) = line.split_once(char::is_whitespace).unwrap_or((&line, ""));
                    tag = t.to_string();
                    rest.trim().to_string()
                } else {
                    line
                };
                if text.is_empty() {
                    continue;
                }
                let entry = doc.tagged.entry(tag.clone()).or_default();
                if !entry.is_empty() {
                    entry.push('\n');
                }
                entry.push_str(&text);
            }
        }
        doc.plain = plain_lines.join("\n");
        doc
    }

    pub fn is_empty(&self) -> bool {
        self.plain.is_empty() && self.tagged.values().all(String::is_empty)
    }
}

/// Highest-priority text: `@notice`, `@dev`, `@return`, then plain comments.
pub fn select_comment(doc: &CommentDoc) -> Option<String> {
    ["@notice", "@dev", "@return"]
        .iter()
        .filter_map(|t| doc.tagged.get(*t))
        .chain(std::iter::once(&doc.plain))
        .find(|s| !s.trim().is_empty())
        .cloned()
}

/// Prefix up to the first `.`, `!` or `?` followed by whitespace or the end,
/// or up to the first newline; trimmed.
pub fn first_sentence(text: &str) -> String {
    let text = text.trim();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c == '\n' {
            return text[..i].trim().to_string();
        }
        if matches!(c, '.' | '!' | '?') {
            let boundary = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            if boundary {
                return text[..i + c.len_utf8()].trim().to_string();
            }
        }
    }
    text.to_string()
}

/// Lowercased whitespace-separated words with surrounding punctuation removed.
pub fn comment_tokens(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    /// Literal-normalized method AST.
    pub method_ast: AstNode,
    pub code_tokens: Vec<String>,
    pub comment_tokens: Vec<String>,
    pub contract_id: String,
    pub method_name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Kind,
    NoComment,
    TooShort,
    TooLong,
}

/// Either a training pair or the reason the record is filtered out.
pub fn classify(record: &MethodRecord) -> Result<PairSample, DropReason> {
    classify_with(record, MAX_COMMENT_TOKENS)
}

pub fn classify_with(record: &MethodRecord, max_comment: usize) -> Result<PairSample, DropReason> {
    if !record.kind.is_summarizable() {
        return Err(DropReason::Kind);
    }
    let doc = record.doc.as_deref().map(CommentDoc::parse).unwrap_or_default();
    let text = select_comment(&doc).ok_or(DropReason::NoComment)?;
    let words = comment_tokens(&first_sentence(&text));
    if words.len() < MIN_COMMENT_WORDS {
        return Err(DropReason::TooShort);
    }
    if words.len() > max_comment {
        return Err(DropReason::TooLong);
    }
    Ok(PairSample {
        method_ast: modalities::normalize_literals(&record.ast),
        code_tokens: modalities::code_tokens(&record.tokens),
        comment_tokens: words,
        contract_id: record.contract.clone(),
        method_name: record.name.clone(),
    })
}

pub fn make_pair(record: &MethodRecord) -> Option<PairSample> {
    classify(record).ok()
}

/// Outcome of turning source files into pairs.
#[derive(Debug, Default)]
pub struct CorpusBuild {
    pub pairs: Vec<PairSample>,
    pub methods: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    /// Files that failed to lex or parse, with the error.
    pub rejected: Vec<(String, FrontError)>,
}

/// Parses files in parallel and collects pairs in file order. The pair's
/// `contract_id` is `path::Contract`.
pub fn build_pairs(units: &[SourceUnit]) -> CorpusBuild {
    build_pairs_with(units, MAX_COMMENT_TOKENS)
}

pub fn build_pairs_with(units: &[SourceUnit], max_comment: usize) -> CorpusBuild {
    let per_file: Vec<_> = units
        .par_iter()
        .map(|u| {
            let methods = solc::parse_source(&u.raw).and_then(|ast| {
                solc::extract_methods(&ast, &u.raw).map_err(FrontError::from)
            })?;
            let outcomes: Vec<_> = methods
                .iter()
                .map(|m| {
                    classify_with(m, max_comment).map(|mut p| {
                        p.contract_id = format!("{}::{}", u.path, m.contract);
                        p
                    })
                })
                .collect();
            Ok::<_, FrontError>(outcomes)
        })
        .collect();
    let mut build = CorpusBuild::default();
    for (u, res) in units.iter().zip(per_file) {
        match res {
            Ok(outcomes) => {
                build.methods += outcomes.len();
                for o in outcomes {
                    match o {
                        Ok(p) => build.pairs.push(p),
                        Err(r) => *build.dropped.entry(r).or_default() += 1,
                    }
                }
            }
            Err(e) => build.rejected.push((u.path.clone(), e)),
        }
    }
    build
}

/// Persisted form of a pair with both AST modalities filled in.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    #[serde(default)]
    pub sbt: Vec<String>,
    #[serde(default)]
    pub nodes: Vec<String>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub code: Vec<String>,
    pub comment: Vec<String>,
    pub contract_id: String,
    pub method_name: String,
}

impl Record {
    pub fn from_pair(p: &PairSample) -> Self {
        Self::from_pair_with(p, &Limits::default())
    }

    pub fn from_pair_with(p: &PairSample, limits: &Limits) -> Self {
        let g = modalities::graph_extract_capped(&p.method_ast, limits.max_nodes);
        Self {
            sbt: modalities::sbt_serialize_capped(&p.method_ast, limits.max_sbt),
            edges: g.edges(),
            nodes: g.node_labels,
            code: modalities::truncate(p.code_tokens.clone(), limits.max_code),
            comment: p.comment_tokens.clone(),
            contract_id: p.contract_id.clone(),
            method_name: p.method_name.clone(),
        }
    }

    /// Node sequence with Ã (self-loops restored).
    pub fn graph(&self) -> GraphRep {
        GraphRep::from_edges(self.nodes.clone(), &self.edges).expect("validated edges")
    }

    fn check(&self) -> Result<(), String> {
        let n = self.nodes.len();
        if let Some(&(i, j)) = self.edges.iter().find(|&&(i, j)| i >= j || j >= n) {
            return Err(format!("edge ({i}, {j}) must satisfy i < j < {n}"));
        }
        if self.comment.is_empty() {
            return Err("`comment` is empty".into());
        }
        Ok(())
    }
}

/// Anything that can be split with train-overlap removal.
pub trait DedupKey {
    fn dedup_key(&self) -> (&[String], &[String]);
}

impl DedupKey for PairSample {
    fn dedup_key(&self) -> (&[String], &[String]) {
        (&self.code_tokens, &self.comment_tokens)
    }
}

impl DedupKey for Record {
    fn dedup_key(&self) -> (&[String], &[String]) {
        (&self.code, &self.comment)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

impl<T> DatasetSplit<T> {
    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> DatasetSplit<U> {
        DatasetSplit {
            train: self.train.iter().map(&f).collect(),
            validation: self.validation.iter().map(&f).collect(),
            test: self.test.iter().map(&f).collect(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("need at least {MIN_SPLIT_POOL} pairs to split, got {0}")]
pub struct SplitError(pub usize);

/// Partition sizes before deduplication: 90% / 5% / 5%, with the odd
/// remainder going to test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 9 / 10;
    let valid = (n - train) / 2;
    (train, valid, n - train - valid)
}

/// Seeded shuffle, 90/5/5 partition, then removal of validation and test
/// samples whose (code, comment) key occurs in training.
pub fn split_dataset<T: DedupKey + Clone>(pairs: &[T], seed: u64) -> Result<DatasetSplit<T>, SplitError> {
    if pairs.len() < MIN_SPLIT_POOL {
        return Err(SplitError(pairs.len()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_valid, _) = split_sizes(pairs.len());
    let take = |idx: &[usize]| idx.iter().map(|&i| pairs[i].clone()).collect::<Vec<_>>();
    let train = take(&order[..n_train]);
    let seen: HashSet<_> = train.iter().map(DedupKey::dedup_key).collect();
    let fresh = |idx: &[usize]| {
        idx.iter()
            .map(|&i| &pairs[i])
            .filter(|p| !seen.contains(&p.dedup_key()))
            .cloned()
            .collect::<Vec<_>>()
    };
    let validation = fresh(&order[n_train..n_train + n_valid]);
    let test = fresh(&order[n_train + n_valid..]);
    Ok(DatasetSplit { train, validation, test, seed })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub max_sbt: usize,
    pub max_nodes: usize,
    pub max_code: usize,
    pub max_comment: usize,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Schema { path: PathBuf, line: usize, message: String },
}

const SPLIT_FILES: [&str; 3] = ["train.jsonl", "valid.jsonl", "test.jsonl"];

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

pub fn write_dataset(split: &DatasetSplit<Record>, dir: &Path) -> Result<(), DatasetError> {
    write_dataset_with(split, dir, &Limits::default())
}

pub fn write_dataset_with(split: &DatasetSplit<Record>, dir: &Path, limits: &Limits) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, records) in SPLIT_FILES.iter().zip([&split.train, &split.validation, &split.test]) {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        for r in records {
            let line = serde_json::to_string(r).expect("records serialize");
            writeln!(w, "{line}").map_err(io_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
    }
    let meta = DatasetMeta {
        seed: split.seed,
        train: split.train.len(),
        valid: split.validation.len(),
        test: split.test.len(),
        max_sbt: limits.max_sbt,
        max_nodes: limits.max_nodes,
        max_code: limits.max_code,
        max_comment: limits.max_comment,
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&meta).expect("meta serializes")).map_err(io_err(&path))
}

fn read_records(path: &Path) -> Result<Vec<Record>, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| DatasetError::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: Record = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        r.check().map_err(schema)?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta, DatasetError> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    serde_json::from_str(&meta_text).map_err(|e| DatasetError::Schema {
        path: meta_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn read_dataset(dir: &Path) -> Result<DatasetSplit<Record>, DatasetError> {
    let meta = read_meta(dir)?;
    let [train, validation, test] = SPLIT_FILES.map(|n| read_records(&dir.join(n)));
    let train = train?;
    if train.is_empty() {
        return Err(DatasetError::Schema {
            path: dir.join(SPLIT_FILES[0]),
            line: 0,
            message: "training split is empty".into(),
        });
    }
    Ok(DatasetSplit { train, validation: validation?, test: test?, seed: meta.seed })
}

/// Kind histogram, handy for corpus reports.
pub fn kind_counts(records: &[MethodRecord]) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        let k = match r.kind {
            MethodKind::Function => "function",
            MethodKind::Modifier => "modifier",
            MethodKind::Constructor => "constructor",
            MethodKind::Fallback => "fallback",
            MethodKind::Receive => "receive",
        };
        *out.entry(k.to_string()).or_default() += 1;
    }
    out
}
