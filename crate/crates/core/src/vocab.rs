//! Per-channel vocabularies built from the training split.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Record;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const START: u32 = 2;
pub const END: u32 = 3;
pub const RESERVED: [&str; 4] = ["<PAD>", "<UNK>", "<START>", "<END>"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Sbt,
    Nodes,
    Code,
    Comment,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Sbt, Channel::Nodes, Channel::Code, Channel::Comment];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Sbt => "sbt",
            Channel::Nodes => "nodes",
            Channel::Code => "code",
            Channel::Comment => "comment",
        }
    }

    pub fn tokens(self, r: &Record) -> &[String] {
        match self {
            Channel::Sbt => &r.sbt,
            Channel::Nodes => &r.nodes,
            Channel::Code => &r.code,
            Channel::Comment => &r.comment,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Channel::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown channel `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty training split")]
    EmptyCorpus,
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("malformed vocabulary file: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    channel: Channel,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VocabMeta {
    channel: Channel,
    size: usize,
    sha256: String,
}

impl Vocab {
    fn from_tokens(channel: Channel, tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { channel, tokens, index }
    }

    /// Every distinct training token, ordered by descending count then text.
    pub fn build(train: &[Record], channel: Channel) -> Result<Self, VocabError> {
        if train.is_empty() {
            return Err(VocabError::EmptyCorpus);
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in train {
            for t in channel.tokens(r) {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<_> = counts
            .into_iter()
            .filter(|(t, _)| !RESERVED.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Ok(Self::from_tokens(channel, tokens))
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or(RESERVED[UNK as usize], String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Tokens up to the first `<END>`, skipping `<PAD>` and `<START>`.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != END)
            .filter(|&&i| i != PAD && i != START)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        format!("{:x}", h.finalize())
    }

    /// Writes `<channel>.txt` (one non-reserved token per line, line
    /// number = id − 4) and `<channel>.meta`.
    pub fn save(&self, dir: &Path) -> Result<(), VocabError> {
        fs::create_dir_all(dir)?;
        let mut body = String::new();
        for t in &self.tokens[RESERVED.len()..] {
            body.push_str(t);
            body.push('\n');
        }
        fs::write(dir.join(format!("{}.txt", self.channel)), body)?;
        let meta = VocabMeta {
            channel: self.channel,
            size: self.len(),
            sha256: self.digest(),
        };
        fs::write(
            dir.join(format!("{}.meta", self.channel)),
            serde_json::to_string_pretty(&meta).expect("meta serializes"),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, channel: Channel) -> Result<Self, VocabError> {
        let body = fs::read_to_string(dir.join(format!("{channel}.txt")))?;
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(body.lines().map(str::to_string))
            .collect();
        let v = Self::from_tokens(channel, tokens);
        let meta: VocabMeta = serde_json::from_str(&fs::read_to_string(dir.join(format!("{channel}.meta")))?)
            .map_err(|e| VocabError::Format(e.to_string()))?;
        if meta.channel != channel || meta.size != v.len() || meta.sha256 != v.digest() {
            return Err(VocabError::Format(format!("{channel}.meta does not match {channel}.txt")));
        }
        if v.index.len() != v.len() {
            return Err(VocabError::Format(format!("{channel}.txt has duplicate tokens")));
        }
        Ok(v)
    }
}

/// The four channel vocabularies of a dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabs {
    pub sbt: Vocab,
    pub nodes: Vocab,
    pub code: Vocab,
    pub comment: Vocab,
}

impl Vocabs {
    pub fn build(train: &[Record]) -> Result<Self, VocabError> {
        Ok(Self {
            sbt: Vocab::build(train, Channel::Sbt)?,
            nodes: Vocab::build(train, Channel::Nodes)?,
            code: Vocab::build(train, Channel::Code)?,
            comment: Vocab::build(train, Channel::Comment)?,
        })
    }

    pub fn get(&self, c: Channel) -> &Vocab {
        match c {
            Channel::Sbt => &self.sbt,
            Channel::Nodes => &self.nodes,
            Channel::Code => &self.code,
            Channel::Comment => &self.comment,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), VocabError> {
        Channel::ALL.iter().try_for_each(|&c| self.get(c).save(dir))
    }

    pub fn load(dir: &Path) -> Result<Self, VocabError> {
        Ok(Self {
            sbt: Vocab::load(dir, Channel::Sbt)?,
            nodes: Vocab::load(dir, Channel::Nodes)?,
            code: Vocab::load(dir, Channel::Code)?,
            comment: Vocab::load(dir, Channel::Comment)?,
        })
    }

    pub fn digests(&self) -> [String; 4] {
        Channel::ALL.map(|c| self.get(c).digest())
    }
}
