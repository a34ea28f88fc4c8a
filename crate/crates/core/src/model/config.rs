use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::Record;

/// Which inputs feed the encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// SBT sequence + graph.
    #[serde(rename = "mmtrans")]
    Mmtrans,
    /// Plain code tokens + graph.
    #[serde(rename = "i-mmtrans")]
    IMmtrans,
    /// Plain code tokens only.
    #[serde(rename = "code-only")]
    CodeOnly,
}

impl Mode {
    pub fn uses_graph(self) -> bool {
        self != Mode::CodeOnly
    }

    pub fn uses_sbt(self) -> bool {
        self == Mode::Mmtrans
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Mmtrans => "mmtrans",
            Mode::IMmtrans => "i-mmtrans",
            Mode::CodeOnly => "code-only",
        }
    }

    /// Rejects a record lacking a channel this mode consumes.
    pub fn check_record(self, r: &Record) -> Result<(), ModelError> {
        let missing = if self.uses_graph() && r.nodes.is_empty() {
            Some("nodes")
        } else if self.uses_sbt() && r.sbt.is_empty() {
            Some("sbt")
        } else if !self.uses_sbt() && r.code.is_empty() {
            Some("code")
        } else {
            None
        };
        match missing {
            Some(ch) => Err(ModelError::DataModelMismatch(format!(
                "mode {self} needs the `{ch}` channel, which is empty for {}::{}",
                r.contract_id, r.method_name
            ))),
            None => Ok(()),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Mode::Mmtrans, Mode::IMmtrans, Mode::CodeOnly]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected mmtrans, i-mmtrans or code-only)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding and hidden width (the embedding size equals d_model).
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    /// Attention-module layers N.
    pub layers: usize,
    /// Stacked GCN layers.
    pub hop: usize,
    pub max_sbt: usize,
    pub max_nodes: usize,
    pub max_code: usize,
    pub max_comment: usize,
    pub comment_vocab: usize,
    pub sbt_vocab: usize,
    pub nodes_vocab: usize,
    pub code_vocab: usize,
    pub mode: Mode,
    pub dropout: f64,
    pub gcn_normalize: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            d_ff: 512,
            heads: 4,
            layers: 1,
            hop: 2,
            max_sbt: 600,
            max_nodes: 200,
            max_code: 600,
            max_comment: 20,
            comment_vocab: 4,
            sbt_vocab: 4,
            nodes_vocab: 4,
            code_vocab: 4,
            mode: Mode::Mmtrans,
            dropout: 0.1,
            gcn_normalize: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model ({}) must be divisible by the head count ({})",
                self.d_model, self.heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return bad(format!("d_model ({}) must be even for positional encoding", self.d_model));
        }
        let extents = [
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("layers", self.layers),
            ("max_sbt", self.max_sbt),
            ("max_nodes", self.max_nodes),
            ("max_code", self.max_code),
            ("max_comment", self.max_comment),
            ("comment_vocab", self.comment_vocab),
            ("sbt_vocab", self.sbt_vocab),
            ("nodes_vocab", self.nodes_vocab),
            ("code_vocab", self.code_vocab),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout ({}) must be in [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Vocabulary size of the sequence encoder's channel.
    pub fn seq_vocab(&self) -> usize {
        if self.mode.uses_sbt() {
            self.sbt_vocab
        } else {
            self.code_vocab
        }
    }

    /// Longest sequence any positional table must cover.
    pub fn max_positions(&self) -> usize {
        [self.max_sbt, self.max_nodes, self.max_code, self.max_comment + 1]
            .into_iter()
            .max()
            .unwrap()
    }
}
