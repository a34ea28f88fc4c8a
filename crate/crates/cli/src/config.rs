//! The run configuration file: flat TOML, every key optional.

use std::path::{Path, PathBuf};

use mmtrans::model::{Mode, ModelConfig};
use mmtrans::trainer::TrainConfig;
use mmtrans::vocab::Vocabs;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const SEED_ENV: &str = "MMTRANS_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

/// Which split scores the periodic validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidateOn {
    Valid,
    Train,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset directory written by `build-corpus`.
    pub data: Option<PathBuf>,
    /// Run directory for checkpoints, vocabularies and the metrics log.
    pub out: Option<PathBuf>,
    /// Falls back to `MMTRANS_SEED`, then 0.
    pub seed: Option<u64>,
    pub precision: Precision,
    pub validate_on: ValidateOn,

    pub mode: Mode,
    pub d_model: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub hop: usize,
    pub dropout: f64,
    pub gcn_normalize: bool,

    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validate_every: usize,
    pub validate_each_epoch: bool,
    pub max_steps: Option<usize>,
    pub stop_at_sbleu: Option<f64>,
    pub batch_size: usize,
    pub max_decode: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            data: None,
            out: None,
            seed: None,
            precision: Precision::F32,
            validate_on: ValidateOn::Valid,
            mode: m.mode,
            d_model: m.d_model,
            d_ff: m.d_ff,
            heads: m.heads,
            layers: m.layers,
            hop: m.hop,
            dropout: m.dropout,
            gcn_normalize: m.gcn_normalize,
            warmup_steps: t.warmup_steps,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            max_epochs: t.max_epochs,
            patience: t.patience,
            validate_every: t.validate_every,
            validate_each_epoch: t.validate_each_epoch,
            max_steps: t.max_steps,
            stop_at_sbleu: t.stop_at_sbleu,
            batch_size: t.batch_size,
            max_decode: t.max_decode,
        }
    }
}

/// `MMTRANS_SEED` if set and numeric.
pub fn env_seed() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::input(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolved_seed(&self) -> CliResult<u64> {
        Ok(match self.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(0),
        })
    }

    pub fn model_config(&self, vocabs: &Vocabs, seed: u64) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            d_ff: self.d_ff,
            heads: self.heads,
            layers: self.layers,
            hop: self.hop,
            comment_vocab: vocabs.comment.len(),
            sbt_vocab: vocabs.sbt.len(),
            nodes_vocab: vocabs.nodes.len(),
            code_vocab: vocabs.code.len(),
            mode: self.mode,
            dropout: self.dropout,
            gcn_normalize: self.gcn_normalize,
            seed,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            warmup_steps: self.warmup_steps,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            max_epochs: self.max_epochs,
            patience: self.patience,
            validate_every: self.validate_every,
            validate_each_epoch: self.validate_each_epoch,
            max_steps: self.max_steps,
            stop_at_sbleu: self.stop_at_sbleu,
            batch_size: self.batch_size,
            max_decode: self.max_decode,
            seed,
        }
    }
}
