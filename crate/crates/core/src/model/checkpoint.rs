//! Checkpoint file: magic line, one JSON header line (format version,
//! model config, vocabulary digests, tensor directory, free-form trainer
//! state), then every tensor as little-endian f64 in directory order.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "MMTRANS-CHECKPOINT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file: {0}")]
    Format(String),
    #[error("checkpoint format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error("checkpoint was trained with different vocabularies ({0} differs)")]
    VocabMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    vocab_digests: Vec<String>,
    tensors: Vec<Entry>,
    state: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// sha256 of the sbt, nodes, code and comment vocabularies.
    pub vocab_digests: Vec<String>,
    /// Model parameters under their own names; anything else (optimizer
    /// moments) under a prefixed name.
    pub tensors: Vec<(String, Tensor<f64>)>,
    pub state: serde_json::Value,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &Model<T>, vocab_digests: Vec<String>) -> Self {
        Self {
            config: model.config.clone(),
            vocab_digests,
            tensors: model
                .params
                .names()
                .iter()
                .cloned()
                .zip(model.params.tensors().iter().map(Tensor::cast))
                .collect(),
            state: serde_json::Value::Null,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f64>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn model<T: Scalar>(&self) -> Result<Model<T>, CheckpointError> {
        let template = Model::<T>::new(self.config.clone())?;
        let named = template
            .params
            .names()
            .iter()
            .map(|n| {
                self.tensor(n)
                    .map(|t| (n.clone(), t.cast()))
                    .ok_or_else(|| CheckpointError::Format(format!("missing parameter {n}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Model::with_params(self.config.clone(), named)?)
    }

    /// Refuses a checkpoint built for other vocabularies.
    pub fn check_vocab(&self, digests: &[String]) -> Result<(), CheckpointError> {
        const CHANNELS: [&str; 4] = ["sbt", "nodes", "code", "comment"];
        if self.vocab_digests.len() != digests.len() {
            return Err(CheckpointError::VocabMismatch("digest count".into()));
        }
        for (i, (a, b)) in self.vocab_digests.iter().zip(digests).enumerate() {
            if a != b {
                return Err(CheckpointError::VocabMismatch(CHANNELS.get(i).unwrap_or(&"vocabulary").to_string()));
            }
        }
        Ok(())
    }

    pub fn check_config(&self, expected: &ModelConfig) -> Result<(), CheckpointError> {
        if &self.config != expected {
            let a = serde_json::to_value(&self.config).unwrap();
            let b = serde_json::to_value(expected).unwrap();
            let diff: Vec<String> = a
                .as_object()
                .unwrap()
                .iter()
                .filter(|(k, v)| b.get(k.as_str()) != Some(v))
                .map(|(k, _)| k.clone())
                .collect();
            return Err(CheckpointError::ConfigMismatch(diff.join(", ")));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab_digests: self.vocab_digests.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| Entry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
            state: self.state.clone(),
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            writeln!(w, "{MAGIC}")?;
            writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
            for (_, t) in &self.tensors {
                for x in t.data() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            w.flush()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut r = BufReader::new(fs::File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MAGIC {
            return Err(CheckpointError::Format(path.display().to_string()));
        }
        line.clear();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(&line).map_err(|e| CheckpointError::Format(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: header.format_version,
            });
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let mut bytes = vec![0u8; n * 8];
            r.read_exact(&mut bytes)
                .map_err(|_| CheckpointError::Format(format!("truncated tensor {}", e.name)))?;
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| CheckpointError::Format(err.to_string()))?;
            tensors.push((e.name, t));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(Self {
            config: header.config,
            vocab_digests: header.vocab_digests,
            tensors,
            state: header.state,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    #[test]
    fn round_trip_and_mismatch() {
        let config = ModelConfig {
            d_model: 8,
            d_ff: 8,
            heads: 2,
            comment_vocab: 7,
            sbt_vocab: 6,
            nodes_vocab: 5,
            code_vocab: 5,
            mode: Mode::Mmtrans,
            ..ModelConfig::default()
        };
        let m = Model::<f32>::new(config.clone()).unwrap();
        let digests = vec!["a".to_string(), "b".into(), "c".into(), "d".into()];
        let mut ck = Checkpoint::from_model(&m, digests.clone());
        ck.state = serde_json::json!({"step": 3});
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.model::<f32>().unwrap(), m);
        assert!(back.check_vocab(&digests).is_ok());
        let mut other = digests.clone();
        other[3] = "z".into();
        assert!(matches!(back.check_vocab(&other), Err(CheckpointError::VocabMismatch(c)) if c == "comment"));
        let wider = ModelConfig { d_model: 16, ..config };
        assert!(matches!(back.check_config(&wider), Err(CheckpointError::ConfigMismatch(_))));
        fs::write(&path, b"garbage\n").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
