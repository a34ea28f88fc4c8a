//! The dual-encoder / joint-decoder network.
//!
//! Graph encoder: embed nodes, `hop` GCN layers over Ã, add PE, self-attention
//! stack. Sequence encoder: embed SBT (or code) tokens, scale by √d, add PE,
//! self-attention stack. Decoder: embed the comment prefix, scale, add PE,
//! causal self-attention stack, then one cross-attention stack per encoder
//! run in parallel; their outputs are concatenated and projected to the
//! comment vocabulary.

pub mod checkpoint;
pub mod config;
pub mod layers;

use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ModelConfig, Mode};
use layers::{feed_forward, gcn_layer, key_padding, mask_bias, multi_head_attention, AttnWeights};

use crate::batch::{Batch, Padded};
use crate::scalar::Scalar;
use crate::tensor::{Result as TResult, Tape, Tensor, TensorError, Var};
use crate::vocab::{END, START};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dataset does not fit the model: {0}")]
    DataModelMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

const LN_EPS: f64 = 1e-6;

/// Named trainable tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn add(&mut self, name: String, t: Tensor<T>) {
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|i| &mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    fn glorot<T: Scalar>(&mut self, rows: usize, cols: usize) -> Tensor<T> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(&[rows, cols], |_| T::of(rng.gen_range(-bound..bound)))
    }
}

fn add_block<T: Scalar>(p: &mut ParamStore<T>, init: &mut Init, prefix: &str, c: &ModelConfig) {
    let d = c.d_model;
    for w in ["wq", "wk", "wv", "wo"] {
        p.add(format!("{prefix}.attn.{w}"), init.glorot(d, d));
    }
    p.add(format!("{prefix}.ln1.g"), Tensor::ones(&[d]));
    p.add(format!("{prefix}.ln1.b"), Tensor::zeros(&[d]));
    p.add(format!("{prefix}.ffn.w1"), init.glorot(d, c.d_ff));
    p.add(format!("{prefix}.ffn.b1"), Tensor::zeros(&[c.d_ff]));
    p.add(format!("{prefix}.ffn.w2"), init.glorot(c.d_ff, d));
    p.add(format!("{prefix}.ffn.b2"), Tensor::zeros(&[d]));
    p.add(format!("{prefix}.ln2.g"), Tensor::ones(&[d]));
    p.add(format!("{prefix}.ln2.b"), Tensor::zeros(&[d]));
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pe: Tensor<T>,
}

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;

/// Encoder outputs with their key-length vectors.
struct Memory {
    graph: Option<(Var, Vec<usize>)>,
    seq: (Var, Vec<usize>),
}

struct Ctx<'a, T: Scalar> {
    tape: &'a Tape<T>,
    vars: &'a [Var],
    model: &'a Model<T>,
    rng: Option<RefCell<&'a mut ChaCha8Rng>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    fn p(&self, name: &str) -> Var {
        let id = self
            .model
            .params
            .id(name)
            .unwrap_or_else(|| panic!("parameter {name} is registered"));
        self.vars[id]
    }

    fn dropout(&self, x: Var) -> TResult<Var> {
        let rate = self.model.config.dropout;
        let Some(rng) = &self.rng else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let mut rng = rng.borrow_mut();
        let shape = self.tape.shape(x);
        let mask = Tensor::from_fn(&shape, |_| if rng.gen::<f64>() < rate { T::zero() } else { keep });
        self.tape.mul(x, self.tape.constant(mask))
    }

    fn pe(&self, len: usize) -> Var {
        let d = self.model.config.d_model;
        let rows = self.model.pe.data()[..len * d].to_vec();
        self.tape.constant(Tensor::new(vec![len, d], rows).expect("pe slice"))
    }

    fn embed(&self, table: &str, ids: &Padded, scale: bool) -> TResult<Var> {
        let ids_usize: Vec<usize> = ids.ids.iter().map(|&i| i as usize).collect();
        let e = self.tape.gather(self.p(table), &ids_usize, &[ids.rows(), ids.len])?;
        Ok(if scale {
            self.tape.scale(e, T::of((self.model.config.d_model as f64).sqrt()))
        } else {
            e
        })
    }

    /// Attention, residual + layer norm, feed-forward, residual + layer norm.
    fn block(&self, prefix: &str, q: Var, kv: Var, bias: Option<Var>) -> TResult<Var> {
        let t = self.tape;
        let w = AttnWeights {
            wq: self.p(&format!("{prefix}.attn.wq")),
            wk: self.p(&format!("{prefix}.attn.wk")),
            wv: self.p(&format!("{prefix}.attn.wv")),
            wo: self.p(&format!("{prefix}.attn.wo")),
        };
        let a = multi_head_attention(t, q, kv, bias, &w, self.model.config.heads)?;
        let a = self.dropout(a)?;
        let x = t.layer_norm(
            t.add(q, a)?,
            self.p(&format!("{prefix}.ln1.g")),
            self.p(&format!("{prefix}.ln1.b")),
            T::of(LN_EPS),
        )?;
        let f = feed_forward(
            t,
            x,
            self.p(&format!("{prefix}.ffn.w1")),
            self.p(&format!("{prefix}.ffn.b1")),
            self.p(&format!("{prefix}.ffn.w2")),
            self.p(&format!("{prefix}.ffn.b2")),
        )?;
        let f = self.dropout(f)?;
        t.layer_norm(
            t.add(x, f)?,
            self.p(&format!("{prefix}.ln2.g")),
            self.p(&format!("{prefix}.ln2.b")),
            T::of(LN_EPS),
        )
    }

    /// N self-attention layers.
    fn smam(&self, prefix: &str, mut x: Var, bias: Var) -> TResult<Var> {
        for n in 0..self.model.config.layers {
            x = self.block(&format!("{prefix}.{n}"), x, x, Some(bias))?;
        }
        Ok(x)
    }

    /// N cross-attention layers over a fixed memory.
    fn mam(&self, prefix: &str, mut q: Var, memory: Var, bias: Var) -> TResult<Var> {
        for n in 0..self.model.config.layers {
            q = self.block(&format!("{prefix}.{n}"), q, memory, Some(bias))?;
        }
        Ok(q)
    }

    fn self_bias(&self, lens: &[usize], len: usize) -> Var {
        let keep = key_padding(lens, len, len);
        self.tape.constant(mask_bias(&keep, [lens.len(), len, len]))
    }

    fn graph_encoder(&self, batch: &Batch) -> TResult<Var> {
        let c = &self.model.config;
        let (b, l) = (batch.size(), batch.nodes.len);
        let mut h = self.embed("emb.nodes", &batch.nodes, false)?;
        let a = self.tape.constant(adjacency_tensor(batch, c.gcn_normalize));
        for k in 0..c.hop {
            h = gcn_layer(self.tape, h, a, self.p(&format!("gcn.{k}.w")))?;
        }
        let x = self.tape.add(h, self.pe(l))?;
        let bias = self.self_bias(&batch.nodes.lens, l);
        debug_assert_eq!(self.tape.shape(x), vec![b, l, c.d_model]);
        self.smam("enc_graph", x, bias)
    }

    fn seq_encoder(&self, ids: &Padded) -> TResult<Var> {
        let e = self.embed("emb.seq", ids, true)?;
        let x = self.tape.add(e, self.pe(ids.len))?;
        let bias = self.self_bias(&ids.lens, ids.len);
        self.smam("enc_seq", x, bias)
    }

    fn encode(&self, batch: &Batch) -> TResult<Memory> {
        let mode = self.model.config.mode;
        let seq_ids = if mode.uses_sbt() { &batch.sbt } else { &batch.code };
        let graph = if mode.uses_graph() {
            Some((self.graph_encoder(batch)?, batch.nodes.lens.clone()))
        } else {
            None
        };
        Ok(Memory {
            graph,
            seq: (self.seq_encoder(seq_ids)?, seq_ids.lens.clone()),
        })
    }

    /// Logits `(B, lY, S)` for decoder input `y` with causal+padding keep mask.
    fn decode(&self, mem: &Memory, y: &Padded, y_keep: &[bool]) -> TResult<Var> {
        let t = self.tape;
        let (b, ly) = (y.rows(), y.len);
        let e = self.embed("emb.comment", y, true)?;
        let x = t.add(e, self.pe(ly))?;
        let causal = t.constant(mask_bias(y_keep, [b, ly, ly]));
        let s = self.smam("dec.self", x, causal)?;
        let cross = |prefix: &str, (memory, lens): &(Var, Vec<usize>)| -> TResult<Var> {
            let lk = t.shape(*memory)[1];
            let bias = t.constant(mask_bias(&key_padding(lens, ly, lk), [b, ly, lk]));
            self.mam(prefix, s, *memory, bias)
        };
        let seq_out = cross("dec.mam_seq", &mem.seq)?;
        let merged = match &mem.graph {
            Some(g) => t.concat_last(cross("dec.mam_graph", g)?, seq_out)?,
            None => seq_out,
        };
        t.add(t.matmul(merged, self.p("out.w"))?, self.p("out.b"))
    }
}

/// Ã per sample as a `(B, l, l)` tensor, optionally `D^-1/2 Ã D^-1/2`.
pub fn adjacency_tensor<T: Scalar>(batch: &Batch, normalize: bool) -> Tensor<T> {
    let (b, l) = (batch.size(), batch.nodes.len);
    let mut data: Vec<T> = batch.adjacency.iter().map(|&x| T::of(x as f64)).collect();
    if normalize {
        for s in 0..b {
            let m = &mut data[s * l * l..(s + 1) * l * l];
            let deg: Vec<T> = (0..l).map(|i| m[i * l..(i + 1) * l].iter().copied().sum()).collect();
            for i in 0..l {
                for j in 0..l {
                    m[i * l + j] /= (deg[i] * deg[j]).sqrt();
                }
            }
        }
    }
    Tensor::new(vec![b, l, l], data).expect("adjacency shape")
}

/// Loss weights: `1 / (N · l_i)` at the first `l_i` positions, else 0.
fn loss_weights<T: Scalar>(target: &Padded) -> Vec<T> {
    let n = target.rows() as f64;
    let mut w = Vec::with_capacity(target.ids.len());
    for b in 0..target.rows() {
        let li = target.lens[b] as f64;
        w.extend((0..target.len).map(|i| if target.keep(b, i) { T::of(1.0 / (n * li)) } else { T::zero() }));
    }
    w
}

/// `-(1/N) Σ_i (1/l_i) Σ_{j<l_i} log p_ij[y_ij]` on plain probabilities
/// of shape `(N, lY, S)`.
pub fn batch_loss<T: Scalar>(probs: &Tensor<T>, targets: &[u32], lengths: &[usize]) -> Result<T, TensorError> {
    let shape = probs.shape();
    if shape.len() != 3 || shape[0] != lengths.len() || targets.len() != shape[0] * shape[1] {
        return Err(TensorError::Shape {
            op: "batch_loss",
            lhs: shape.to_vec(),
            rhs: vec![lengths.len(), targets.len()],
        });
    }
    let (n, ly, s) = (shape[0], shape[1], shape[2]);
    let mut total = T::zero();
    for i in 0..n {
        let li = lengths[i].min(ly);
        let mut acc = T::zero();
        for j in 0..li {
            let y = targets[i * ly + j] as usize;
            acc += probs.data()[(i * ly + j) * s + y].ln();
        }
        total += acc / T::of(li.max(1) as f64);
    }
    Ok(-total / T::of(n as f64))
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let d = c.d_model;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(c.seed),
        };
        let mut p = ParamStore::new();
        if c.mode.uses_graph() {
            p.add("emb.nodes".into(), init.glorot(c.nodes_vocab, d));
            for k in 0..c.hop {
                p.add(format!("gcn.{k}.w"), init.glorot(d, d));
            }
            for n in 0..c.layers {
                add_block(&mut p, &mut init, &format!("enc_graph.{n}"), c);
            }
        }
        p.add("emb.seq".into(), init.glorot(c.seq_vocab(), d));
        for n in 0..c.layers {
            add_block(&mut p, &mut init, &format!("enc_seq.{n}"), c);
        }
        p.add("emb.comment".into(), init.glorot(c.comment_vocab, d));
        for n in 0..c.layers {
            add_block(&mut p, &mut init, &format!("dec.self.{n}"), c);
        }
        if c.mode.uses_graph() {
            for n in 0..c.layers {
                add_block(&mut p, &mut init, &format!("dec.mam_graph.{n}"), c);
            }
        }
        for n in 0..c.layers {
            add_block(&mut p, &mut init, &format!("dec.mam_seq.{n}"), c);
        }
        let width = if c.mode.uses_graph() { 2 * d } else { d };
        p.add("out.w".into(), init.glorot(width, c.comment_vocab));
        p.add("out.b".into(), Tensor::zeros(&[c.comment_vocab]));
        Ok(Self {
            pe: layers::positional_encoding(c.max_positions(), d),
            config,
            params: p,
        })
    }

    /// Replaces parameters by name; shapes must match.
    pub fn with_params(config: ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self, ModelError> {
        let mut m = Self::new(config)?;
        if named.len() != m.params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                m.params.len(),
                named.len()
            )));
        }
        for (name, t) in named {
            let slot = m
                .params
                .get_mut(&name)
                .ok_or_else(|| ModelError::Config(format!("unknown parameter {name}")))?;
            if slot.shape() != t.shape() {
                return Err(ModelError::Config(format!(
                    "parameter {name}: shape {:?} != {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(m)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: ParamStore {
                names: self.params.names.clone(),
                tensors: self.params.tensors.iter().map(Tensor::cast).collect(),
                index: self.params.index.clone(),
            },
            pe: self.pe.cast(),
        }
    }

    /// Records every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &Tape<T>) -> Vec<Var> {
        self.params.tensors.iter().map(|p| tape.param(p.clone())).collect()
    }

    fn bind_constants(&self, tape: &Tape<T>) -> Vec<Var> {
        self.params.tensors.iter().map(|p| tape.constant(p.clone())).collect()
    }

    fn ctx<'a>(&'a self, tape: &'a Tape<T>, vars: &'a [Var], rng: Option<&'a mut ChaCha8Rng>) -> Ctx<'a, T> {
        Ctx {
            tape,
            vars,
            model: self,
            rng: rng.map(RefCell::new),
        }
    }

    /// Teacher-forced logits `(B, lY, S)`. `rng` enables dropout.
    pub fn logits(&self, tape: &Tape<T>, vars: &[Var], batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> TResult<Var> {
        let ctx = self.ctx(tape, vars, rng);
        let mem = ctx.encode(batch)?;
        ctx.decode(&mem, &batch.y_in, &batch.target_mask())
    }

    /// Length-normalized batch loss on the tape (cross-entropy fused with the softmax).
    pub fn loss(&self, tape: &Tape<T>, vars: &[Var], batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> TResult<Var> {
        let logits = self.logits(tape, vars, batch, rng)?;
        let targets: Vec<usize> = batch.y_out.ids.iter().map(|&i| i as usize).collect();
        tape.cross_entropy(logits, &targets, &loss_weights(&batch.y_out))
    }

    /// Output distribution `(B, lY, S)` without dropout.
    pub fn probabilities(&self, batch: &Batch) -> TResult<Tensor<T>> {
        let tape = Tape::new();
        let vars = self.bind_constants(&tape);
        let logits = self.logits(&tape, &vars, batch, None)?;
        let probs = tape.softmax(logits, 2)?;
        Ok((*tape.value(probs)).clone())
    }

    /// Loss value for a batch without dropout or gradients.
    pub fn eval_loss(&self, batch: &Batch) -> TResult<T> {
        let tape = Tape::new();
        let vars = self.bind_constants(&tape);
        let loss = self.loss(&tape, &vars, batch, None)?;
        Ok(tape.value(loss).item())
    }

    /// Greedy decoding from `<START>`: at each step the whole generated
    /// prefix is fed back and the argmax token appended, until `<END>` or
    /// `max_len` tokens. Sentinels are not returned.
    pub fn greedy_decode(&self, batch: &Batch, max_len: usize) -> TResult<Vec<Vec<u32>>> {
        let tape = Tape::new();
        let vars = self.bind_constants(&tape);
        let ctx = self.ctx(&tape, &vars, None);
        let mem = ctx.encode(batch)?;
        let b = batch.size();
        let s = self.config.comment_vocab;
        let mut out: Vec<Vec<u32>> = vec![Vec::new(); b];
        let mut done = vec![false; b];
        let mut prefix = vec![START; b];
        for step in 0..max_len {
            let len = step + 1;
            let y = Padded {
                ids: prefix.clone(),
                lens: vec![len; b],
                len,
            };
            let keep: Vec<bool> = (0..b)
                .flat_map(|_| (0..len).flat_map(move |i| (0..len).map(move |j| j <= i)))
                .collect();
            let logits = ctx.decode(&mem, &y, &keep)?;
            let lv = tape.value(logits);
            let mut next = Vec::with_capacity(b * (len + 1));
            for r in 0..b {
                let row = &lv.data()[(r * len + step) * s..(r * len + step + 1) * s];
                let arg = argmax(row) as u32;
                if !done[r] {
                    if arg == END {
                        done[r] = true;
                    } else {
                        out[r].push(arg);
                    }
                }
                next.extend_from_slice(&prefix[r * len..(r + 1) * len]);
                next.push(arg);
            }
            prefix = next;
            if done.iter().all(|&d| d) {
                break;
            }
        }
        Ok(out)
    }
}

/// First index of the maximum.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::{Encoded, PadTo};

    pub(crate) fn tiny_config(mode: Mode) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            d_ff: 16,
            heads: 2,
            layers: 1,
            hop: 2,
            comment_vocab: 12,
            sbt_vocab: 10,
            nodes_vocab: 9,
            code_vocab: 11,
            mode,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn sample(seed: u32) -> Encoded {
        Encoded {
            nodes: vec![4, 5 + seed % 3, 6],
            edges: vec![(0, 1), (0, 2)],
            sbt: vec![2, 4, 5 + seed % 4, 3],
            code: vec![2, 6, 7, 8, 3],
            comment: vec![4, 5 + seed % 5],
        }
    }

    #[test]
    fn probabilities_are_distributions() {
        for mode in [Mode::Mmtrans, Mode::IMmtrans, Mode::CodeOnly] {
            let m = Model64::new(tiny_config(mode)).unwrap();
            let (a, b) = (sample(0), sample(1));
            let batch = Batch::new(&[&a, &b], PadTo::default());
            let p = m.probabilities(&batch).unwrap();
            assert_eq!(p.shape(), &[2, 3, 12]);
            for row in p.data().chunks(12) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn code_only_has_narrow_projection() {
        let m = Model64::new(tiny_config(Mode::CodeOnly)).unwrap();
        assert_eq!(m.params.get("out.w").unwrap().shape(), &[8, 12]);
        assert!(m.params.get("emb.nodes").is_none());
        let m = Model64::new(tiny_config(Mode::Mmtrans)).unwrap();
        assert_eq!(m.params.get("out.w").unwrap().shape(), &[16, 12]);
    }

    #[test]
    fn loss_matches_plain_batch_loss() {
        let m = Model64::new(tiny_config(Mode::Mmtrans)).unwrap();
        let (a, b) = (sample(0), sample(3));
        let batch = Batch::new(&[&a, &b], PadTo::default());
        let probs = m.probabilities(&batch).unwrap();
        let plain = batch_loss(&probs, &batch.y_out.ids, &batch.y_out.lens).unwrap();
        assert!((plain - m.eval_loss(&batch).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn rigged_end_decodes_empty() {
        let mut m = Model64::new(tiny_config(Mode::Mmtrans)).unwrap();
        for x in m.params.get_mut("out.w").unwrap().data_mut() {
            *x = 0.0;
        }
        m.params.get_mut("out.b").unwrap().data_mut()[END as usize] = 10.0;
        let a = sample(0);
        let batch = Batch::new(&[&a], PadTo::default());
        assert_eq!(m.greedy_decode(&batch, 20).unwrap(), vec![Vec::<u32>::new()]);
    }

    #[test]
    fn decode_is_deterministic_and_bounded() {
        let m = Model64::new(tiny_config(Mode::IMmtrans)).unwrap();
        let (a, b) = (sample(1), sample(2));
        let batch = Batch::new(&[&a, &b], PadTo::default());
        let out = m.greedy_decode(&batch, 20).unwrap();
        assert_eq!(out, m.greedy_decode(&batch, 20).unwrap());
        assert!(out.iter().all(|o| o.len() <= 20));
    }
}
