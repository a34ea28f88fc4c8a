//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Positional arguments filter criteria by substring.

use std::cell::Cell;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mmtrans::batch::{Batch, Encoded, PadTo};
use mmtrans::corpus::{self, Record, SourceUnit};
use mmtrans::metrics::{self, MetricReport};
use mmtrans::modalities::{sbt_parse, sbt_serialize_capped};
use mmtrans::model::layers::{gcn_layer, multi_head_attention, AttnWeights};
use mmtrans::model::{adjacency_tensor, Mode, Model, ModelConfig};
use mmtrans::solc::ast::AstNode;
use mmtrans::tensor::grad_check;
use mmtrans::trainer::{lr_schedule, GreedyBleu, TrainConfig, TrainError, Trainer, Validator};
use mmtrans::vocab::Vocabs;
use mmtrans::{Tape, Tensor};
use mmtrans_cli::commands::{self, BuildCorpusArgs, TrainArgs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: usize,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn toy_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy-corpus")
}

// ---------------------------------------------------------------- 1

const LABELS: [&str; 8] = ["Block", "Expr", "Call", "SimpleName", "If", "<END>", "a b", "Return"];
const VALUE_CHARS: &[u8] = b"aAbBzZ09_ .()<>;x";

fn random_value(rng: &mut ChaCha8Rng) -> String {
    loop {
        let len = rng.gen_range(1..10);
        let v: String = (0..len)
            .map(|_| VALUE_CHARS[rng.gen_range(0..VALUE_CHARS.len())] as char)
            .collect();
        if v != "(" && v != ")" {
            return v;
        }
    }
}

fn random_tree(rng: &mut ChaCha8Rng, budget: &mut usize, depth: usize) -> AstNode {
    *budget -= 1;
    let label = LABELS[rng.gen_range(0..LABELS.len())];
    let max_kids = (*budget).min(4);
    let kids = if depth > 12 || max_kids == 0 { 0 } else { rng.gen_range(0..=max_kids) };
    if kids == 0 {
        return if rng.gen_bool(0.8) {
            AstNode::leaf(label, random_value(rng))
        } else {
            AstNode::node(label, Vec::new())
        };
    }
    let mut children = Vec::new();
    for _ in 0..kids {
        if *budget == 0 {
            break;
        }
        children.push(random_tree(rng, budget, depth + 1));
    }
    AstNode::node(label, children)
}

fn sbt_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut largest = 0;
    for i in 0..1000 {
        let mut budget = rng.gen_range(1..=150);
        let mut tree = random_tree(&mut rng, &mut budget, 0);
        tree.renumber();
        largest = largest.max(tree.size());
        let seq = sbt_serialize_capped(&tree, usize::MAX);
        let back = sbt_parse(&seq).map_err(|e| format!("tree {i}: {e}"))?;
        ensure(back == tree, || format!("tree {i} of {} nodes differs after round trip", tree.size()))?;
    }
    Ok(format!("1000 trees, up to {largest} nodes"))
}

// ---------------------------------------------------------------- 2

fn random_sample(rng: &mut ChaCha8Rng, cfg: &ModelConfig, nodes: usize, seq: usize, comment: usize) -> Encoded {
    let ids = |rng: &mut ChaCha8Rng, n: usize, vocab: usize| (0..n).map(|_| rng.gen_range(4..vocab as u32)).collect();
    let edges = (1..nodes).map(|j| (rng.gen_range(0..j), j)).collect();
    Encoded {
        nodes: ids(rng, nodes, cfg.nodes_vocab),
        edges,
        sbt: ids(rng, seq, cfg.sbt_vocab),
        code: ids(rng, seq, cfg.code_vocab),
        comment: ids(rng, comment, cfg.comment_vocab),
    }
}

fn small_config(mode: Mode, d: usize, heads: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: d,
        d_ff: 2 * d,
        heads,
        mode,
        dropout: 0.0,
        comment_vocab: 40,
        sbt_vocab: 30,
        nodes_vocab: 25,
        code_vocab: 30,
        seed,
        ..ModelConfig::default()
    }
}

fn gradient_check() -> Outcome {
    let cfg = small_config(Mode::Mmtrans, 16, 4, 7);
    let model = Model::<f64>::new(cfg.clone()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random_sample(&mut rng, &cfg, 12, 20, 5);
    let b = random_sample(&mut rng, &cfg, 9, 14, 3);
    let batch = Batch::new(&[&a, &b], PadTo::default());
    ensure(
        batch.nodes.len == 12 && batch.sbt.len == 20 && batch.target_len() == 6,
        || "unexpected batch extents".into(),
    )?;
    let mut params = model.params.tensors().to_vec();
    let report = grad_check(|tape, vars| model.loss(tape, vars, &batch, None), &mut params, 1e-5, 600, 3)
        .map_err(|e| e.to_string())?;
    let detail = format!("{} coordinates, max rel error {:.2e}", report.coordinates, report.max_rel_error);
    ensure(report.coordinates >= 500 && report.max_rel_error <= 1e-4, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 3

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Straight-line per-head attention for one batch row.
#[allow(clippy::too_many_arguments)]
fn attention_oracle(
    q_in: &[f64],
    kv_in: &[f64],
    bias: Option<&[f64]>,
    w: [&[f64]; 4],
    lq: usize,
    lk: usize,
    d: usize,
    heads: usize,
) -> Vec<f64> {
    let proj = |x: &[f64], len: usize, m: &[f64]| {
        let mut out = vec![0.0; len * d];
        for i in 0..len {
            for c in 0..d {
                out[i * d + c] = (0..d).map(|k| x[i * d + k] * m[k * d + c]).sum();
            }
        }
        out
    };
    let q = proj(q_in, lq, w[0]);
    let k = proj(kv_in, lk, w[1]);
    let v = proj(kv_in, lk, w[2]);
    let dk = d / heads;
    let mut concat = vec![0.0; lq * d];
    for h in 0..heads {
        let off = h * dk;
        for i in 0..lq {
            let mut scores: Vec<f64> = (0..lk)
                .map(|j| {
                    let dot: f64 = (0..dk).map(|c| q[i * d + off + c] * k[j * d + off + c]).sum();
                    dot / (dk as f64).sqrt() + bias.map_or(0.0, |b| b[i * lk + j])
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in &mut scores {
                *s = (*s - max).exp();
                z += *s;
            }
            for c in 0..dk {
                concat[i * d + off + c] = (0..lk).map(|j| scores[j] / z * v[j * d + off + c]).sum();
            }
        }
    }
    proj(&concat, lq, w[3])
}

fn attention_oracle_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for inst in 0..20 {
        let heads = [1, 2, 4][inst % 3];
        let d = 4 * rng.gen_range(1..=3);
        let (b, lq, lk) = (rng.gen_range(1..=3), rng.gen_range(1..=6), rng.gen_range(1..=7));
        let q_in = random_tensor(&mut rng, &[b, lq, d]);
        let kv_in = random_tensor(&mut rng, &[b, lk, d]);
        let ws: Vec<Tensor<f64>> = (0..4).map(|_| random_tensor(&mut rng, &[d, d])).collect();
        let bias = (inst % 2 == 1).then(|| {
            Tensor::from_fn(&[b, lq, lk], |k| if k % lk == 0 || rng.gen_bool(0.7) { 0.0 } else { -1e9 })
        });
        let tape = Tape::new();
        let vq = tape.constant(q_in.clone());
        let vkv = tape.constant(kv_in.clone());
        let w = AttnWeights {
            wq: tape.constant(ws[0].clone()),
            wk: tape.constant(ws[1].clone()),
            wv: tape.constant(ws[2].clone()),
            wo: tape.constant(ws[3].clone()),
        };
        let vb = bias.clone().map(|t| tape.constant(t));
        let out = multi_head_attention(&tape, vq, vkv, vb, &w, heads).map_err(|e| e.to_string())?;
        let got = tape.value(out);
        for r in 0..b {
            let want = attention_oracle(
                &q_in.data()[r * lq * d..(r + 1) * lq * d],
                &kv_in.data()[r * lk * d..(r + 1) * lk * d],
                bias.as_ref().map(|t| &t.data()[r * lq * lk..(r + 1) * lq * lk]),
                [ws[0].data(), ws[1].data(), ws[2].data(), ws[3].data()],
                lq,
                lk,
                d,
                heads,
            );
            for (x, y) in got.data()[r * lq * d..(r + 1) * lq * d].iter().zip(&want) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max abs diff {worst:.2e}"))?;
    Ok(format!("20 instances, max abs diff {worst:.2e}"))
}

// ---------------------------------------------------------------- 4

fn causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let modes = [Mode::Mmtrans, Mode::IMmtrans, Mode::CodeOnly];
    for c in 0..20 {
        let cfg = small_config(modes[c % 3], 8, [1, 2, 4][c % 3], c as u64);
        let model = Model::<f64>::new(cfg.clone()).map_err(|e| e.to_string())?;
        let samples: Vec<Encoded> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let n = rng.gen_range(2..8);
                let s = rng.gen_range(2..12);
                let y = rng.gen_range(2..8);
                random_sample(&mut rng, &cfg, n, s, y)
            })
            .collect();
        let refs: Vec<&Encoded> = samples.iter().collect();
        let batch = Batch::new(&refs, PadTo::default());
        let base = model.probabilities(&batch).map_err(|e| e.to_string())?;
        let (ly, s) = (batch.target_len(), cfg.comment_vocab);
        let row = rng.gen_range(0..batch.size());
        let j = rng.gen_range(1..batch.y_in.lens[row]);
        let mut changed = batch.clone();
        let slot = &mut changed.y_in.ids[row * ly + j];
        *slot = if *slot == 4 { 5 } else { 4 };
        let pert = model.probabilities(&changed).map_err(|e| e.to_string())?;
        for b in 0..batch.size() {
            let upto = if b == row { j } else { ly };
            let range = b * ly * s..(b * ly + upto) * s;
            ensure(base.data()[range.clone()] == pert.data()[range], || {
                format!("config {c}: row {b} changed before position {j}")
            })?;
        }
        let later = (row * ly + j) * s..(row * ly + j + 1) * s;
        ensure(base.data()[later.clone()] != pert.data()[later], || {
            format!("config {c}: perturbation had no effect at position {j}")
        })?;
    }
    Ok("20 configurations, earlier positions bit-identical".into())
}

// ---------------------------------------------------------------- 5

fn pad_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let modes = [Mode::Mmtrans, Mode::IMmtrans, Mode::CodeOnly];
    let mut worst = 0.0f64;
    for c in 0..20 {
        let cfg = small_config(modes[c % 3], 8, 2, 100 + c as u64);
        let model = Model::<f64>::new(cfg.clone()).map_err(|e| e.to_string())?;
        let samples: Vec<Encoded> = (0..rng.gen_range(1..=3))
            .map(|_| {
                let n = rng.gen_range(1..8);
                let s = rng.gen_range(2..12);
                let y = rng.gen_range(1..8);
                random_sample(&mut rng, &cfg, n, s, y)
            })
            .collect();
        let refs: Vec<&Encoded> = samples.iter().collect();
        let tight = Batch::new(&refs, PadTo::default());
        let pad = PadTo {
            nodes: tight.nodes.len + rng.gen_range(1..5),
            sbt: tight.sbt.len + rng.gen_range(1..5),
            code: tight.code.len + rng.gen_range(1..5),
            comment: tight.target_len() + rng.gen_range(1..5),
        };
        let wide = Batch::new(&refs, pad);
        let p0 = model.probabilities(&tight).map_err(|e| e.to_string())?;
        let p1 = model.probabilities(&wide).map_err(|e| e.to_string())?;
        let (l0, l1, s) = (tight.target_len(), wide.target_len(), cfg.comment_vocab);
        for b in 0..tight.size() {
            for i in 0..tight.y_in.lens[b] {
                let x = &p0.data()[(b * l0 + i) * s..(b * l0 + i + 1) * s];
                let y = &p1.data()[(b * l1 + i) * s..(b * l1 + i + 1) * s];
                for (u, v) in x.iter().zip(y) {
                    worst = worst.max((u - v).abs());
                }
            }
        }
    }
    ensure(worst < 1e-6, || format!("max abs diff {worst:.2e}"))?;
    Ok(format!("20 batches, max abs diff {worst:.2e}"))
}

// ---------------------------------------------------------------- 6

fn gcn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for g in 0..50 {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(1..=6);
        let normalize = g % 2 == 1;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(0.35) {
                    edges.push((i, j));
                }
            }
        }
        let sample = Encoded {
            nodes: vec![4; n],
            edges: edges.clone(),
            sbt: vec![4],
            code: vec![4],
            comment: vec![4],
        };
        let batch = Batch::new(&[&sample], PadTo::default());
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 1.0;
        }
        for &(i, j) in &edges {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
        if normalize {
            let deg: Vec<f64> = (0..n).map(|i| a[i * n..(i + 1) * n].iter().sum()).collect();
            for i in 0..n {
                for j in 0..n {
                    a[i * n + j] /= (deg[i] * deg[j]).sqrt();
                }
            }
        }
        let a_t = adjacency_tensor::<f64>(&batch, normalize);
        for (x, y) in a_t.data().iter().zip(&a) {
            worst = worst.max((x - y).abs());
        }
        let h = random_tensor(&mut rng, &[1, n, d]);
        let w = random_tensor(&mut rng, &[d, d]);
        let tape = Tape::new();
        let (vh, va, vw) = (tape.constant(h.clone()), tape.constant(a_t), tape.constant(w.clone()));
        let out = gcn_layer(&tape, vh, va, vw).map_err(|e| e.to_string())?;
        let got = tape.value(out);
        for i in 0..n {
            for c in 0..d {
                let mut acc = 0.0;
                for k in 0..n {
                    let hw: f64 = (0..d).map(|m| h.data()[k * d + m] * w.data()[m * d + c]).sum();
                    acc += a[i * n + k] * hw;
                }
                worst = worst.max((got.data()[i * d + c] - acc.max(0.0)).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max abs diff {worst:.2e}"))?;
    Ok(format!("50 graphs, max abs diff {worst:.2e}"))
}

// ---------------------------------------------------------------- 7

#[derive(serde::Deserialize)]
struct FixtureRow {
    candidate: Vec<String>,
    reference: Vec<String>,
    sentence_bleu: f64,
    rouge_lcs_f1: f64,
    meteor: f64,
}

#[derive(serde::Deserialize)]
struct Fixture {
    corpus_bleu: f64,
    pairs: Vec<FixtureRow>,
}

fn metric_oracles() -> Outcome {
    let f: Fixture = serde_json::from_str(include_str!("../../core/tests/fixtures/metric_pairs.json"))
        .map_err(|e| e.to_string())?;
    ensure(f.pairs.len() == 50, || format!("{} fixture pairs", f.pairs.len()))?;
    let (mut db, mut dr, mut dm) = (0.0f64, 0.0f64, 0.0f64);
    for r in &f.pairs {
        let e = |e: metrics::MetricError| e.to_string();
        db = db.max((metrics::sentence_bleu(&r.candidate, &r.reference).map_err(e)? - r.sentence_bleu).abs());
        dr = dr.max((metrics::rouge_lcs_f1(&r.candidate, &r.reference).map_err(e)? - r.rouge_lcs_f1).abs());
        dm = dm.max((metrics::meteor(&r.candidate, &r.reference).map_err(e)? - r.meteor).abs());
    }
    let pairs: Vec<(Vec<String>, Vec<String>)> =
        f.pairs.iter().map(|r| (r.candidate.clone(), r.reference.clone())).collect();
    let report = MetricReport::compute(&pairs).map_err(|e| e.to_string())?;
    let dc = (report.c_bleu - f.corpus_bleu).abs();
    let stems: std::collections::BTreeMap<String, String> =
        serde_json::from_str(include_str!("../../core/tests/fixtures/porter_stems.json")).map_err(|e| e.to_string())?;
    let bad_stems = stems.iter().filter(|(w, s)| metrics::stem(w) != **s).count();
    let detail = format!(
        "S-BLEU {db:.1e}, C-BLEU {dc:.1e}, ROUGE {dr:.1e}, METEOR {dm:.1e}, stems {}/{}",
        stems.len() - bad_stems,
        stems.len()
    );
    ensure(db <= 1e-6 && dc <= 1e-6 && dr <= 1e-6 && dm <= 1e-4 && bad_stems == 0, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

struct ToyData {
    records: Vec<Record>,
    vocabs: Vocabs,
    encoded: Vec<Encoded>,
}

fn toy_data() -> Result<ToyData, String> {
    let units: Vec<SourceUnit> = corpus::discover_sources(&toy_corpus()).map_err(|e| e.to_string())?;
    let built = corpus::build_pairs(&units);
    let records: Vec<Record> = built.pairs.iter().map(Record::from_pair).collect();
    let vocabs = Vocabs::build(&records).map_err(|e| e.to_string())?;
    let encoded = records.iter().map(|r| Encoded::new(r, &vocabs)).collect();
    Ok(ToyData { records, vocabs, encoded })
}

fn train_toy(data: &ToyData, mode: Mode, train: TrainConfig) -> Result<Trainer<f32>, String> {
    let model_cfg = ModelConfig {
        d_model: 256,
        d_ff: 512,
        heads: 4,
        mode,
        dropout: 0.0,
        comment_vocab: data.vocabs.comment.len(),
        sbt_vocab: data.vocabs.sbt.len(),
        nodes_vocab: data.vocabs.nodes.len(),
        code_vocab: data.vocabs.code.len(),
        seed: 0,
        ..ModelConfig::default()
    };
    let model = Model::<f32>::new(model_cfg).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::new(model, train, data.vocabs.digests().to_vec()).map_err(|e| e.to_string())?;
    let references: Vec<Vec<String>> = data.records.iter().map(|r| r.comment.clone()).collect();
    let mut validator = GreedyBleu {
        samples: &data.encoded,
        references: &references,
        vocabs: &data.vocabs,
        batch_size: 100,
        max_decode: 20,
    };
    trainer.run(&data.encoded, &mut validator, None).map_err(|e| e.to_string())?;
    Ok(trainer)
}

fn overfit() -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| e.to_string())?;
    pool.install(|| {
        let data = toy_data()?;
        ensure(data.records.len() == 30, || format!("toy corpus has {} pairs", data.records.len()))?;
        let config = TrainConfig {
            warmup_steps: 400,
            batch_size: 100,
            validate_every: 25,
            validate_each_epoch: false,
            max_epochs: 10_000,
            patience: 1_000,
            max_steps: Some(2000),
            stop_at_sbleu: Some(0.95),
            ..TrainConfig::default()
        };
        let t = train_toy(&data, Mode::Mmtrans, config.clone())?;
        let best = t.state.best_val_sbleu.unwrap_or(0.0);
        let detail = format!("validation S-BLEU {best:.3} at step {}", t.state.step);
        ensure(best >= 0.95 && t.state.step <= 2000, || detail.clone())?;
        let smoke = TrainConfig {
            max_steps: Some(10),
            validate_every: 5,
            stop_at_sbleu: None,
            ..config
        };
        for mode in [Mode::IMmtrans, Mode::CodeOnly] {
            let t = train_toy(&data, mode, smoke.clone())?;
            let loss = t.log.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
            ensure(t.state.step == 10 && loss.is_finite(), || format!("{} smoke run failed", mode.name()))?;
        }
        Ok(format!("{detail}; i-mmtrans and code-only smoke runs completed"))
    })
}

// ---------------------------------------------------------------- 9

struct Scripted<'a> {
    scores: &'a [f64],
    calls: Cell<usize>,
}

impl Validator<f64> for Scripted<'_> {
    fn score(&mut self, _: &Model<f64>) -> Result<f64, TrainError> {
        let i = self.calls.get();
        self.calls.set(i + 1);
        Ok(self.scores.get(i).copied().unwrap_or(0.0))
    }
}

fn validations_until_stop(scores: &[f64]) -> Result<(usize, Option<f64>), String> {
    let cfg = small_config(Mode::CodeOnly, 8, 2, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<Encoded> = (0..4).map(|_| random_sample(&mut rng, &cfg, 3, 5, 3)).collect();
    let model = Model::<f64>::new(cfg).map_err(|e| e.to_string())?;
    let train = TrainConfig {
        warmup_steps: 10,
        batch_size: 2,
        validate_every: 1,
        validate_each_epoch: false,
        max_steps: Some(200),
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model, train, Vec::new()).map_err(|e| e.to_string())?;
    let mut v = Scripted { scores, calls: Cell::new(0) };
    trainer.run(&samples, &mut v, None).map_err(|e| e.to_string())?;
    Ok((v.calls.get(), trainer.state.best_val_sbleu))
}

fn protocol_fidelity() -> Outcome {
    let cases: [(&[f64], usize, f64); 3] = [
        (&[0.1, 0.2, 0.2, 0.1, 0.15, 0.19, 0.2, 0.9], 7, 0.2),
        (&[0.3, 0.1, 0.1, 0.1, 0.1, 0.4, 0.1, 0.1, 0.1, 0.1, 0.1, 0.9], 11, 0.4),
        (&[0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.9], 6, 0.5),
    ];
    for (scores, expected, best) in cases {
        let (calls, got_best) = validations_until_stop(scores)?;
        ensure(calls == expected && got_best == Some(best), || {
            format!("scores {scores:?}: stopped after {calls} validations (best {got_best:?}), expected {expected}")
        })?;
    }
    let closed = |s: f64, d: f64, w: f64| d.powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5));
    for (d, w) in [(256, 4000), (512, 4000), (256, 400), (32, 100)] {
        for s in [1, w, 10 * w] {
            let got = lr_schedule(s, d, w);
            let want = closed(s as f64, d as f64, w as f64);
            ensure((got - want).abs() <= 1e-12, || format!("lr({s}; d={d}, w={w}) = {got}, expected {want}"))?;
        }
        let peak = (1..=10 * w)
            .max_by(|&a, &b| lr_schedule(a, d, w).total_cmp(&lr_schedule(b, d, w)))
            .unwrap();
        ensure(peak == w, || format!("lr peaks at {peak}, warmup {w}"))?;
    }
    Ok("stop after 5 non-improving validations; schedule matches closed form".into())
}

// ---------------------------------------------------------------- 10

fn files_of(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        if e.path().is_file() {
            out.push((e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).map_err(|e| e.to_string())?));
        }
    }
    out.sort();
    Ok(out)
}

fn step_loss(run: &Path, step: usize) -> Result<f64, String> {
    let log = fs::read_to_string(run.join("metrics.jsonl")).map_err(|e| e.to_string())?;
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if v["step"].as_u64() == Some(step as u64) {
            return v["train_loss"].as_f64().ok_or_else(|| "train_loss missing".to_string());
        }
    }
    Err(format!("no log line for step {step}"))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let build = |name: &str| -> Result<PathBuf, String> {
        let out = tmp.path().join(name);
        commands::build_corpus(&BuildCorpusArgs {
            src: toy_corpus(),
            out: out.clone(),
            seed: Some(11),
            limits: Default::default(),
        })
        .map_err(|e| e.to_string())?;
        Ok(out)
    };
    let (d1, d2) = (build("data1")?, build("data2")?);
    let (f1, f2) = (files_of(&d1)?, files_of(&d2)?);
    ensure(!f1.is_empty() && f1 == f2, || "dataset files differ between builds".into())?;

    let config = tmp.path().join("det.toml");
    fs::write(
        &config,
        "precision = \"f64\"\nvalidate_on = \"train\"\nd_model = 16\nd_ff = 32\nheads = 4\n\
         dropout = 0.0\nwarmup_steps = 50\nbatch_size = 8\nvalidate_every = 0\n\
         validate_each_epoch = false\nmax_epochs = 1000\n",
    )
    .map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<f64, String> {
        let out = tmp.path().join(name);
        commands::train(&TrainArgs {
            config: Some(config.clone()),
            data: Some(d1.clone()),
            out: Some(out.clone()),
            mode: None,
            heads: None,
            seed: Some(3),
            max_steps: Some(100),
            precision: None,
            resume: false,
        })
        .map_err(|e| e.to_string())?;
        step_loss(&out, 100)
    };
    let (a, b) = (run("run1")?, run("run2")?);
    ensure((a - b).abs() <= 1e-9, || format!("step-100 losses {a} and {b}"))?;
    Ok(format!("{} identical dataset files; step-100 loss {a:.9} twice", f1.len()))
}

// ----------------------------------------------------------------

fn main() {
    let criteria = [
        Criterion { id: 1, name: "sbt round trip", budget: Duration::from_secs(10), run: sbt_round_trip },
        Criterion { id: 2, name: "gradient check", budget: Duration::from_secs(120), run: gradient_check },
        Criterion { id: 3, name: "attention oracle", budget: Duration::from_secs(5), run: attention_oracle_check },
        Criterion { id: 4, name: "causality", budget: Duration::from_secs(30), run: causality },
        Criterion { id: 5, name: "pad invariance", budget: Duration::from_secs(30), run: pad_invariance },
        Criterion { id: 6, name: "gcn oracle", budget: Duration::from_secs(5), run: gcn_oracle },
        Criterion { id: 7, name: "metric oracles", budget: Duration::from_secs(10), run: metric_oracles },
        Criterion { id: 8, name: "overfit", budget: Duration::from_secs(1800), run: overfit },
        Criterion { id: 9, name: "protocol fidelity", budget: Duration::from_secs(5), run: protocol_fidelity },
        Criterion { id: 10, name: "pipeline determinism", budget: Duration::from_secs(600), run: determinism },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > c.budget => Err(format!("{detail}; over the {:?} budget", c.budget)),
            other => other,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("{tag} [{:>2}] {:<21} {:>8.2}s  {detail}", c.id, c.name, took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
