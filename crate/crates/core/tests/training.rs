//! Trainer behaviour: resumption, best-checkpoint selection, optimisation.

use mmtrans::batch::{sequential_batches, Encoded};
use mmtrans::model::checkpoint::Checkpoint;
use mmtrans::model::{Mode, Model, ModelConfig};
use mmtrans::trainer::{Adam, TrainConfig, TrainError, Trainer, Validator, BEST_CHECKPOINT, LAST_CHECKPOINT};
use mmtrans::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(dropout: f64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_ff: 16,
        heads: 2,
        mode: Mode::Mmtrans,
        dropout,
        comment_vocab: 12,
        sbt_vocab: 10,
        nodes_vocab: 10,
        code_vocab: 10,
        seed: 4,
        ..ModelConfig::default()
    }
}

fn samples(n: usize) -> Vec<Encoded> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    (0..n)
        .map(|_| {
            let nodes = rng.gen_range(2..6);
            let ids = |rng: &mut ChaCha8Rng, k: usize, v: u32| (0..k).map(|_| rng.gen_range(4..v)).collect();
            Encoded {
                nodes: ids(&mut rng, nodes, 10),
                edges: (1..nodes).map(|j| (j - 1, j)).collect(),
                sbt: ids(&mut rng, 7, 10),
                code: ids(&mut rng, 6, 10),
                comment: ids(&mut rng, 4, 12),
            }
        })
        .collect()
}

struct Scripted(Vec<f64>, usize);

impl Validator<f64> for Scripted {
    fn score(&mut self, _: &Model<f64>) -> Result<f64, TrainError> {
        self.1 += 1;
        Ok(self.0.get(self.1 - 1).copied().unwrap_or(0.0))
    }
}

fn train_config(max_steps: usize) -> TrainConfig {
    TrainConfig {
        warmup_steps: 20,
        batch_size: 3,
        validate_every: 0,
        validate_each_epoch: false,
        max_steps: Some(max_steps),
        seed: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn resumed_run_reproduces_uninterrupted_losses() {
    let data = samples(8);
    let model = Model::<f64>::new(config(0.1)).unwrap();
    let mut whole = Trainer::new(model.clone(), train_config(10), Vec::new()).unwrap();
    whole.run(&data, &mut Scripted(Vec::new(), 0), None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(model, train_config(7), Vec::new()).unwrap();
    first.run(&data, &mut Scripted(Vec::new(), 0), Some(dir.path())).unwrap();
    let ck = Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
    let mut second = Trainer::<f64>::resume(&ck).unwrap();
    second.config.max_steps = Some(10);
    second.run(&data, &mut Scripted(Vec::new(), 0), None).unwrap();

    let tail: Vec<f64> = whole.log[7..].iter().map(|r| r.train_loss).collect();
    let resumed: Vec<f64> = second.log.iter().map(|r| r.train_loss).collect();
    assert_eq!(resumed.len(), 3);
    for (a, b) in tail.iter().zip(&resumed) {
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }
    assert_eq!(second.log[0].step, 8);
}

#[test]
fn best_checkpoint_holds_the_highest_validation_score() {
    let data = samples(6);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        validate_every: 1,
        patience: 10,
        ..train_config(6)
    };
    let mut t = Trainer::new(Model::<f64>::new(config(0.0)).unwrap(), cfg, Vec::new()).unwrap();
    let scores = vec![0.2, 0.5, 0.3, 0.4, 0.5, 0.1];
    t.run(&data, &mut Scripted(scores, 0), Some(dir.path())).unwrap();
    let best = Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(best.state["train"]["best_val_sbleu"].as_f64(), Some(0.5));
    assert_eq!(best.state["train"]["step"].as_u64(), Some(2));
    let last = Checkpoint::load(&dir.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(last.state["train"]["step"].as_u64(), Some(6));
    let logged: Vec<Option<f64>> = t.log.iter().map(|r| r.val_sbleu).collect();
    assert_eq!(logged, [0.2, 0.5, 0.3, 0.4, 0.5, 0.1].map(Some));
    let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 6);
}

#[test]
fn training_loss_falls_on_a_fixed_batch() {
    let data = samples(4);
    let batch = sequential_batches(&data, 4).remove(0);
    let cfg = TrainConfig {
        warmup_steps: 10,
        ..train_config(60)
    };
    let mut t = Trainer::new(Model::<f64>::new(config(0.0)).unwrap(), cfg, Vec::new()).unwrap();
    let losses: Vec<f64> = (0..60).map(|_| t.step(&batch).unwrap()).collect();
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[55..].iter().sum::<f64>() / 5.0;
    assert!(tail < 0.5 * head, "{head} -> {tail}");
}

#[test]
fn adam_follows_the_bias_corrected_recursion() {
    let grads = [0.3, -1.2, 0.05, 2.0, -0.7];
    let rates = [1e-3, 2e-3, 3e-3, 2e-3, 1e-3];
    let (b1, b2, eps) = (0.9, 0.98, 1e-9);
    let mut p = vec![Tensor::<f64>::from_f64(&[1], &[0.5]).unwrap()];
    let mut adam = Adam::new(&p, b1, b2, eps);
    let (mut theta, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
    for (k, (&g, &lr)) in grads.iter().zip(&rates).enumerate() {
        let t = (k + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        theta -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        adam.step(&mut p, &[Tensor::from_f64(&[1], &[g]).unwrap()], lr).unwrap();
        assert!((p[0].item() - theta).abs() < 1e-15, "step {t}");
    }
    assert_eq!(adam.t, 5);
}

#[test]
fn dropout_changes_training_but_not_evaluation() {
    let data = samples(4);
    let batch = sequential_batches(&data, 4).remove(0);
    let model = Model::<f64>::new(config(0.3)).unwrap();
    let plain = Model::<f64>::new(config(0.0)).unwrap();
    assert_eq!(model.params, plain.params);
    assert_eq!(model.eval_loss(&batch).unwrap(), plain.eval_loss(&batch).unwrap());
    let mut a = Trainer::new(model, train_config(1), Vec::new()).unwrap();
    let mut b = Trainer::new(plain, train_config(1), Vec::new()).unwrap();
    assert_ne!(a.step(&batch).unwrap(), b.step(&batch).unwrap());
}
