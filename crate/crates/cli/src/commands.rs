//! One function per subcommand. Each returns a summary the binary prints;
//! failures carry their exit status.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mmtrans::batch::{sequential_batches, Encoded};
use mmtrans::corpus::{self, DatasetMeta, DropReason, Limits, PairSample, Record};
use mmtrans::metrics::MetricReport;
use mmtrans::model::{Checkpoint, Mode, Model};
use mmtrans::solc::{self, MethodRecord};
use mmtrans::trainer::{self, GreedyBleu, TrainError, Trainer, LAST_CHECKPOINT};
use mmtrans::vocab::Vocabs;
use mmtrans::{modalities, Scalar};

use crate::config::{env_seed, Precision, RunConfig, ValidateOn};
use crate::{CliError, CliResult};

/// File name of the resolved configuration written into a run directory.
pub const RUN_CONFIG: &str = "run.toml";

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::input(e.to_string())
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Io { .. } | TrainError::Tensor(_) => CliError::internal(e.to_string()),
        _ => CliError::input(e.to_string()),
    }
}

// ---------------------------------------------------------------- build-corpus

#[derive(Clone, Debug)]
pub struct BuildCorpusArgs {
    pub src: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub limits: Limits,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuildSummary {
    pub files: usize,
    pub methods: usize,
    pub pairs: usize,
    pub dropped: BTreeMap<DropReason, usize>,
    pub rejected: Vec<String>,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl BuildSummary {
    pub fn report(&self) -> String {
        let mut out = format!(
            "files {}  methods {}  pairs {}\n",
            self.files, self.methods, self.pairs
        );
        let name = |r: &DropReason| match r {
            DropReason::Kind => "kind-filtered",
            DropReason::NoComment => "no-comment",
            DropReason::TooShort => "fewer than 4 words",
            DropReason::TooLong => "too many tokens",
        };
        for (r, n) in &self.dropped {
            out.push_str(&format!("dropped ({}) {n}\n", name(r)));
        }
        for f in &self.rejected {
            out.push_str(&format!("rejected {f}\n"));
        }
        out.push_str(&format!("train {}  valid {}  test {}", self.train, self.valid, self.test));
        out
    }
}

pub fn build_corpus(args: &BuildCorpusArgs) -> CliResult<BuildSummary> {
    let l = &args.limits;
    if l.max_sbt < 3 || l.max_nodes == 0 || l.max_code < 3 || l.max_comment < corpus::MIN_COMMENT_WORDS {
        return Err(CliError::input(format!(
            "limits too small: sbt and code need at least 3 tokens, nodes 1, comments {}",
            corpus::MIN_COMMENT_WORDS
        )));
    }
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let units = corpus::discover_sources(&args.src)
        .map_err(|e| CliError::input(format!("{}: {e}", args.src.display())))?;
    if units.is_empty() {
        return Err(CliError::input(format!(
            "empty corpus: no .sol files under {}",
            args.src.display()
        )));
    }
    let build = corpus::build_pairs_with(&units, l.max_comment);
    for (path, e) in &build.rejected {
        log::warn!("skipping {path}: {e}");
    }
    if build.pairs.is_empty() {
        return Err(CliError::input(format!(
            "empty corpus: no usable <method, comment> pairs under {}",
            args.src.display()
        )));
    }
    let records: Vec<Record> = build.pairs.iter().map(|p| Record::from_pair_with(p, l)).collect();
    let split = corpus::split_dataset(&records, seed).map_err(input_err)?;
    corpus::write_dataset_with(&split, &args.out, l).map_err(input_err)?;
    Vocabs::build(&split.train)
        .and_then(|v| v.save(&args.out))
        .map_err(|e| CliError::internal(e.to_string()))?;
    Ok(BuildSummary {
        files: units.len(),
        methods: build.methods,
        pairs: build.pairs.len(),
        dropped: build.dropped,
        rejected: build.rejected.iter().map(|(p, e)| format!("{p}: {e}")).collect(),
        train: split.train.len(),
        valid: split.validation.len(),
        test: split.test.len(),
    })
}

// ----------------------------------------------------------------------- train

#[derive(Clone, Debug, Default)]
pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
    pub heads: Option<usize>,
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
    pub precision: Option<Precision>,
    /// Continue from `last.ckpt` in the run directory if present.
    pub resume: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub out: PathBuf,
    pub steps: usize,
    pub epochs: usize,
    pub best_val_sbleu: Option<f64>,
    pub last_loss: Option<f64>,
}

impl TrainSummary {
    pub fn report(&self) -> String {
        let best = self
            .best_val_sbleu
            .map_or("n/a".to_string(), |b| format!("{:.2}", b * 100.0));
        format!(
            "steps {}  epochs {}  best validation S-BLEU {best}  checkpoints in {}",
            self.steps,
            self.epochs,
            self.out.display()
        )
    }
}

/// The file config with command-line overrides applied.
pub fn resolve_train_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if args.data.is_some() {
        cfg.data = args.data.clone();
    }
    if args.out.is_some() {
        cfg.out = args.out.clone();
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(h) = args.heads {
        cfg.heads = h;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.max_steps.is_some() {
        cfg.max_steps = args.max_steps;
    }
    if let Some(p) = args.precision {
        cfg.precision = p;
    }
    cfg.seed = Some(cfg.resolved_seed()?);
    Ok(cfg)
}

fn load_vocabs(dir: &Path) -> CliResult<Vocabs> {
    Vocabs::load(dir).map_err(|e| CliError::input(format!("vocabularies in {}: {e}", dir.display())))
}

pub fn train(args: &TrainArgs) -> CliResult<TrainSummary> {
    let cfg = resolve_train_config(args)?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::input("no dataset: pass --data or set `data` in the config"))?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::input("no run directory: pass --out or set `out` in the config"))?;
    let seed = cfg.seed.unwrap_or(0);
    let split = corpus::read_dataset(&data).map_err(input_err)?;
    let meta = corpus::read_meta(&data).map_err(input_err)?;
    let vocabs = load_vocabs(&data)?;
    let mut model_cfg = cfg.model_config(&vocabs, seed);
    apply_limits(&mut model_cfg, &meta);
    model_cfg.validate().map_err(input_err)?;
    for r in split.train.iter().chain(&split.validation) {
        cfg.mode.check_record(r).map_err(input_err)?;
    }
    let validation = match cfg.validate_on {
        ValidateOn::Valid => &split.validation,
        ValidateOn::Train => &split.train,
    };
    if validation.is_empty() {
        return Err(CliError::input(
            "the validation split is empty; set validate_on = \"train\" to validate on the training data",
        ));
    }
    let train_cfg = cfg.train_config(seed);
    train_cfg.validate().map_err(train_err)?;

    fs::create_dir_all(&out).map_err(|e| CliError::input(format!("{}: {e}", out.display())))?;
    fs::write(out.join(RUN_CONFIG), cfg.to_toml()).map_err(|e| CliError::internal(e.to_string()))?;
    vocabs.save(&out).map_err(|e| CliError::internal(e.to_string()))?;

    let job = TrainJob {
        out: &out,
        split_train: &split.train,
        validation,
        vocabs: &vocabs,
        model_cfg,
        train_cfg,
        resume: args.resume,
    };
    match cfg.precision {
        Precision::F32 => job.run::<f32>(),
        Precision::F64 => job.run::<f64>(),
    }
}

fn apply_limits(c: &mut mmtrans::model::ModelConfig, meta: &DatasetMeta) {
    c.max_sbt = meta.max_sbt;
    c.max_nodes = meta.max_nodes;
    c.max_code = meta.max_code;
    c.max_comment = meta.max_comment;
}

struct TrainJob<'a> {
    out: &'a Path,
    split_train: &'a [Record],
    validation: &'a [Record],
    vocabs: &'a Vocabs,
    model_cfg: mmtrans::model::ModelConfig,
    train_cfg: mmtrans::trainer::TrainConfig,
    resume: bool,
}

impl TrainJob<'_> {
    fn run<T: Scalar>(self) -> CliResult<TrainSummary> {
        let digests = self.vocabs.digests().to_vec();
        let last = self.out.join(LAST_CHECKPOINT);
        let mut t = if self.resume && last.exists() {
            let ck = Checkpoint::load(&last).map_err(input_err)?;
            ck.check_vocab(&digests).map_err(input_err)?;
            ck.check_config(&self.model_cfg).map_err(input_err)?;
            log::info!("resuming from {}", last.display());
            Trainer::<T>::resume(&ck).map_err(train_err)?
        } else {
            let model = Model::<T>::new(self.model_cfg).map_err(input_err)?;
            Trainer::new(model, self.train_cfg, digests).map_err(train_err)?
        };
        let encode = |rs: &[Record]| rs.iter().map(|r| Encoded::new(r, self.vocabs)).collect::<Vec<_>>();
        let train = encode(self.split_train);
        let val = encode(self.validation);
        let refs: Vec<Vec<String>> = self.validation.iter().map(|r| r.comment.clone()).collect();
        let mut validator = GreedyBleu {
            samples: &val,
            references: &refs,
            vocabs: self.vocabs,
            batch_size: t.config.batch_size,
            max_decode: t.config.max_decode,
        };
        t.run(&train, &mut validator, Some(self.out)).map_err(train_err)?;
        Ok(TrainSummary {
            out: self.out.to_path_buf(),
            steps: t.state.step,
            epochs: t.state.epoch,
            best_val_sbleu: t.state.best_val_sbleu,
            last_loss: t.log.last().map(|r| r.train_loss),
        })
    }
}

// -------------------------------------------------------------------- evaluate

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: SplitName,
    /// Defaults to `predictions.<split>.txt` beside the checkpoint.
    pub predictions: Option<PathBuf>,
    pub precision: Precision,
    pub batch_size: usize,
    pub max_decode: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateSummary {
    pub report: MetricReport,
    pub predictions: PathBuf,
    pub references: PathBuf,
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<EvaluateSummary> {
    let ck = Checkpoint::load(&args.checkpoint).map_err(input_err)?;
    let vocabs = load_vocabs(&args.data)?;
    ck.check_vocab(&vocabs.digests()).map_err(input_err)?;
    let split = corpus::read_dataset(&args.data).map_err(input_err)?;
    let records = match args.split {
        SplitName::Train => &split.train,
        SplitName::Valid => &split.validation,
        SplitName::Test => &split.test,
    };
    let (report, preds) = match args.precision {
        Precision::F32 => run_eval::<f32>(&ck, &vocabs, records, args),
        Precision::F64 => run_eval::<f64>(&ck, &vocabs, records, args),
    }?;
    let dir = args.checkpoint.parent().unwrap_or(Path::new("."));
    let pred_path = args
        .predictions
        .clone()
        .unwrap_or_else(|| dir.join(format!("predictions.{}.txt", args.split.name())));
    let ref_path = pred_path.with_file_name(format!("references.{}.txt", args.split.name()));
    let refs: Vec<Vec<String>> = records.iter().map(|r| r.comment.clone()).collect();
    trainer::write_predictions(&pred_path, &preds).map_err(train_err)?;
    trainer::write_predictions(&ref_path, &refs).map_err(train_err)?;
    Ok(EvaluateSummary {
        report,
        predictions: pred_path,
        references: ref_path,
    })
}

fn run_eval<T: Scalar>(
    ck: &Checkpoint,
    vocabs: &Vocabs,
    records: &[Record],
    args: &EvaluateArgs,
) -> CliResult<(MetricReport, Vec<Vec<String>>)> {
    let model = ck.model::<T>().map_err(input_err)?;
    trainer::evaluate(&model, vocabs, records, args.batch_size, args.max_decode).map_err(|e| match e {
        TrainError::EmptySplit => CliError::input(format!("the {} split is empty", args.split.name())),
        e => train_err(e),
    })
}

// ----------------------------------------------------------------------- score

fn read_lines(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

pub fn score(predictions: &Path, references: &Path) -> CliResult<MetricReport> {
    let preds = read_lines(predictions)?;
    let refs = read_lines(references)?;
    if preds.len() != refs.len() {
        return Err(CliError::input(format!(
            "line count mismatch: {} has {} lines, {} has {}",
            predictions.display(),
            preds.len(),
            references.display(),
            refs.len()
        )));
    }
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(CliError::input(format!(
            "{}:{}: empty reference",
            references.display(),
            i + 1
        )));
    }
    let pairs: Vec<(Vec<String>, Vec<String>)> = preds.into_iter().zip(refs).collect();
    MetricReport::compute(&pairs).map_err(input_err)
}

// ------------------------------------------------------- summarize and inspect

/// Finds `NAME` or `Contract.NAME` in a source file; the first match wins.
pub fn find_method(sol: &Path, name: &str) -> CliResult<MethodRecord> {
    let source = fs::read_to_string(sol).map_err(|e| CliError::input(format!("{}: {e}", sol.display())))?;
    let unit = solc::parse_source(&source).map_err(|e| CliError::input(format!("{}: {e}", sol.display())))?;
    let methods = solc::extract_methods(&unit, &source).map_err(|e| CliError::input(format!("{}: {e}", sol.display())))?;
    let (contract, method) = match name.split_once('.') {
        Some((c, m)) => (Some(c), m),
        None => (None, name),
    };
    methods
        .into_iter()
        .find(|m| m.name == method && contract.is_none_or(|c| m.contract == c))
        .ok_or_else(|| CliError::lookup(format!("no method `{name}` in {}", sol.display())))
}

/// Model inputs for a method without a comment.
pub fn method_record(m: &MethodRecord, source_path: &str, limits: &Limits) -> Record {
    let pair = PairSample {
        method_ast: modalities::normalize_literals(&m.ast),
        code_tokens: modalities::code_tokens(&m.tokens),
        comment_tokens: Vec::new(),
        contract_id: format!("{source_path}::{}", m.contract),
        method_name: m.name.clone(),
    };
    Record::from_pair_with(&pair, limits)
}

#[derive(Clone, Debug)]
pub struct SummarizeArgs {
    pub checkpoint: PathBuf,
    pub sol: PathBuf,
    pub method: String,
    /// Defaults to the checkpoint's directory.
    pub vocab: Option<PathBuf>,
    pub precision: Precision,
    pub max_decode: usize,
}

pub fn summarize(args: &SummarizeArgs) -> CliResult<String> {
    let ck = Checkpoint::load(&args.checkpoint).map_err(input_err)?;
    let vocab_dir = args
        .vocab
        .clone()
        .unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).to_path_buf());
    let vocabs = load_vocabs(&vocab_dir)?;
    ck.check_vocab(&vocabs.digests()).map_err(input_err)?;
    let m = find_method(&args.sol, &args.method)?;
    let c = &ck.config;
    let limits = Limits {
        max_sbt: c.max_sbt,
        max_nodes: c.max_nodes,
        max_code: c.max_code,
        max_comment: c.max_comment,
    };
    let record = method_record(&m, &args.sol.display().to_string(), &limits);
    let enc = Encoded::new(&record, &vocabs);
    let max_decode = args.max_decode.min(c.max_comment + 1);
    let ids = match args.precision {
        Precision::F32 => decode_one::<f32>(&ck, &enc, max_decode),
        Precision::F64 => decode_one::<f64>(&ck, &enc, max_decode),
    }?;
    Ok(vocabs.comment.decode(&ids).join(" "))
}

fn decode_one<T: Scalar>(ck: &Checkpoint, enc: &Encoded, max_decode: usize) -> CliResult<Vec<u32>> {
    let model = ck.model::<T>().map_err(input_err)?;
    let batch = sequential_batches(std::slice::from_ref(enc), 1).remove(0);
    let mut out = model
        .greedy_decode(&batch, max_decode)
        .map_err(|e| CliError::internal(e.to_string()))?;
    Ok(out.remove(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Show {
    Sbt,
    Graph,
    Code,
}

pub fn inspect(sol: &Path, method: &str, show: Show) -> CliResult<String> {
    let m = find_method(sol, method)?;
    let r = method_record(&m, &sol.display().to_string(), &Limits::default());
    Ok(match show {
        Show::Sbt => r.sbt.join(" "),
        Show::Code => r.code.join(" "),
        Show::Graph => {
            let mut out = format!("nodes {}\n", r.nodes.len());
            for (i, n) in r.nodes.iter().enumerate() {
                out.push_str(&format!("{i} {n}\n"));
            }
            out.push_str(&format!("edges {}\n", r.edges.len()));
            for (i, j) in &r.edges {
                out.push_str(&format!("{i} {j}\n"));
            }
            out.pop();
            out
        }
    })
}
