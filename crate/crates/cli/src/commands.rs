use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use bartlab::data::{make_mix, make_splits, write_jsonl, write_manifest, SplitSpec};
use bartlab::decode::{beam_search, BeamConfig, TransformerScorer};
use bartlab::metrics::{
    corpus_stats, evaluate_run, macro_average, render_rouge_csv, render_stats_csv, render_stats_table, F1Row,
    RunEvaluation,
};
use bartlab::model::checkpoint::checkpoint_file_name;
use bartlab::model::{Batch, Checkpoint, ModelConfig};
use bartlab::noising::NoiseConfig;
use bartlab::optim::{self, FinetuneSource, RunOptions, Start, TrainConfig, TrainOutcome};
use bartlab::textnorm::{normalize_eval, NormRules};
use bartlab::tokenizer::{train_vocab, SeqKind, Vocabulary, BOS_ID, EOS_ID};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::io::{read_documents, read_examples, read_text, read_texts, read_tokenizer_corpus};
use crate::manifest::RunManifest;
use crate::{manifest_path_for_file, Common};

pub enum Outcome {
    Done,
    /// Training stopped by SIGINT after writing this checkpoint.
    Interrupted(PathBuf),
}

type CmdResult = Result<Outcome, CliError>;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// `out` with its extension replaced; `results` and `results.csv` both
/// give `results.<ext>`.
fn with_ext(out: &Path, ext: &str) -> PathBuf {
    out.with_extension(ext)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

#[derive(Args, Clone, Debug)]
pub struct NormFlags {
    /// Keep tatweel (U+0640).
    #[arg(long)]
    keep_tatweel: bool,
    /// Keep diacritics.
    #[arg(long)]
    keep_diacritics: bool,
    /// Do not unify alef variants.
    #[arg(long)]
    keep_alef: bool,
    /// Do not map alef maqsura to yaa.
    #[arg(long)]
    keep_yaa: bool,
    /// Do not split punctuation from words.
    #[arg(long)]
    keep_punct: bool,
}

impl NormFlags {
    fn rules(&self) -> NormRules {
        NormRules {
            remove_tatweel: !self.keep_tatweel,
            remove_diacritics: !self.keep_diacritics,
            normalize_alef: !self.keep_alef,
            normalize_yaa: !self.keep_yaa,
            separate_punct: !self.keep_punct,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let r = self.rules();
        json!({
            "remove_tatweel": r.remove_tatweel,
            "remove_diacritics": r.remove_diacritics,
            "normalize_alef": r.normalize_alef,
            "normalize_yaa": r.normalize_yaa,
            "separate_punct": r.separate_punct,
        })
    }
}

// ---------------------------------------------------------------- tokenizer

#[derive(Args)]
pub struct TrainTokenizerArgs {
    /// Text file with one document per line, or a `.jsonl` corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 50_000)]
    vocab_size: usize,
    /// Fraction of character occurrences the alphabet must cover.
    #[arg(long, default_value_t = 0.9995)]
    coverage: f64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

pub fn train_tokenizer(a: TrainTokenizerArgs) -> CmdResult {
    let config = json!({ "vocab_size": a.vocab_size, "coverage": a.coverage, "corpus": a.corpus });
    let manifest = RunManifest::start(
        "train-tokenizer",
        Vec::new(),
        config,
        a.common.seed.unwrap_or(0),
        a.common.deterministic,
    );
    let corpus = read_tokenizer_corpus(&a.corpus)?;
    let vocab = train_vocab(&corpus, a.vocab_size, a.coverage)?;
    create_parent(&a.out)?;
    vocab.save(&a.out)?;
    manifest.finish(vec![a.out.clone()], &manifest_path_for_file(&a.out))?;
    eprintln!("vocabulary of {} pieces written to {}", vocab.len(), a.out.display());
    Ok(Outcome::Done)
}

// ----------------------------------------------------------------- training

/// Contents of a `--config` file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
}

#[derive(Args, Clone, Debug)]
pub struct TrainOverrides {
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    peak_lr: Option<f64>,
    #[arg(long)]
    warmup_frac: Option<f64>,
    #[arg(long)]
    update_frequency: Option<usize>,
    #[arg(long)]
    batch_tokens: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Model dropout, used when the train config has no dropout schedule.
    #[arg(long)]
    dropout: Option<f64>,
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Applies flag overrides; `--seed` sets both the training and noise seeds.
fn resolve(
    mut cfg: RunConfig,
    default_train: TrainConfig,
    o: &TrainOverrides,
    common: &Common,
    vocab: &Vocabulary,
) -> Result<(ModelConfig, TrainConfig, NoiseConfig), CliError> {
    let mut model = cfg.model.clone();
    model.vocab_size = vocab.len();
    if let Some(d) = o.dropout {
        model.dropout = d;
    }
    let mut train = cfg.train.take().unwrap_or(default_train);
    if let Some(e) = o.epochs {
        train.epochs = e;
        if cfg.train.is_none() && !train.dropout_schedule.is_empty() {
            train.dropout_schedule = TrainConfig::pretrain_default(e).dropout_schedule;
        }
    }
    if o.total_steps.is_some() {
        train.total_steps = o.total_steps;
    }
    if let Some(x) = o.peak_lr {
        train.peak_lr = x;
    }
    if let Some(x) = o.warmup_frac {
        train.warmup_frac = x;
    }
    if let Some(x) = o.update_frequency {
        train.update_frequency = x;
    }
    if let Some(x) = o.batch_tokens {
        train.batch_tokens = x;
    }
    if o.checkpoint_every.is_some() {
        train.checkpoint_every = o.checkpoint_every;
    }
    let mut noise = cfg.noise.take().unwrap_or_default();
    if let Some(s) = common.seed {
        train.seed = s;
        noise.seed = s;
    }
    model.validate()?;
    train.validate()?;
    noise.validate()?;
    Ok((model, train, noise))
}

fn stop_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let handler_flag = flag.clone();
    // a second registration in one process fails; training then simply
    // cannot be interrupted gracefully
    let _ = ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst));
    flag
}

fn finish_training(
    outcome: &TrainOutcome,
    selected: Option<&Path>,
    out: &Path,
    manifest: RunManifest,
) -> CmdResult {
    let final_ckpt = outcome
        .final_checkpoint
        .clone()
        .unwrap_or_else(|| out.join(checkpoint_file_name(outcome.trainer.step())));
    let model = out.join("model.bin");
    fs::copy(selected.unwrap_or(&final_ckpt), &model)?;
    let mut outputs = vec![out.join("metrics.csv"), final_ckpt.clone(), model];
    outputs.extend(outcome.best_checkpoint.clone());
    manifest.finish(outputs, &out.join("manifest.json"))?;
    if outcome.interrupted {
        return Ok(Outcome::Interrupted(final_ckpt));
    }
    if let Some(last) = outcome.log.last() {
        eprintln!("trained to step {} (loss {:.4})", last.step, last.loss);
    }
    Ok(Outcome::Done)
}

#[derive(Args)]
pub struct PretrainArgs {
    /// JSON file with `model`, optional `train` and optional `noise`.
    #[arg(long)]
    config: PathBuf,
    /// Text file with one document per line, or a `.jsonl` corpus.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Output directory for checkpoints, metrics.csv and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[command(flatten)]
    common: Common,
}

pub fn pretrain(a: PretrainArgs) -> CmdResult {
    let vocab = load_vocab(&a.vocab)?;
    let cfg = load_config(&a.config)?;
    let (model, train, noise) = resolve(cfg, TrainConfig::pretrain_default(10), &a.overrides, &a.common, &vocab)?;
    let docs = read_documents(&a.corpus)?;
    create_dir(&a.out)?;
    let effective = json!({ "model": model, "train": train, "noise": noise, "corpus": a.corpus, "vocab": a.vocab, "resume": a.resume });
    let manifest = RunManifest::start("pretrain", vec![a.config.clone()], effective, train.seed, a.common.deterministic);
    let start = match &a.resume {
        Some(path) => Start::Resume(Checkpoint::load_compatible(path, &model)?),
        None => Start::Fresh,
    };
    let opts = RunOptions {
        out_dir: Some(a.out.clone()),
        deterministic: a.common.deterministic,
        stop: Some(stop_flag()),
        ..RunOptions::default()
    };
    let outcome = optim::pretrain(&docs, &vocab, &model, &train, &noise, start, &opts)?;
    finish_training(&outcome, None, &a.out, manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Select {
    /// The last checkpoint.
    Final,
    /// The epoch-end checkpoint with the lowest validation loss.
    Best,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    config: PathBuf,
    /// JSONL training examples.
    #[arg(long)]
    train: PathBuf,
    /// JSONL validation examples, scored at each epoch end.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pretrained checkpoint to start from; optimizer state starts fresh.
    #[arg(long, conflicts_with = "resume")]
    init: Option<PathBuf>,
    /// Continue an interrupted finetuning run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Which checkpoint becomes `model.bin`.
    #[arg(long, value_enum, default_value_t = Select::Final)]
    select: Select,
    #[command(flatten)]
    overrides: TrainOverrides,
    #[command(flatten)]
    common: Common,
}

fn validation_batches(path: &Path, vocab: &Vocabulary, max_positions: usize) -> Result<Vec<Batch>, CliError> {
    let pairs: Vec<(String, String)> = read_examples(path)?.into_iter().map(|e| (e.document, e.summary)).collect();
    let source = FinetuneSource::new(&pairs, vocab, max_positions);
    source
        .pairs()
        .chunks(16)
        .map(|c| Batch::from_pairs(c).map_err(CliError::from))
        .collect()
}

pub fn finetune(a: FinetuneArgs) -> CmdResult {
    let vocab = load_vocab(&a.vocab)?;
    let cfg = load_config(&a.config)?;
    let (model, train, _) = resolve(cfg, TrainConfig::finetune_default(), &a.overrides, &a.common, &vocab)?;
    if a.select == Select::Best && a.valid.is_none() {
        return Err(CliError::Config("--select best needs --valid".into()));
    }
    let examples = read_examples(&a.train)?;
    let pairs: Vec<(String, String)> = examples.into_iter().map(|e| (e.document, e.summary)).collect();
    let validation = match &a.valid {
        Some(p) => validation_batches(p, &vocab, model.max_positions)?,
        None => Vec::new(),
    };
    create_dir(&a.out)?;
    let effective = json!({
        "model": model, "train": train, "train_data": a.train, "valid_data": a.valid,
        "vocab": a.vocab, "init": a.init, "resume": a.resume, "select": format!("{:?}", a.select),
    });
    let manifest = RunManifest::start("finetune", vec![a.config.clone()], effective, train.seed, a.common.deterministic);
    let start = if let Some(path) = &a.resume {
        Start::Resume(Checkpoint::load_compatible(path, &model)?)
    } else if let Some(path) = &a.init {
        Start::Params(Checkpoint::load_compatible(path, &model)?.params)
    } else {
        Start::Fresh
    };
    let opts = RunOptions {
        out_dir: Some(a.out.clone()),
        deterministic: a.common.deterministic,
        stop: Some(stop_flag()),
        validation,
        ..RunOptions::default()
    };
    let outcome = optim::finetune(&pairs, &vocab, &model, &train, start, &opts)?;
    let selected = match a.select {
        Select::Best => outcome.best_checkpoint.clone(),
        Select::Final => None,
    };
    finish_training(&outcome, selected.as_deref(), &a.out, manifest)
}

// --------------------------------------------------------------- generation

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// JSONL with `id` and `document` on each line.
    #[arg(long)]
    input: PathBuf,
    /// JSONL output of {"id", "hypothesis", "score"}.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    beam: usize,
    /// Generated tokens per summary, eos included. Defaults to three times
    /// the mean tokenized summary length of the input when it has
    /// summaries, else 64, capped by the model's positions.
    #[arg(long)]
    max_length: Option<usize>,
    #[arg(long, default_value_t = 1)]
    min_length: usize,
    #[arg(long, default_value_t = 0.0)]
    length_penalty: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Deserialize)]
struct GenerateInput {
    id: serde_json::Value,
    document: String,
    #[serde(default)]
    summary: Option<String>,
}

#[derive(Serialize)]
struct GenerateOutput<'a> {
    id: &'a str,
    hypothesis: String,
    score: f64,
}

fn id_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn generate(a: GenerateArgs) -> CmdResult {
    let vocab = load_vocab(&a.vocab)?;
    let ckpt = Checkpoint::load(&a.checkpoint).map_err(|e| CliError::Data(format!("{}: {e}", a.checkpoint.display())))?;
    let cfg = ckpt.config.clone();
    if cfg.vocab_size != vocab.len() {
        return Err(CliError::Config(format!(
            "checkpoint vocabulary of {} does not match {} pieces in {}",
            cfg.vocab_size,
            vocab.len(),
            a.vocab.display()
        )));
    }
    let text = read_text(&a.input)?;
    let mut inputs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: GenerateInput = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", a.input.display(), i + 1)))?;
        inputs.push(item);
    }
    let max_length = match a.max_length {
        Some(m) => m,
        None if !inputs.is_empty() && inputs.iter().all(|x| x.summary.is_some()) => {
            let total: usize = inputs
                .iter()
                .map(|x| vocab.encode(x.summary.as_deref().unwrap_or(""), SeqKind::Source).len())
                .sum();
            (3 * total).div_ceil(inputs.len())
        }
        None => 64,
    }
    .min(cfg.max_positions);
    let beam = BeamConfig {
        beam_size: a.beam,
        max_length,
        length_penalty: a.length_penalty,
        min_length: a.min_length,
    };
    beam.validate()?;
    let effective = json!({ "beam": beam, "checkpoint": a.checkpoint, "vocab": a.vocab, "input": a.input });
    let manifest = RunManifest::start("generate", Vec::new(), effective, a.common.seed.unwrap_or(0), a.common.deterministic);
    create_parent(&a.out)?;
    let mut out = BufWriter::new(File::create(&a.out)?);
    for item in &inputs {
        let mut src = vocab.encode(&item.document, SeqKind::Source).ids;
        if src.len() > cfg.max_positions {
            src.truncate(cfg.max_positions - 1);
            src.push(EOS_ID);
        }
        let mut scorer = TransformerScorer::new(&ckpt.params, &cfg, &src)?;
        let hyp = beam_search(&mut scorer, &beam)?;
        let content: Vec<u32> = hyp
            .tokens
            .ids
            .iter()
            .copied()
            .filter(|&t| t != BOS_ID && t != EOS_ID)
            .collect();
        let record = GenerateOutput {
            id: &id_string(&item.id),
            hypothesis: vocab.decode_ids(&content, true)?,
            score: hyp.score,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    manifest.finish(vec![a.out.clone()], &manifest_path_for_file(&a.out))?;
    Ok(Outcome::Done)
}

// --------------------------------------------------------------- evaluation

#[derive(Args)]
pub struct EvaluateArgs {
    /// Hypotheses: JSONL with `hypothesis` (or `summary`) fields, or one
    /// per line. Repeat for several runs.
    #[arg(long = "hyp", required = true)]
    hyps: Vec<PathBuf>,
    /// References, matched to `--hyp` by position.
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
    /// Dataset name per run; defaults to the reference file stem.
    #[arg(long = "dataset")]
    datasets: Vec<String>,
    /// Model name per run; defaults to the hypothesis file stem.
    #[arg(long = "model")]
    models: Vec<String>,
    /// Output prefix: writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    norm: NormFlags,
    #[command(flatten)]
    common: Common,
}

#[derive(Serialize)]
struct EvaluatedRun {
    dataset: String,
    model: String,
    f1: F1Row,
    evaluation: RunEvaluation,
}

pub fn evaluate(a: EvaluateArgs) -> CmdResult {
    if a.hyps.len() != a.refs.len() {
        return Err(CliError::Config(format!(
            "{} --hyp files for {} --ref files",
            a.hyps.len(),
            a.refs.len()
        )));
    }
    for (flag, names) in [("--dataset", &a.datasets), ("--model", &a.models)] {
        if !names.is_empty() && names.len() != a.hyps.len() {
            return Err(CliError::Config(format!("{flag} must be given once per --hyp or not at all")));
        }
    }
    let rules = a.norm.rules();
    let effective = json!({ "hyp": a.hyps, "ref": a.refs, "dataset": a.datasets, "model": a.models, "norm": a.norm.to_json() });
    let manifest = RunManifest::start("evaluate", Vec::new(), effective, a.common.seed.unwrap_or(0), a.common.deterministic);
    let mut runs = Vec::new();
    for (i, (hp, rp)) in a.hyps.iter().zip(&a.refs).enumerate() {
        let hyps = read_texts(hp, &["hypothesis", "summary"])?;
        let refs = read_texts(rp, &["summary", "reference"])?;
        for (k, (h, r)) in hyps.iter().zip(&refs).enumerate() {
            if let (Some(hid), Some(rid)) = (&h.0, &r.0) {
                if hid != rid {
                    return Err(CliError::Data(format!("entry {}: hypothesis id {hid} but reference id {rid}", k + 1)));
                }
            }
        }
        let h: Vec<&str> = hyps.iter().map(|x| x.1.as_str()).collect();
        let r: Vec<&str> = refs.iter().map(|x| x.1.as_str()).collect();
        let evaluation = evaluate_run(&h, &r, &rules)?;
        runs.push(EvaluatedRun {
            dataset: a.datasets.get(i).cloned().unwrap_or_else(|| stem(rp)),
            model: a.models.get(i).cloned().unwrap_or_else(|| stem(hp)),
            f1: evaluation.f1(),
            evaluation,
        });
    }
    let mut rows: Vec<(String, String, F1Row)> = runs.iter().map(|r| (r.dataset.clone(), r.model.clone(), r.f1)).collect();
    let macro_row = if runs.len() > 1 {
        macro_average(&runs.iter().map(|r| r.f1).collect::<Vec<_>>())
    } else {
        None
    };
    if let Some(m) = macro_row {
        rows.push(("macro-average".into(), "all".into(), m));
    }
    let csv_path = with_ext(&a.out, "csv");
    let json_path = with_ext(&a.out, "json");
    create_parent(&csv_path)?;
    let csv = render_rouge_csv(&rows);
    fs::write(&csv_path, &csv)?;
    let report = json!({ "runs": runs, "macro_average": macro_row });
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")?;
    print!("{csv}");
    manifest.finish(vec![csv_path.clone(), json_path], &manifest_path_for_file(&csv_path))?;
    Ok(Outcome::Done)
}

// -------------------------------------------------------------------- stats

#[derive(Args)]
pub struct StatsArgs {
    /// JSONL datasets; repeat for several columns.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Column name per input; defaults to the file stem.
    #[arg(long = "name")]
    names: Vec<String>,
    /// Apply evaluation normalization before counting.
    #[arg(long)]
    normalize: bool,
    /// Output prefix: writes `<out>.txt`, `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

pub fn stats(a: StatsArgs) -> CmdResult {
    if !a.names.is_empty() && a.names.len() != a.inputs.len() {
        return Err(CliError::Config("--name must be given once per --input or not at all".into()));
    }
    let effective = json!({ "inputs": a.inputs, "names": a.names, "normalize": a.normalize });
    let manifest = RunManifest::start("stats", Vec::new(), effective, a.common.seed.unwrap_or(0), a.common.deterministic);
    let rules = NormRules::default();
    let mut columns = Vec::new();
    for (i, path) in a.inputs.iter().enumerate() {
        let examples = read_examples(path)?;
        let prep = |t: &str| if a.normalize { normalize_eval(t, &rules) } else { t.to_string() };
        let pairs = examples.iter().map(|e| (prep(&e.document), prep(&e.summary)));
        let stats = corpus_stats(pairs)?;
        columns.push((a.names.get(i).cloned().unwrap_or_else(|| stem(path)), stats));
    }
    let txt = with_ext(&a.out, "txt");
    let csv = with_ext(&a.out, "csv");
    let js = with_ext(&a.out, "json");
    create_parent(&txt)?;
    let table = render_stats_table(&columns);
    fs::write(&txt, &table)?;
    fs::write(&csv, render_stats_csv(&columns))?;
    let report: serde_json::Map<String, serde_json::Value> = columns
        .iter()
        .map(|(n, s)| (n.clone(), serde_json::to_value(s).expect("stats serialize")))
        .collect();
    fs::write(&js, serde_json::to_string_pretty(&report)? + "\n")?;
    print!("{table}");
    manifest.finish(vec![txt.clone(), csv, js], &manifest_path_for_file(&txt))?;
    Ok(Outcome::Done)
}

// ---------------------------------------------------------------- normalize

#[derive(Args)]
pub struct NormalizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    norm: NormFlags,
    #[command(flatten)]
    common: Common,
}

pub fn normalize(a: NormalizeArgs) -> CmdResult {
    let rules = a.norm.rules();
    let effective = json!({ "input": a.input, "norm": a.norm.to_json() });
    let manifest = RunManifest::start("normalize", Vec::new(), effective, a.common.seed.unwrap_or(0), a.common.deterministic);
    let text = read_text(&a.input)?;
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        out.push_str(&normalize_eval(line, &rules));
        out.push('\n');
    }
    create_parent(&a.out)?;
    fs::write(&a.out, out)?;
    manifest.finish(vec![a.out.clone()], &manifest_path_for_file(&a.out))?;
    Ok(Outcome::Done)
}

// ----------------------------------------------------------- split and mix

#[derive(Args)]
pub struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    train_n: usize,
    #[arg(long)]
    valid_n: usize,
    #[arg(long)]
    test_n: usize,
    /// Directory for `{train,valid,test}.jsonl` and `.ids` manifests.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

pub fn split(a: SplitArgs) -> CmdResult {
    let spec = SplitSpec {
        train_n: a.train_n,
        valid_n: a.valid_n,
        test_n: a.test_n,
        seed: a.common.seed.unwrap_or(0),
    };
    let manifest = RunManifest::start(
        "split",
        Vec::new(),
        json!({ "input": a.input, "spec": spec }),
        spec.seed,
        a.common.deterministic,
    );
    let examples = read_examples(&a.input)?;
    let splits = make_splits(&examples, &spec)?;
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    for (name, part) in [("train", &splits.train), ("valid", &splits.valid), ("test", &splits.test)] {
        let data = a.out.join(format!("{name}.jsonl"));
        let ids = a.out.join(format!("{name}.ids"));
        write_jsonl(part, BufWriter::new(File::create(&data)?))?;
        write_manifest(part, BufWriter::new(File::create(&ids)?))?;
        outputs.extend([data, ids]);
    }
    manifest.finish(outputs, &a.out.join("manifest.json"))?;
    Ok(Outcome::Done)
}

#[derive(Args)]
pub struct MixArgs {
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    total: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Common,
}

pub fn mix(a: MixArgs) -> CmdResult {
    let seed = a.common.seed.unwrap_or(0);
    let manifest = RunManifest::start(
        "mix",
        Vec::new(),
        json!({ "inputs": a.inputs, "total": a.total }),
        seed,
        a.common.deterministic,
    );
    let datasets = a
        .inputs
        .iter()
        .map(|p| read_examples(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mixed = make_mix(&datasets, a.total, seed)?;
    create_parent(&a.out)?;
    write_jsonl(&mixed, BufWriter::new(File::create(&a.out)?))?;
    manifest.finish(vec![a.out.clone()], &manifest_path_for_file(&a.out))?;
    Ok(Outcome::Done)
}
